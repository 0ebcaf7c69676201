"""PDDL domain emission, a parser for the emitted subset, and ontology mining.

Emitted domains use STRIPS with typing: conjunctive preconditions, conjunctive
effects with negation.  Observed classes become subtypes of ``agent`` or
``object`` depending on the node kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import PddlError
from .learner import Atom, GroundedAction, LiftedAction, pddl_name

DEFAULT_AGENT_CLASSES = frozenset({"person", "hand"})
MAX_NAME_SUFFIX = 999


@dataclass(frozen=True)
class Domain:
    name: str
    types: tuple[tuple[str, str], ...]
    predicates: tuple[tuple[str, int], ...]
    actions: tuple[LiftedAction, ...]
    constants: tuple[tuple[str, str], ...] = ()

    @property
    def type_parents(self) -> dict[str, str]:
        return dict(self.types)


def build_domain(
    actions: Sequence[LiftedAction],
    name: str = "learned",
    agent_classes: Iterable[str] = DEFAULT_AGENT_CLASSES,
) -> Domain:
    """The Domain that ``emit_domain`` renders for ``actions``.

    Actions are ordered by trigger time (stable); colliding names get
    ``_1`` .. ``_999`` suffixes.
    """
    if not actions:
        raise PddlError("cannot build a domain without actions")
    agents = {pddl_name(c) for c in agent_classes}
    ordered = sorted(
        enumerate(actions), key=lambda ia: (ia[1].trigger_time is None, ia[1].trigger_time or 0, ia[0])
    )
    used: set[str] = set()
    renamed = []
    for _, a in ordered:
        new = a.name
        if new in used:
            for i in range(1, MAX_NAME_SUFFIX + 1):
                cand = f"{a.name}_{i}"
                if cand not in used:
                    new = cand
                    break
            else:
                raise PddlError(f"more than {MAX_NAME_SUFFIX} actions named {a.name!r}")
        used.add(new)
        renamed.append(LiftedAction(new, a.parameters, a.precondition, a.effect, a.trigger_time))

    types = {"agent": "object"}
    arity: dict[str, int] = {}
    for a in renamed:
        for _, cls in a.parameters:
            types[cls] = "agent" if cls in agents else "object"
        for atom in a.precondition + a.effect:
            prev = arity.setdefault(atom.predicate, len(atom.args))
            if prev != len(atom.args):
                raise PddlError(f"predicate {atom.predicate!r} used with arities {prev} and {len(atom.args)}")
    return Domain(
        name=pddl_name(name),
        types=tuple(sorted(types.items())),
        predicates=tuple(sorted(arity.items())),
        actions=tuple(renamed),
    )


def _atom_text(a: Atom) -> str:
    body = f"({a.predicate} {' '.join(a.args)})"
    return f"(not {body})" if a.negated else body


def _formula(atoms: Sequence[Atom]) -> str:
    return "(and " + " ".join(_atom_text(a) for a in atoms) + ")"


def render_domain(d: Domain) -> str:
    lines = [
        ";; Learned planning domain.",
        ";; The last precondition of each action is its functional trigger;",
        ";; the trigger is negated in the effects (the agent releases the object).",
        f"(define (domain {d.name})",
        "  (:requirements :strips :typing)",
        "  (:types",
    ]
    by_parent: dict[str, list[str]] = {}
    for t, parent in d.types:
        by_parent.setdefault(parent, []).append(t)
    for parent in sorted(by_parent):
        lines.append(f"    {' '.join(sorted(by_parent[parent]))} - {parent}")
    lines[-1] += ")"
    if d.constants:
        lines.append("  (:constants " + " ".join(f"{c} - {t}" for c, t in d.constants) + ")")
    lines.append("  (:predicates")
    argnames = "?s ?o ?a ?b ?c ?d ?e ?f".split()
    for p, n in d.predicates:
        lines.append(f"    ({p} {' '.join(argnames[:n])})" if n else f"    ({p})")
    lines[-1] += ")"
    for a in d.actions:
        params = " ".join(f"{v} - {t}" for v, t in a.parameters)
        lines.append(f"  (:action {a.name}")
        lines.append(f"    :parameters ({params})")
        lines.append(f"    :precondition {_formula(a.precondition)}")
        lines.append(f"    :effect {_formula(a.effect)})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def emit_domain(
    actions: Sequence[LiftedAction],
    name: str = "learned",
    agent_classes: Iterable[str] = DEFAULT_AGENT_CLASSES,
) -> str:
    return render_domain(build_domain(actions, name, agent_classes))


# ---------------------------------------------------------------------- parser


@dataclass
class _Tok:
    text: str
    line: int
    col: int


@dataclass
class _List:
    items: list = field(default_factory=list)
    line: int = 0
    col: int = 0


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            i += 1
            col += 1
            continue
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch in "()":
            toks.append(_Tok(ch, line, col))
            i += 1
            col += 1
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in "();":
            j += 1
        toks.append(_Tok(text[i:j].lower(), line, col))
        col += j - i
        i = j
    return toks


def _read(toks: list[_Tok]) -> _List:
    stack: list[_List] = []
    root = None
    for tok in toks:
        if tok.text == "(":
            node = _List([], tok.line, tok.col)
            if stack:
                stack[-1].items.append(node)
            elif root is not None:
                raise PddlError("content after the domain definition", tok.line, tok.col)
            else:
                root = node
            stack.append(node)
        elif tok.text == ")":
            if not stack:
                raise PddlError("unbalanced ')'", tok.line, tok.col)
            stack.pop()
        else:
            if not stack:
                raise PddlError(f"unexpected token {tok.text!r} outside parentheses", tok.line, tok.col)
            stack[-1].items.append(tok)
    if stack:
        raise PddlError("unbalanced '(': missing ')'", stack[-1].line, stack[-1].col)
    if root is None:
        raise PddlError("empty document", 1, 1)
    return root


def _sym(node, what: str) -> str:
    if not isinstance(node, _Tok):
        raise PddlError(f"expected {what}, found a list", node.line, node.col)
    return node.text


def _typed_list(items: list, where: _List) -> list[tuple[str, str]]:
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    i = 0
    while i < len(items):
        name = _sym(items[i], "a name")
        if name == "-":
            if i + 1 >= len(items):
                raise PddlError("'-' without a type", items[i].line, items[i].col)
            parent = _sym(items[i + 1], "a type")
            if not pending:
                raise PddlError("'-' without names before it", items[i].line, items[i].col)
            out.extend((p, parent) for p in pending)
            pending = []
            i += 2
            continue
        pending.append(name)
        i += 1
    out.extend((p, "object") for p in pending)
    return out


def _atoms(node, allow_negation: bool, ctx: str) -> list[tuple[Atom, object]]:
    if isinstance(node, _Tok):
        raise PddlError(f"malformed {ctx}: expected a formula", node.line, node.col)
    if not node.items:
        raise PddlError(f"malformed {ctx}: empty formula", node.line, node.col)
    head = node.items[0]
    if isinstance(head, _Tok) and head.text == "and":
        out = []
        for sub in node.items[1:]:
            out.extend(_atoms(sub, allow_negation, ctx))
        return out
    if isinstance(head, _Tok) and head.text == "not":
        if not allow_negation:
            raise PddlError(f"negation not supported in {ctx}", node.line, node.col)
        if len(node.items) != 2 or isinstance(node.items[1], _Tok):
            raise PddlError(f"malformed negation in {ctx}", node.line, node.col)
        inner = _atoms(node.items[1], False, ctx)
        if len(inner) != 1:
            raise PddlError(f"malformed negation in {ctx}", node.line, node.col)
        a, pos = inner[0]
        return [(Atom(a.predicate, a.args, True), pos)]
    pred = _sym(head, "a predicate")
    args = tuple(_sym(x, "a term") for x in node.items[1:])
    return [(Atom(pred, args), node)]


def parse_domain(text: str) -> Domain:
    """Parse the PDDL subset written by ``emit_domain``.

    Comments and whitespace are insignificant.  Raises PddlError with the
    line and column of the offending element.
    """
    root = _read(_tokenize(text))
    items = root.items
    if not items or not isinstance(items[0], _Tok) or items[0].text != "define":
        raise PddlError("expected (define ...)", root.line, root.col)
    if len(items) < 2 or not isinstance(items[1], _List) or len(items[1].items) != 2:
        raise PddlError("expected (domain <name>)", root.line, root.col)
    if _sym(items[1].items[0], "'domain'") != "domain":
        raise PddlError("expected (domain <name>)", items[1].line, items[1].col)
    name = _sym(items[1].items[1], "a domain name")

    types: dict[str, str] = {}
    constants: list[tuple[str, str]] = []
    predicates: dict[str, int] = {}
    actions: list[LiftedAction] = []
    for sec in items[2:]:
        if not isinstance(sec, _List) or not sec.items:
            raise PddlError("expected a section", sec.line, sec.col)
        key = _sym(sec.items[0], "a section keyword")
        if key == ":requirements":
            continue
        if key == ":types":
            for t, parent in _typed_list(sec.items[1:], sec):
                types[t] = parent
        elif key == ":constants":
            constants.extend(_typed_list(sec.items[1:], sec))
        elif key == ":predicates":
            for p in sec.items[1:]:
                if not isinstance(p, _List) or not p.items:
                    raise PddlError("malformed predicate declaration", p.line, p.col)
                pname = _sym(p.items[0], "a predicate name")
                predicates[pname] = len(_typed_list(p.items[1:], p))
        elif key == ":action":
            actions.append(_parse_action(sec))
        else:
            raise PddlError(f"unsupported section {key!r}", sec.line, sec.col)

    declared = set(types) | {"object"}
    for t, parent in types.items():
        if parent not in declared:
            raise PddlError(f"undeclared type {parent!r} (parent of {t!r})")
    const_names = {c for c, _ in constants}
    for act, positions in actions:
        params = dict(act.parameters)
        for v, t in act.parameters:
            if t not in declared:
                raise PddlError(f"undeclared type {t!r} in action {act.name!r}")
        for atom, pos in positions:
            if atom.predicate not in predicates:
                raise PddlError(f"undeclared predicate {atom.predicate!r} in action {act.name!r}", pos.line, pos.col)
            if predicates[atom.predicate] != len(atom.args):
                raise PddlError(
                    f"predicate {atom.predicate!r} expects {predicates[atom.predicate]} arguments",
                    pos.line,
                    pos.col,
                )
            for arg in atom.args:
                if arg.startswith("?") and arg not in params:
                    raise PddlError(f"unbound variable {arg} in action {act.name!r}", pos.line, pos.col)
                if not arg.startswith("?") and arg not in const_names:
                    raise PddlError(f"undeclared constant {arg!r} in action {act.name!r}", pos.line, pos.col)
    return Domain(
        name=name,
        types=tuple(sorted(types.items())),
        predicates=tuple(sorted(predicates.items())),
        actions=tuple(a for a, _ in actions),
        constants=tuple(constants),
    )


def _parse_action(sec: _List):
    items = sec.items
    if len(items) < 2:
        raise PddlError("action without a name", sec.line, sec.col)
    name = _sym(items[1], "an action name")
    fields: dict[str, object] = {}
    i = 2
    while i < len(items):
        kw = _sym(items[i], "an action keyword")
        if kw not in (":parameters", ":precondition", ":effect"):
            raise PddlError(f"unexpected {kw!r} in action {name!r}", items[i].line, items[i].col)
        if i + 1 >= len(items):
            raise PddlError(f"{kw} without a value in action {name!r}", items[i].line, items[i].col)
        if kw in fields:
            raise PddlError(f"duplicate {kw} in action {name!r}", items[i].line, items[i].col)
        fields[kw] = items[i + 1]
        i += 2
    for kw in (":parameters", ":precondition", ":effect"):
        if kw not in fields:
            raise PddlError(f"action {name!r} lacks {kw}", sec.line, sec.col)
    pnode = fields[":parameters"]
    if not isinstance(pnode, _List):
        raise PddlError(f"malformed parameters in action {name!r}", pnode.line, pnode.col)
    params = _typed_list(pnode.items, pnode)
    for v, _ in params:
        if not v.startswith("?"):
            raise PddlError(f"parameter {v!r} is not a variable in action {name!r}", pnode.line, pnode.col)
    pre = _atoms(fields[":precondition"], False, f"precondition of {name!r}")
    eff = _atoms(fields[":effect"], True, f"effect of {name!r}")
    act = LiftedAction(name, tuple(params), tuple(a for a, _ in pre), tuple(a for a, _ in eff))
    return act, pre + eff


# -------------------------------------------------------------------- ontology


@dataclass(frozen=True)
class Ontology:
    movable: frozenset[str]
    static: frozenset[str]

    def to_dict(self) -> dict:
        return {"movable": sorted(self.movable), "static": sorted(self.static)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def mine_ontology(
    actions: Iterable[GroundedAction | LiftedAction],
    agent_classes: Iterable[str] = DEFAULT_AGENT_CLASSES,
) -> Ontology:
    """Movable classes move in some positive effect; static ones only appear elsewhere."""
    agents = set(agent_classes) | {pddl_name(c) for c in agent_classes}
    movable: set[str] = set()
    mentioned: set[str] = set()
    for a in actions:
        if isinstance(a, GroundedAction):
            cls = a.class_map
            for t in a.effects:
                movable.add(cls[t.subject])
            for t in (*a.preconditions, *a.effects, *a.negated_effects):
                mentioned.add(cls[t.subject])
                mentioned.add(cls[t.object])
        else:
            types = a.types
            for atom in a.effect:
                if not atom.negated and atom.args:
                    movable.add(types.get(atom.args[0], atom.args[0]))
            for atom in (*a.precondition, *a.effect):
                mentioned.update(types.get(x, x) for x in atom.args)
    movable -= agents
    return Ontology(frozenset(movable), frozenset(mentioned - movable - agents))
