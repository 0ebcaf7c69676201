"""Command-line entry point.

Exit codes:
  0  success
  1  other error
  2  usage error
  3  parse or validation error in an input file
  4  I/O error (missing or unreadable file)
  5  connection or protocol error with the policy bank
  6  pipeline error (reported with the module it came from)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import CsgError, HistoryError, ParseError, ProtocolError, StreamError, ValidationError
from .learner import read_action_log, write_action_log
from .pipeline import Ingestor, PipelineError, learn
from .stream import open_stream

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_CONNECTION = 5
EXIT_PIPELINE = 6

log = logging.getLogger("csgplan")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", type=Path, help="JSON run config; flags override it")
    g.add_argument("--theta", type=int, help="refinement window (frames); default 3")
    g.add_argument("--zeta", type=int, help="action extraction window (frames); default 10")
    g.add_argument("--sigma", type=float, help="confidence gain on re-detection; default 0.5")
    g.add_argument("--alpha", type=float, help="detection confidence floor; default 0.194")
    g.add_argument("--seed", type=int, help="random seed; default 0")
    g.add_argument(
        "--qsr",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="derive relations from geometry (default) or read them from the stream (--no-qsr)",
    )
    g.add_argument("--retries", type=int, help="retries per failed step; 0 disables the fallback; default 3")
    g.add_argument("--port", type=int, default=7878, help="policy bank TCP port; default 7878")
    g.add_argument("--host", default="127.0.0.1", help="policy bank host; default 127.0.0.1")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _config(args) -> RunConfig:
    """Config file values, then flags; validated once after merging."""
    values = {}
    if args.config:
        values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(values, dict):
            raise ValidationError("config", "expected a JSON object")
    flags = dict(
        theta=args.theta,
        zeta=args.zeta,
        sigma=args.sigma,
        alpha=args.alpha,
        seed=args.seed,
        qsr=args.qsr,
        max_retries=args.retries,
    )
    values.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig.from_dict(values)


# ------------------------------------------------------------------ commands


def cmd_learn(args) -> int:
    cfg = _config(args)
    if args.domain_name:
        cfg = cfg.with_overrides(domain_name=args.domain_name)
    src = Path(args.input)
    res = learn(open_stream(src), cfg)
    stem = src.with_suffix("")
    log_path = Path(args.log) if args.log else stem.with_suffix(".actions.jsonl")
    write_action_log(log_path, res.schedule)
    n = len(res.domain_actions)
    print(f"{n} actions ({len(res.schedule)} in schedule, {res.frames} frames)")
    if res.domain is None:
        print("warning: no actions extracted; domain file not written", file=sys.stderr)
        return EXIT_OK
    out = Path(args.output) if args.output else stem.with_suffix(".pddl")
    out.write_text(res.domain_text, encoding="utf-8")
    print(f"domain: {out}\naction log: {log_path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .policybank.demo import DemoTiming, NoiseConfig, generate_demonstration, load_script
    from .stream import write_stream

    cfg = _config(args)
    script = load_script(args.script)
    noise = NoiseConfig(args.label_noise, args.jitter, args.emit_relations)
    frames = generate_demonstration(script, seed=cfg.seed, noise=noise, timing=DemoTiming(tail=args.tail))
    n = write_stream(args.output, frames)
    print(f"{n} frames, {len(script)} moves, seed {cfg.seed}: {args.output}")
    return EXIT_OK


def _bank(args, cfg):
    from .policybank.server import PolicyBank
    from .policybank.world import WorldState, default_policies, load_world_config

    if args.world_config:
        world, policies, obj = load_world_config(args.world_config)
        return PolicyBank(world, policies, int(obj.get("retreat_frames", 20)))
    return PolicyBank(WorldState(seed=cfg.seed), default_policies())


def cmd_serve(args) -> int:
    from .policybank.server import serve

    cfg = _config(args)
    bank = _bank(args, cfg)
    try:
        serve(bank, args.host, args.port, args.frame_interval)
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _load_actions(path: Path):
    """Action log (JSON lines) or a PDDL domain, by content."""
    from .pddl import parse_domain

    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith(("(", ";")):
        return list(parse_domain(text).actions)
    return read_action_log(path)


def cmd_orchestrate(args) -> int:
    from .orchestrator import SkillMap, build_schedule, execute_plan
    from .policybank.client import PolicyBankClient

    cfg = _config(args)
    actions = _load_actions(Path(args.plan))
    skills = SkillMap.load(args.skills) if args.skills else SkillMap.default()
    plan = build_schedule(actions, skills, cfg.max_retries)
    with PolicyBankClient(args.host, args.port) as client:
        report = execute_plan(plan, client, Ingestor(cfg))
    print(report.summary())
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    if report.aborted:
        print(f"error: {report.error}", file=sys.stderr)
        return EXIT_CONNECTION
    return EXIT_OK


def cmd_mine_ontology(args) -> int:
    from .pddl import mine_ontology

    cfg = _config(args)
    onto = mine_ontology(_load_actions(Path(args.log)), cfg.agent_classes)
    text = onto.to_json()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_replay(args) -> int:
    cfg = _config(args)
    ing = Ingestor(cfg)
    for f in open_stream(args.input):
        ing.ingest(f)
    Path(args.dump).write_text(json.dumps(ing.graph.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{ing.frames} frames, {len(ing.graph.nodes)} nodes, {len(ing.graph.pairs)} pairs: {args.dump}")
    return EXIT_OK


def cmd_eval_chain(args) -> int:
    from .evaluation import eval_chain

    cfg = _config(args)
    probs = {}
    for item in args.p or []:
        name, _, value = item.partition("=")
        try:
            probs[name] = float(value)
        except ValueError:
            raise ValidationError("--p", f"expected name=probability, got {item!r}") from None
    retries = 0 if args.retries is None else args.retries
    res = eval_chain(args.skills, args.episodes, retries, cfg.seed, probs, cfg.with_overrides(max_retries=retries))
    print(res.summary())
    if args.json:
        Path(args.json).write_text(json.dumps(res.to_dict(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="csgplan",
        description="Learn PDDL actions from scene-graph streams and replay them through a policy bank.",
        epilog="Exit codes: 0 ok, 1 other, 2 usage, 3 parse, 4 I/O, 5 connection, 6 pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", parents=[common], help="demonstration stream -> PDDL domain + action log")
    p.add_argument("input", help="frame stream (JSON lines)")
    p.add_argument("-o", "--output", help="domain path; default <input>.pddl")
    p.add_argument("--log", help="action log path; default <input>.actions.jsonl")
    p.add_argument("--domain-name", help="PDDL domain name")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("simulate", parents=[common], help="script -> simulated demonstration stream")
    p.add_argument("script", help='JSON script: {"moves": [["knife", "right_of"], ...]}')
    p.add_argument("-o", "--output", required=True, help="output stream path")
    p.add_argument("--label-noise", type=float, default=0.0, help="per-frame spatial label flip probability")
    p.add_argument("--jitter", type=float, default=0.0, help="bbox jitter standard deviation")
    p.add_argument("--emit-relations", action="store_true", help="write ground-truth relations into frames")
    p.add_argument("--tail", type=int, default=30, help="idle frames after the last move")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", parents=[common], help="run the simulated policy bank")
    p.add_argument("--world-config", help="JSON world config (seed, policies, retreat_frames)")
    p.add_argument("--frame-interval", type=float, default=0.0, help="seconds between streamed frames")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("orchestrate", parents=[common], help="execute a learned plan through a policy bank")
    p.add_argument("plan", help="action log (JSON lines) or PDDL domain")
    p.add_argument("--skills", help="skill map JSON; default: the six tabletop skills")
    p.add_argument("--report", help="write the execution report as JSON")
    p.set_defaults(func=cmd_orchestrate)

    p = sub.add_parser("mine-ontology", parents=[common], help="movable/static classes from learned actions")
    p.add_argument("log", help="action log (JSON lines) or PDDL domain")
    p.add_argument("-o", "--output", help="write the ontology JSON here too")
    p.set_defaults(func=cmd_mine_ontology)

    p = sub.add_parser("replay", parents=[common], help="ingest a stream and dump the scene graph")
    p.add_argument("input", help="frame stream (JSON lines)")
    p.add_argument("--dump", required=True, help="graph JSON output path")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("eval-chain", parents=[common], help="Monte Carlo learn -> orchestrate over random tasks")
    p.add_argument("--skills", "-K", type=int, required=True, help="skills per task (even; two per move)")
    p.add_argument("--episodes", "-N", type=int, default=1000, help="number of sampled tasks")
    p.add_argument("--p", action="append", metavar="POLICY=PROB", help="override a policy success probability")
    p.add_argument("--json", help="write the result as JSON")
    p.set_defaults(func=cmd_eval_chain)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PIPELINE
    except HistoryError as e:
        print(f"error: [csg] {e}", file=sys.stderr)
        return EXIT_PIPELINE
    except ProtocolError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONNECTION
    except (ParseError, ValidationError, StreamError) as e:
        # A missing input surfaces from the stream reader as StreamError.
        code = EXIT_IO if isinstance(e.__cause__, OSError) else EXIT_PARSE
        print(f"error: {e}", file=sys.stderr)
        return code
    except json.JSONDecodeError as e:
        print(f"error: invalid JSON: {e}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except CsgError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
