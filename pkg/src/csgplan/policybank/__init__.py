"""Simulated tabletop world, scripted demonstrations and the policy-bank server."""
