"""Shared flag handling for the one-script-per-figure entry points."""

from __future__ import annotations

import argparse

from .figures import FigureSpec, render


def run(kind: str, description: str, argv=None) -> int:
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--in", dest="inputs", required=True, action="append",
                    help="input CSV (repeatable)")
    ap.add_argument("--out", required=True, help="output image path")
    ap.add_argument("--policies", default="", help="comma list keeping only these")
    ap.add_argument("--xlabel", default="")
    ap.add_argument("--ylabel", default="")
    args = ap.parse_args(argv)
    policies = [p for p in args.policies.split(",") if p]
    spec = FigureSpec(inputs=args.inputs, kind=kind, output=args.out,
                      policies=policies, xlabel=args.xlabel, ylabel=args.ylabel)
    render(spec)
    print(f"wrote {args.out}")
    return 0
