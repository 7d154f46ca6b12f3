"""Command line entry point: ``lipext run | oracle | mesh-info``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .geometry import MeshError, load_mesh
from .harness import (
    FIXTURES_ENV,
    OUT_ENV,
    ConfigError,
    ExperimentConfig,
    StudyError,
    builtin_mesh,
    oracle_suite,
    run,
)
from .quadrature import QuadratureSpec


def _parser():
    ap = argparse.ArgumentParser(prog="lipext", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the study described by a YAML config")
    r.add_argument("config", type=Path)
    r.add_argument("--out", type=Path, default=None,
                   help=f"output directory (default: config 'output', else ${OUT_ENV}/<name>)")
    r.add_argument("--deterministic", action="store_true",
                   help="omit timestamps and timings so reruns are byte-identical")
    o = sub.add_parser("oracle", help="recompute derived reference values and diff against fixtures")
    o.add_argument("--fixtures", type=Path,
                   default=Path(os.environ.get(FIXTURES_ENV, "tests/fixtures/derived.json")))
    o.add_argument("--regenerate", action="store_true", help="recompute the references themselves")
    o.add_argument("--group", action="append", choices=["seminorm", "charts", "ratio", "lemmas"],
                   help="restrict to these groups (repeatable)")
    o.add_argument("--far-order", type=int, default=QuadratureSpec.far_order)
    o.add_argument("--near-refinement", type=int, default=QuadratureSpec.near_refinement)
    o.add_argument("--workers", type=int, default=1)
    m = sub.add_parser("mesh-info", help="summary of a builtin mesh or a mesh file")
    m.add_argument("mesh", help="builtin name (with --resolution) or a file path")
    m.add_argument("--resolution", type=int, default=None)
    return ap


def _mesh_info(args):
    if Path(args.mesh).exists():
        mesh = load_mesh(args.mesh)
    else:
        if args.resolution is None:
            raise ValueError("builtin meshes need --resolution")
        mesh = builtin_mesh(args.mesh, args.resolution)
    info = {"k": mesh.k, "n": mesh.n, "vertices": mesh.n_vertices, "simplices": mesh.n_simplices,
            "measure": mesh.total_measure, "mesh_size": mesh.mesh_size, "diameter": mesh.diameter}
    print(json.dumps(info, indent=2))
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = ExperimentConfig.load(args.config)
            status = run(cfg, out=args.out, deterministic=True if args.deterministic else None)
            print("PASS" if status == 0 else "FAIL: hard invariant violated (see summary.txt)")
            return status
        if args.command == "oracle":
            quad = QuadratureSpec(far_order=args.far_order, near_refinement=args.near_refinement,
                                  workers=args.workers)
            groups = tuple(args.group) if args.group else ("seminorm", "charts", "ratio", "lemmas")
            rows = oracle_suite(args.fixtures, quad, regenerate=args.regenerate, groups=groups, log=print)
            bad = [r for r in rows if not r.passed]
            print(f"{len(rows) - len(bad)}/{len(rows)} reference values within tolerance")
            return 0 if not bad else 1
        return _mesh_info(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (StudyError, MeshError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
