"""``flab`` command line.

Heavy modules are imported after argument parsing so that ``--threads``
can take effect before numpy and jax start their thread pools.
"""

import argparse
import json
import os
import sys


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--dump-mesh", metavar="PATH", default=d, help="write the mesh to PATH")
    p.add_argument("--dump-field", metavar="PATH", default=d,
                   help="write the eigenfield (or the test field) to PATH")
    p.add_argument("--load-field", metavar="PATH", default=d,
                   help="initial field for eigen, test field for check-bochner")
    p.add_argument("--threads", type=int, metavar="N", default=d, help="limit worker threads")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    p = argparse.ArgumentParser(prog="flab", description="Finsler first-eigenvalue laboratory")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run all stages listed in the config"),
                       ("scan", "curvature scan only"),
                       ("eigen", "first eigenpair only"),
                       ("check-bochner", "Bochner identity residuals")):
        c = sub.add_parser(name, parents=[common], help=text)
        c.add_argument("config")
        c.add_argument("--out", default=".", help="directory for report.json and report.csv")
    ps = sub.add_parser("psi", parents=[common], help="auxiliary integral for given a and delta")
    ps.add_argument("--a", type=float, required=True)
    ps.add_argument("--delta", type=float, required=True)
    return p


def _limit_threads(n):
    n = str(int(n))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = n
    flags = os.environ.get("XLA_FLAGS", "")
    if int(n) == 1:
        os.environ["XLA_FLAGS"] = (flags + " --xla_cpu_multi_thread_eigen=false").strip()


STAGES = {"run": None, "scan": ["scan"], "eigen": ["eigen"], "check-bochner": ["bochner"]}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 1
        _limit_threads(args.threads)

    from . import bounds, calculus, domain, experiment
    from .errors import FinslerError

    if args.command == "psi":
        try:
            val = bounds.zhong_yang_integral(args.a, args.delta)
            out = {"a_eps": args.a, "delta": args.delta, "integral": val,
                   "lower_bound": 3.141592653589793 - 2 * args.delta,
                   "psi_at_ends": [bounds.zhong_yang_psi(-1.5707963267948966 + args.delta),
                                   bounds.zhong_yang_psi(1.5707963267948966 - args.delta)]}
        except FinslerError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(json.dumps(out, sort_keys=True))
        return 0

    initial = None
    if args.load_field:
        try:
            initial = calculus.read_field(args.load_field)
        except (OSError, ValueError) as exc:
            print(f"error: cannot read field: {exc}", file=sys.stderr)
            return 1
    code, ex, paths = experiment.run_experiment(args.config, args.out, STAGES[args.command], initial)
    if ex is not None:
        if args.dump_mesh:
            domain.write_mesh(ex.mesh, args.dump_mesh)
        if args.dump_field:
            u = ex.eigenfield if ex.eigenfield is not None else ex.fields.get("test")
            if u is not None:
                calculus.write_field(args.dump_field, u)
        for e in ex.errors:
            print(f"error in stage {e['stage']}: {e['type']}: {e['message']}", file=sys.stderr)
        summary = experiment.report(ex)["results"]
        print(json.dumps({"exit_code": code, "reports": list(paths),
                          "stages": sorted(summary)}, sort_keys=True))
    else:
        with open(paths[0]) as fh:
            for e in json.load(fh)["errors"]:
                print(f"error: {e['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
