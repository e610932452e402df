"""Command-line interface: every command prints one JSON report.

Exit codes are 0 for success and for CAR-consistent verdicts, 2 for
verdicts against CAR (reject, projection residual, bipolar not equal),
and 1 for bad input or runtime failures.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import files
from .coarsening import apply_S, apply_S_star, car_data_density, validate_coarsening
from .dist_core import BaseSpace
from .factorize import ProjectionOptions, car_factorize, smooth_target
from .mechanisms import (
    GridSpec,
    current_status,
    missing_data,
    multiplicative_sampler,
    product_coarsening,
    right_censored,
    sample_car,
    sample_joint,
    subset_coarsening,
)
from .polar import check_extension, polar_M
from .stat_tests import (
    delta_monotone_check,
    kl_compat_test,
    monotone_density_test,
    product_cell_test,
)

EXIT_OK, EXIT_ERROR, EXIT_AGAINST = 0, 1, 2

MECHANISMS = {
    "current-status": current_status,
    "right-censored": right_censored,
    "missing": lambda k: missing_data(BaseSpace.uniform(k)),
    "subset": subset_coarsening,
    "product": lambda k: product_coarsening(BaseSpace.uniform(k), BaseSpace.uniform(k)),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Report usage problems as exceptions so they end up as JSON errors."""

    def error(self, message):
        raise UsageError(message)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"range must look like LO:HI, got {text!r}") from None


# each handler returns (report, exit code)

def cmd_validate(a):
    j = files.load_model(a.model)
    check = validate_coarsening(j, trials=a.trials, seed=a.seed)
    report = {"command": "validate", "y_size": len(j.y_space), "x_size": len(j.x_space),
              "ok": check.ok, **check.to_dict()}
    return report, EXIT_OK if check.ok else EXIT_ERROR


def cmd_make(a):
    j = MECHANISMS[a.mechanism](a.grid)
    model = files.model_to_dict(j)
    if a.output:
        files.write_json(model, a.output)
        return {"command": "make", "mechanism": a.mechanism, "grid": a.grid,
                "output": a.output, "y_size": len(j.y_space), "x_size": len(j.x_space)}, EXIT_OK
    return model, EXIT_OK


def cmd_apply(a):
    j = files.load_model(a.model)
    if a.direction == "forward":
        h = files.load_density(a.density, j.y_space)
        out, labels = apply_S(j, h).values, j.x_space.labels
    else:
        g = files.load_vector(a.density, j.x_space)
        out, labels = apply_S_star(j, g), j.y_space.labels
    return {"command": "apply", "direction": a.direction, "labels": list(labels),
            "values": [float(v) for v in out]}, EXIT_OK


def cmd_polar(a):
    j = files.load_model(a.model)
    desc = polar_M(j)
    return {"command": "polar", **desc.to_dict()}, EXIT_OK


def cmd_bipolar(a):
    j = files.load_model(a.model)
    verdict = check_extension(j, mode=a.mode, directions=a.directions, seed=a.seed)
    return {"command": "bipolar", **verdict.to_dict()}, EXIT_OK if verdict.equal else EXIT_AGAINST


def cmd_factorize(a):
    j = files.load_model(a.model)
    f = files.load_density(a.target, j.x_space)
    eps, moved = 0.0, 0.0
    if np.any(f.values <= 0):
        eps = a.eps
        if eps <= 0:
            raise ValueError("target has zero coordinates; pass a positive --eps")
        f, moved = smooth_target(f, eps)
    opts = ProjectionOptions(tol=a.tol, max_iter=a.max_iter)
    rep = car_factorize(j, f, opts)
    rep.smoothing_eps, rep.smoothing_l1 = eps, moved
    return {"command": "factorize", **rep.to_dict()}, EXIT_OK if rep.compatible else EXIT_AGAINST


def cmd_simulate(a):
    if a.mechanism == "multiplicative":
        if a.car is None:
            raise UsageError("--mechanism multiplicative needs --car true|false")
        batch = multiplicative_sampler(GridSpec(), a.car, a.n, a.seed)
        source = {"mechanism": "multiplicative", "car": a.car}
    else:
        if not a.model:
            raise UsageError("simulate needs --model (or --mechanism multiplicative)")
        j = files.load_model(a.model)
        if a.table:
            batch = sample_joint(files.load_table(a.table), a.n, a.seed, j)
            source = {"table": a.table}
        else:
            if not (a.h and a.g):
                raise UsageError("simulate needs --h and --g, or --table")
            h = files.load_density(a.h, j.y_space)
            g = files.load_vector(a.g, j.x_space)
            batch = sample_car(j, h, g, a.n, a.seed)
            source = {"h": a.h, "g": a.g,
                      "data_density": [float(v) for v in car_data_density(j, h, g).values]}
    files.write_samples(batch, a.output)
    return {"command": "simulate", "n": batch.n, "seed": a.seed, "kind": batch.kind,
            "output": a.output, **source}, EXIT_OK


def _test_exit(report: dict) -> int:
    return EXIT_AGAINST if report["decision"] == "reject_CAR" else EXIT_OK


def cmd_test(a):
    if a.test == "product-cell":
        j = files.load_model(a.model)
        rep = product_cell_test(j, files.read_samples(a.samples), a.alpha).to_dict()
    elif a.test == "delta-monotone":
        j = files.load_model(a.model)
        member, worst = delta_monotone_check(files.load_density(a.density, j.x_space), j)
        rep = {"name": "delta-monotone", "is_member": member, "max_violation": worst,
               "decision": "no_evidence" if member else "reject_CAR",
               "calibration": {"kind": "population"}}
    elif a.test == "monotone-density":
        batch = files.read_samples(a.samples)
        rep = monotone_density_test(batch, a.bins, a.range, a.alpha).to_dict()
    else:
        j = files.load_model(a.model)
        batch = files.read_samples(a.samples)
        rep = kl_compat_test(j, batch, B=a.bootstrap, alpha=a.alpha, seed=a.seed).to_dict()
    return {"command": "test", **rep}, _test_exit(rep)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="carcheck", description="Check and test the coarsening at random assumption.")
    p.add_argument("--pretty", action="store_true", help="indent the JSON report")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check a model's operator invariants")
    s.add_argument("--model", required=True)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("make", help="write a canonical coarsening model")
    s.add_argument("--mechanism", required=True, choices=sorted(MECHANISMS))
    s.add_argument("--grid", type=int, required=True)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_make)

    s = sub.add_parser("apply", help="apply S to h or S* to g")
    s.add_argument("--model", required=True)
    s.add_argument("--density", required=True)
    s.add_argument("--direction", choices=["forward", "adjoint"], default="forward")
    s.set_defaults(func=cmd_apply)

    s = sub.add_parser("polar", help="describe the nuisance model")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_polar)

    s = sub.add_parser("bipolar", help="decide whether CAR is testable")
    s.add_argument("--model", required=True)
    s.add_argument("--mode", choices=["exact", "randomized"], default="exact")
    s.add_argument("--directions", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bipolar)

    s = sub.add_parser("factorize", help="project a data density and factorize it")
    s.add_argument("--model", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--max-iter", type=int, default=200_000)
    s.add_argument("--eps", type=float, default=1e-6)
    s.set_defaults(func=cmd_factorize)

    s = sub.add_parser("simulate", help="draw a seeded sample batch")
    s.add_argument("--model")
    s.add_argument("--h")
    s.add_argument("--g")
    s.add_argument("--table")
    s.add_argument("--mechanism", choices=["multiplicative"])
    s.add_argument("--car", type=_bool)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("test", help="run a test that can reject CAR")
    tests = s.add_subparsers(dest="test", required=True, parser_class=_Parser)
    t = tests.add_parser("product-cell")
    t.add_argument("--model", required=True)
    t.add_argument("--samples", required=True)
    t.add_argument("--alpha", type=float, default=0.05)
    t = tests.add_parser("delta-monotone")
    t.add_argument("--model", required=True)
    t.add_argument("--density", required=True)
    t = tests.add_parser("monotone-density")
    t.add_argument("--samples", required=True)
    t.add_argument("--bins", type=int, default=20)
    t.add_argument("--range", type=_range, default=(0.0, 3.0))
    t.add_argument("--alpha", type=float, default=0.05)
    t = tests.add_parser("kl-compat")
    t.add_argument("--model", required=True)
    t.add_argument("--samples", required=True)
    t.add_argument("--bootstrap", type=int, default=500)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_test)
    return p


def run(argv=None, out=None) -> int:
    """Run one command; print its JSON report to ``out`` and return the exit code."""
    out = out or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    # accepted anywhere on the command line, not only before the subcommand
    pretty = "--pretty" in argv
    argv = [arg for arg in argv if arg != "--pretty"]
    try:
        args = build_parser().parse_args(argv)
        report, code = args.func(args)
    except UsageError as exc:
        report, code = {"error": {"type": "usage", "message": str(exc)}}, EXIT_ERROR
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        report, code = {"error": {"type": type(exc).__name__, "message": str(exc)}}, EXIT_ERROR
    out.write(files.write_json(report, indent=2 if pretty else None) + "\n")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
