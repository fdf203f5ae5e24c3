"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 negative verdict, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .asymptotics import default_horizon, default_step, estimate_exponent, perron_compare, verify_stability_verdict
from .certifiers import abscissa_bound, certify_mixed, certify_point_delay_independent, certify_remark43
from .errors import DelaySpectraError, EnvelopeViolation, NumericalFailure, ValidationError
from .io import load_spec, spec_to_dict, write_csv, write_json
from .model import HistoryFunction
from .simulator import hypothesis_check, integrate_limiting, integrate_perturbed
from .spectrum import find_roots, lambda_sets, spectral_abscissa

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NEGATIVE = 3
EXIT_NUMERICAL = 4

COMMANDS = ("simulate", "roots", "certify", "exponent", "compare", "report")


def _region(text: str):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("region must be re_min,re_max,im_max") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("region must be re_min,re_max,im_max")
    re_min, re_max, im_max = parts
    if not (re_min < re_max and im_max > 0):
        raise argparse.ArgumentTypeError("region needs re_min < re_max and im_max > 0")
    return re_min, re_max, -im_max, im_max


def _positive(text: str) -> float:
    value = float(text)
    if not (value > 0 and math.isfinite(value)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delay-spectra",
        description="Simulate, locate characteristic roots and certify stability of linear delay systems.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("spec", help="system spec file (JSON)")
    parser.add_argument("--step", type=_positive, help="integration step")
    parser.add_argument("--horizon", type=_positive, help="simulation horizon")
    parser.add_argument("--region", type=_region, help="root search box re_min,re_max,im_max")
    parser.add_argument("--norm", choices=("l1", "l2", "linf"), default="l2")
    parser.add_argument("--tol", type=_positive, help="root or sweep refinement tolerance")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized histories")
    parser.add_argument("--out", default=".", help="output directory for artifacts")
    return parser


def _simulate(spec, args):
    system = spec.system
    step = args.step or default_step(system)
    horizon = args.horizon or 10.0
    if spec.perturbation is None:
        return integrate_limiting(system, spec.hist, horizon, step)
    return integrate_perturbed(system, spec.pert, spec.hist, horizon, step, args.norm)


def _dominant_frequency(absc) -> float:
    return max((abs(r.lam.imag) for r in absc.dominant), default=0.0)


def cmd_simulate(spec, args, out: Path) -> int:
    traj = _simulate(spec, args)
    traj.to_csv(out / "trajectory.csv")
    end = traj.states[-1]
    print(f"simulated t in [0, {traj.t_end:.6g}] with step {traj.step:.6g}: {traj.states.shape[0]} rows")
    print("x(t_end) = " + ", ".join(f"{v:.10g}" for v in end))
    print(f"wrote {out / 'trajectory.csv'}")
    return EXIT_OK


def cmd_roots(spec, args, out: Path) -> int:
    system = spec.system
    tol = args.tol or 1e-10
    if args.region is not None:
        roots = find_roots(system, args.region, root_tol=tol)
        report = roots.to_dict()
        mu = roots.abscissa if len(roots) else None
    else:
        result = spectral_abscissa(system)
        report = result.roots.to_dict()
        mu = result.mu
        report["dominant"] = [r.to_dict() for r in result.dominant]
        report["sigma_cap"] = result.sigma_cap
    report["spectral_abscissa"] = mu
    write_json(out / "roots.json", report)
    for root in report["roots"]:
        print(f"  {root['re']: .12g} {root['im']:+.12g}i  multiplicity {root['multiplicity']}")
    print(f"abscissa = {mu:.12g}" if mu is not None else "abscissa = none (no roots in region)")
    return EXIT_OK


def _applicable_certificates(system, tol):
    kwargs = {"refinement_tol": tol} if tol else {}
    if not system.volterra_terms and not system.finite_terms:
        yield certify_point_delay_independent(system, **kwargs)
        yield abscissa_bound(system, **kwargs)
        if len(system.point_terms) > 1:
            yield certify_remark43(system, **kwargs)
    elif not system.volterra_terms and len(system.finite_terms) == 1 and len(system.point_terms) <= 2:
        yield certify_mixed(system, **kwargs)


def _print_certificate(cert, indent="") -> None:
    print(f"{indent}[{cert.test_id}] {cert.verdict}")
    if cert.sweep_sup is not None:
        print(f"{indent}  sup = {cert.sweep_sup:.12g} at omega = {cert.omega_star:.12g}")
    for name, value in {**cert.margins, **cert.norms, **cert.measure_values}.items():
        if isinstance(value, (int, float)):
            print(f"{indent}  {name} = {value:.12g}")
    if cert.abscissa_bound is not None:
        print(f"{indent}  abscissa bound = {cert.abscissa_bound:.12g}")
    for note in cert.notes:
        print(f"{indent}  note: {note}")
    for part in cert.parts.values():
        # the head certificate repeats one of its parts; skip the copy
        if part.test_id != cert.test_id:
            _print_certificate(part, indent + "  ")


def cmd_certify(spec, args, out: Path) -> int:
    certs = list(_applicable_certificates(spec.system, args.tol))
    if not certs:
        raise ValueError("no certificate applies to this system (Volterra terms or several distributed terms)")
    write_json(out / "certificates.json", {"certificates": [c.to_dict() for c in certs]})
    for cert in certs:
        _print_certificate(cert)
    return EXIT_OK if any(c.certified for c in certs) else EXIT_NEGATIVE


def cmd_exponent(spec, args, out: Path) -> int:
    system = spec.system
    absc = spectral_abscissa(system)
    mu = absc.mu
    args.horizon = args.horizon or default_horizon(system, mu, _dominant_frequency(absc))
    traj = _simulate(spec, args)
    fit = estimate_exponent(traj, norm=args.norm)
    report = {"spectral_abscissa": mu, "fit": fit.to_dict(), "step": traj.step, "horizon": traj.t_end}
    write_json(out / "exponent.json", report)
    times, norms = traj.string_norms(norm=args.norm)
    with np.errstate(divide="ignore"):
        write_csv(out / "exponent.csv", ["t", "log_norm_x"], np.column_stack([times, np.log(norms)]))
    print(f"mu_hat = {fit.mu_hat:.10g} (se {fit.stderr:.3g}), nu_hat = {fit.nu_hat:.4g}, r2 = {fit.r2:.6f}")
    print(f"spectral abscissa = {mu:.10g}")
    return EXIT_OK


def cmd_compare(spec, args, out: Path) -> int:
    report = perron_compare(spec.system, spec.pert, spec.hist, args.horizon, args.norm, step=args.step)
    write_json(out / "compare.json", report.to_dict())
    write_csv(out / "compare.csv", ["t", "log_norm_x", "log_norm_residual"], report.series)
    c = report.c_hat
    print(f"mu = {report.mu:.10g}, c_hat = {c.real:.10g} {c.imag:+.10g}i")
    print(f"residual rate = {report.residual_rate:.6g} (se {report.residual_se:.3g}), class {report.classification}")
    print(f"expected {report.expected}; consistent: {report.consistent}")
    for note in report.notes:
        print(f"note: {note}")
    return EXIT_NEGATIVE if report.consistent is False else EXIT_OK


def cmd_report(spec, args, out: Path) -> int:
    system = spec.system
    write_json(out / "spec.json", spec_to_dict(spec))
    absc = spectral_abscissa(system)
    sets = lambda_sets(absc.roots.roots, absc.mu)
    summary = {
        "n": system.n,
        "max_delay": system.h,
        "norm_bound": system.norm_bound(),
        "spectral_abscissa": absc.mu,
        "lambda0": [r.to_dict() for r in sets.lambda0],
        "lambda1": [r.to_dict() for r in sets.lambda1],
    }
    pert = spec.pert
    if not pert.gamma.is_zero:
        summary["hypothesis_check"] = hypothesis_check(pert, absc.dominant, system=system).to_dict()
    # the given history plus two seeded random constant histories
    rng = np.random.default_rng(args.seed)
    histories = [spec.hist] + [
        HistoryFunction.constant(rng.uniform(-1.0, 1.0, system.n), system.h) for _ in range(2)
    ]
    horizon = args.horizon or default_horizon(system, absc.mu, _dominant_frequency(absc))
    verdict = verify_stability_verdict(system, pert, histories, horizon, step=args.step, norm=args.norm)
    summary["stability"] = verdict
    write_json(out / "report.json", summary)
    print(f"n = {system.n}, max delay = {system.h:.6g}, abscissa = {absc.mu:.12g}")
    if "hypothesis_check" in summary:
        print(f"envelope hypothesis: {summary['hypothesis_check']['verdict']}")
    print(f"stability verdict over {len(histories)} histories: {'pass' if verdict['passed'] else 'fail'}")
    return EXIT_OK if verdict["passed"] else EXIT_NEGATIVE


HANDLERS = {
    "simulate": cmd_simulate,
    "roots": cmd_roots,
    "certify": cmd_certify,
    "exponent": cmd_exponent,
    "compare": cmd_compare,
    "report": cmd_report,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = load_spec(args.spec)
    except ValidationError as exc:
        print("invalid input:", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return HANDLERS[args.command](spec, args, out)
    except (NumericalFailure, EnvelopeViolation) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationError as exc:
        print("invalid input:", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, DelaySpectraError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
