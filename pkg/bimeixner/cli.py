"""Command-line front end: ``python -m bimeixner <subcommand> [options]``.

Every subcommand prints a run report (JSON by default, CSV on request) and
exits with 0 when all checks pass, 2 when a check fails, 1 on usage or
configuration errors and 3 on numerical failures.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime, timezone

import numpy as np

from . import (
    __version__, nef_family, process_sim, qh_verify, quadrature, randomization, transition_kernel,
)
from .errors import BiMeixnerError, NumericalError, SingularDesignError
from .reports import RunReport

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_USAGE = 1
EXIT_CHECK_FAILED = 2
EXIT_NUMERICAL = 3

DEFAULT_PATHS = 1_000_000
DEFAULT_KERNEL_PATHS = 100_000

# (p, r) defaults keep at least eight moments of kappa'(Theta) finite
DEFAULT_PARAMS = {
    "wiener": (0.5, 1.0),
    "poisson": (2.0, 1.0),
    "gamma": (3.0, 10.0),
    "negative-binomial": (2.0, 10.0),
    "hyperbolic-secant": (1.0, 5.0),
}
DEFAULT_PAIRS = ((0.3, 0.7), (0.5, 2.0), (1.0, 1.0), (1.5, 3.0))
DEFAULT_TRIPLES = ((0.25, 0.5, 0.75), (1.5, 2.0, 4.0), (0.2, 1.0, 3.0), (0.3, 0.6, 2.0))
DEFAULT_CONTINUITY = (0.5, 0.9, 0.99)
DEFAULT_Y_PAIRS = ((0.5, 1.0), (1.0, 2.0))
DEFAULT_POSTERIOR = ((0.5, 2.0),)
DEFAULT_KERNEL_TIMES = (1.0, 2.0)

_SEQUENCE_KEYS = ("pairs", "triples", "kernel_times", "continuity", "times", "x")

SEEDED_COMMANDS = {
    "simulate", "moments", "verify-covariance", "verify-harness", "verify-qvar",
    "verify-identities", "verify-kernel", "verify-all",
}
# commands whose pairs, triples and continuity times must sit on an explicit --times grid
GRID_COMMANDS = {"verify-covariance", "verify-harness", "verify-qvar", "verify-all"}


class UsageError(BiMeixnerError):
    """Invalid command line or configuration file."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "wiener"
    q: float = None
    p: float = None
    r: float = None
    n_paths: int = DEFAULT_PATHS
    seed: int = None
    times: tuple = None
    pairs: tuple = DEFAULT_PAIRS
    triples: tuple = DEFAULT_TRIPLES
    continuity: tuple = DEFAULT_CONTINUITY
    kernel_times: tuple = DEFAULT_KERNEL_TIMES
    threshold: float = qh_verify.Z_THRESHOLD
    level: float = transition_kernel.GOF_LEVEL
    tolerance: float = 1e-10
    theta: float = 0.0
    t: float = 1.0
    x: tuple = (0.0,)
    threads: int = 0
    output_format: str = "json"

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
        values = {}
        for key, value in mapping.items():
            if key in _SEQUENCE_KEYS and value is not None:
                value = tuple(tuple(item) if isinstance(item, (list, tuple)) else item
                              for item in value)
            values[key] = value
        return cls(**values)

    def spec(self):
        try:
            return nef_family.FamilySpec.from_name(self.family, self.q)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def with_defaults(self):
        """Fill p and r from the family defaults when they were not given."""
        family = self.spec()
        p, r = DEFAULT_PARAMS[family.name]
        return replace(self, family=family.name, q=family.q,
                       p=p if self.p is None else float(self.p),
                       r=r if self.r is None else float(self.r))

    def validate(self, check_domain=True, check_grid=True):
        if check_domain:
            randomization.validate_params(self.spec(), self.p, self.r)
        if self.n_paths < 2:
            raise UsageError(f"n_paths must be at least 2, got {self.n_paths}")
        if self.output_format not in ("json", "csv"):
            raise UsageError(f"unknown output format {self.output_format!r}")
        for s, t, u in self.triples:
            if not 0.0 < s < t < u:
                raise UsageError(f"triple ({s}, {t}, {u}) is not increasing and positive")
        if self.times is not None:
            grid = process_sim.TimeGrid(self.times)
            for t in (self.referenced_times() if check_grid else ()):
                grid.index_of(t)
        return self

    def referenced_times(self):
        times = {t for pair in self.pairs for t in pair}
        times.update(t for triple in self.triples for t in triple)
        times.update(self.continuity)
        if self.continuity:
            times.add(1.0)
        return times

    def grid(self):
        if self.times is not None:
            return process_sim.TimeGrid(self.times)
        return process_sim.TimeGrid.covering(self.referenced_times())

    def echo(self):
        payload = asdict(self)
        payload.pop("threads")
        return payload


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration keys; flags override it")
    common.add_argument("--family", choices=sorted(DEFAULT_PARAMS))
    common.add_argument("--q", type=float, help="negative binomial base parameter")
    common.add_argument("--p", type=float)
    common.add_argument("--r", type=float)
    common.add_argument("--paths", dest="n_paths", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--times", type=float, nargs="+", help="explicit time grid")
    common.add_argument("--threshold", type=float, help="z-score pass threshold")
    common.add_argument("--threads", type=int, help="worker threads (0 = one per CPU)")
    common.add_argument("--format", dest="output_format", choices=("json", "csv"))
    common.add_argument("--out", help="write the report to this file instead of stdout")
    common.add_argument("--timing", action="store_true", help="add wall-clock fields")
    common.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = _Parser(prog="bimeixner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"bimeixner {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("params", parents=[common], help="quadratic harness parameters")
    sub.add_parser("moments", parents=[common], help="moments of kappa'(Theta)")
    simulate = sub.add_parser("simulate", parents=[common], help="simulate Z and summarize it")
    simulate.add_argument("--save", help="write the simulated batch to this .npz file")
    simulate.add_argument("--process", choices=("Y", "Z"), default="Z")
    sub.add_parser("verify-covariance", parents=[common], help="Cov(Z_s, Z_u) = min(s, u)")
    sub.add_parser("verify-harness", parents=[common], help="linear conditional means")
    sub.add_parser("verify-qvar", parents=[common], help="quadratic conditional variances")
    sub.add_parser("verify-identities", parents=[common], help="moment identities of Y and Z")
    assumptions = sub.add_parser("check-assumptions", parents=[common],
                                 help="boundary conditions on the randomization law")
    assumptions.add_argument("--support-points", type=float, nargs="+")
    density = sub.add_parser("density", parents=[common], help="increment density values")
    density.add_argument("--theta", type=float)
    density.add_argument("--t", type=float)
    density.add_argument("--x", type=float, nargs="+")
    kernel = sub.add_parser("verify-kernel", parents=[common],
                            help="chi-square tests of forward and reversed kernels")
    kernel.add_argument("--kernel-times", type=float, nargs=2)
    sub.add_parser("verify-all", parents=[common], help="every verification suite")
    return parser


def load_config(args):
    mapping = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as handle:
                mapping = json.load(handle)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(mapping, dict):
            raise UsageError("config file must hold a JSON object")
    config = ExperimentConfig.from_mapping(mapping)
    overrides = {}
    for f in fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = tuple(value) if isinstance(value, list) else value
    config = replace(config, **overrides).with_defaults()
    if config.seed is None and args.command in SEEDED_COMMANDS:
        raise UsageError(f"{args.command} needs an explicit --seed")
    # check-assumptions reports on any (p, r)
    return config.validate(check_domain=args.command != "check-assumptions",
                           check_grid=args.command in GRID_COMMANDS)


def _z_batch(config, times=None):
    stitch = process_sim.StitchConfig.create(config.spec(), config.p, config.r)
    grid = process_sim.TimeGrid.covering(times) if times is not None else config.grid()
    return stitch, process_sim.simulate_z(stitch, grid, config.n_paths, config.seed,
                                          config.threads)


def run_params(config, report, args):
    family = config.spec()
    theorem = qh_verify.qh_params_from_theorem(family, config.p, config.r)
    table = qh_verify.closed_form_params(family, config.p, config.r)
    report.results.update(asdict(theorem))
    for name in ("alpha", "beta", "sigma", "tau", "gamma"):
        expected = getattr(table, name)
        report.add(qh_verify.MomentCheckReport.exact(
            f"{name} (theorem vs closed form)", getattr(theorem, name), expected,
            1e-12 * max(1.0, abs(expected)),
        ))
    report.add(qh_verify.MomentCheckReport.exact(
        "gamma = 1 + 2 sqrt(sigma tau)", theorem.gamma,
        1.0 + 2.0 * np.sqrt(theorem.sigma * theorem.tau), 1e-12 * theorem.gamma,
    ))


def run_moments(config, report, args):
    law = randomization.RandomizationLaw.create(config.spec(), config.p, config.r)
    closed = randomization.kprime_moments(law)
    report.results.update(mean=closed.mean, variance=closed.variance, log_C=law.log_C,
                          moment_order=randomization.moment_order(law.family, law.r))
    report.add(qh_verify.kprime_moment_checks(law, config.n_paths, config.seed, config.threshold,
                                              config.threads))


def run_simulate(config, report, args):
    if args.process == "Y":
        batch = process_sim.simulate_y(config.spec(), config.p, config.r, config.grid(),
                                       config.n_paths, config.seed, config.threads)
        law = randomization.RandomizationLaw.create(config.spec(), config.p, config.r)
        v2 = randomization.kprime_moments(law).variance
        # Var Y_t = t E[V(kappa'(Theta))] + t^2 v^2
        coeffs = nef_family.variance_coeffs(law.family)
        curvature = coeffs(law.mean) + coeffs.a * v2
        expected = [(t * law.mean, t * curvature + t * t * v2) for t in batch.grid.times]
    else:
        _, batch = _z_batch(config)
        expected = [(0.0, t) for t in batch.grid.times]
    for t, (mean, variance) in zip(batch.grid.times, expected):
        column = batch.column(t)
        report.add(qh_verify.mean_report(f"mean({args.process}_{t:g})", column, mean,
                                          config.threshold))
        report.add(qh_verify.variance_report(f"var({args.process}_{t:g})", column, variance,
                                              config.threshold))
    report.results.update(times=batch.grid.times)
    if args.save:
        np.savez(args.save, times=np.array(batch.grid.times), values=batch.values,
                 thetas=batch.thetas, seed=batch.seed)
        logger.info("Saved %d paths to %s", batch.n_paths, args.save)


def run_covariance(config, report, args):
    _, batch = _z_batch(config)
    report.add(qh_verify.mean_check(batch, threshold=config.threshold))
    report.add(qh_verify.covariance_check(batch, config.pairs, config.threshold))


def run_harness(config, report, args):
    _, batch = _z_batch(config)
    for s, t, u in config.triples:
        report.add(qh_verify.harness_regression(batch, s, t, u, config.threshold))


def run_qvar(config, report, args):
    _, batch = _z_batch(config)
    params = qh_verify.qh_params_from_theorem(config.spec(), config.p, config.r)
    report.results.update(asdict(params))
    for s, t, u in config.triples:
        report.add(qh_verify.qvar_regression(batch, s, t, u, params, config.threshold))


def run_identities(config, report, args):
    family = config.spec()
    law = randomization.RandomizationLaw.create(family, config.p, config.r)
    v2 = randomization.kprime_moments(law).variance
    report.add(qh_verify.identity_amazing(family, config.p, config.r, 1.0, config.n_paths,
                                          config.seed, config.threshold, config.threads))
    theta = nef_family.mean_to_theta(family, law.mean)
    report.add(qh_verify.identity_minivv(family, theta, 1.0, 2.0, config.n_paths,
                                         config.seed + 1, threshold=config.threshold))

    y_times = sorted({t for pair in DEFAULT_Y_PAIRS for t in pair})
    batch_y = process_sim.simulate_y(family, config.p, config.r, process_sim.TimeGrid(y_times),
                                     config.n_paths, config.seed + 2, config.threads)
    report.add(qh_verify.y_covariance_check(batch_y, DEFAULT_Y_PAIRS, v2, config.r,
                                            config.threshold))
    report.add(qh_verify.martingale_check(batch_y, 1.0, 2.0, config.p, config.r,
                                          config.threshold))
    report.add(qh_verify.kprime_posterior_check(batch_y, 1.0, config.p, config.r,
                                                config.threshold))

    z_times = set(config.continuity) | {1.0} | {t for pair in DEFAULT_POSTERIOR for t in pair}
    _, batch_z = _z_batch(replace(config, seed=config.seed + 3), z_times)
    report.add(qh_verify.continuity_check(batch_z, config.continuity, config.threshold))
    for s, u in DEFAULT_POSTERIOR:
        report.add(qh_verify.theta_posterior_check(batch_z, s, u, config.p, config.r,
                                                   config.threshold))
        report.add(qh_verify.theta_posterior_variance_check(batch_z, s, u, config.p, config.r,
                                                            config.threshold))
        report.add(qh_verify.conditional_independence_check(batch_z, s, u,
                                                            threshold=config.threshold))


def run_assumptions(config, report, args):
    result = randomization.check_assumptions(config.spec(), config.p, config.r,
                                             support_points=getattr(args, "support_points", None))
    report.results.update(heuristic=result.heuristic, support_points=result.support_points)
    report.add(result)


def run_density(config, report, args):
    family = config.spec()
    t = config.t
    values = nef_family.increment_density(family, config.theta, t, np.array(config.x))
    report.results.update(x=config.x, density=np.atleast_1d(values))
    lo, _ = nef_family.support(family)
    if family.is_discrete:
        mass = float(np.sum(nef_family.increment_density(
            family, config.theta, t, np.arange(0.0, 10_000.0))))
    else:
        mean = t * float(nef_family.kappa_prime(family, config.theta))
        mass = quadrature.integrate(
            lambda x: nef_family.increment_density(family, config.theta, t, x), lo, np.inf,
            rel_tol=1e-12, points=(mean,),
        ).value
    report.add(qh_verify.MomentCheckReport.exact("total mass", mass, 1.0, 1e-8))


def run_kernel(config, report, args):
    family = config.spec()
    s, t = config.kernel_times
    law = randomization.RandomizationLaw.create(family, config.p, config.r)
    ctx = transition_kernel.KernelContext(law, config.tolerance)
    n_paths = min(config.n_paths, DEFAULT_KERNEL_PATHS)
    batch = process_sim.simulate_y(family, config.p, config.r, process_sim.TimeGrid((s, t)),
                                   n_paths, config.seed, config.threads)
    if family.kind is nef_family.FamilyKind.HYPERBOLIC_SECANT:
        logger.warning("Skipping the forward kernel test for %s: no closed-form conditional CDF",
                       family)
    else:
        report.add(transition_kernel.forward_goodness_of_fit(ctx, batch, s, t,
                                                             level=config.level))
    report.add(transition_kernel.reversed_goodness_of_fit(ctx, batch, s, t, level=config.level))
    report.add(qh_verify.martingale_check(batch, s, t, config.p, config.r, config.threshold))


def run_all(config, report, args):
    for step in (run_params, run_assumptions, run_moments, run_covariance, run_harness,
                 run_qvar, run_identities, run_kernel):
        step(config, report, args)


COMMANDS = {
    "params": run_params,
    "moments": run_moments,
    "simulate": run_simulate,
    "verify-covariance": run_covariance,
    "verify-harness": run_harness,
    "verify-qvar": run_qvar,
    "verify-identities": run_identities,
    "check-assumptions": run_assumptions,
    "density": run_density,
    "verify-kernel": run_kernel,
    "verify-all": run_all,
}


def _configure_logging(level):
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def run_subcommand(argv):
    """Parse ``argv``, run the suite and return (exit code, RunReport or None)."""
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.log_level)
        config = load_config(args)
    except (BiMeixnerError, ValueError) as exc:
        print(f"bimeixner: error: {exc}", file=sys.stderr)
        return EXIT_USAGE, None

    report = RunReport(command=args.command, config=config.echo(), seed=config.seed,
                       version=__version__)
    started = time.time()
    try:
        COMMANDS[args.command](config, report, args)
    except (NumericalError, SingularDesignError) as exc:
        logger.error("Numerical failure in %s: %s", args.command, exc)
        print(f"bimeixner: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL, report
    except BiMeixnerError as exc:
        print(f"bimeixner: error: {exc}", file=sys.stderr)
        return EXIT_USAGE, report
    if args.timing:
        report.wall_clock_seconds = round(time.time() - started, 3)
        report.generated_at = datetime.now(timezone.utc).isoformat()

    text = report.serialize(config.output_format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    if not report.passed:
        failed = [row["name"] for row in report.checks if not row["pass"]]
        logger.warning("%d of %d checks failed: %s", len(failed), len(report.checks),
                       ", ".join(failed[:5]))
        return EXIT_CHECK_FAILED, report
    return EXIT_PASS, report


def main(argv=None):
    code, _ = run_subcommand(sys.argv[1:] if argv is None else argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
