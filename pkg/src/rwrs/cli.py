"""Command-line experiment runner.

Exit codes: 0 success, 1 a statistical verdict failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .diagnostics import (
    DiagnosticReport,
    LevelTooHigh,
    alpha_mixing_surrogate,
    default_sequences,
    dk_ladder,
    dprime_sum_rwrs,
    dprime_sum_scenery,
    epsilon_bounds,
    extremal_index_estimators,
    obrien_product,
)
from .norming import norming, tail_measure
from .poisson_tests import (
    MIN_VERDICT_REPS,
    RecordSet,
    poisson_suite,
    run_experiment,
    write_records,
    write_verdicts,
)
from .simkit import McEstimate, RngKey, default_workers
from .stable_walk import StepLaw, estimate_q, estimate_return_mass, generate_walk

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MANIFEST_KIND = "rwrs-manifest"

# stream ids keep the functionals of one run statistically independent
_STREAM_DPRIME, _STREAM_DK, _STREAM_OBRIEN, _STREAM_THETA, _STREAM_RETURN = 10, 11, 12, 13, 14


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class _Run:
    """Collects output paths and writes the manifest at the end."""

    def __init__(self, command: str, out_dir: Path, seed: int, digest: str, config: dict | None):
        self.command = command
        self.out_dir = out_dir
        self.seed = seed
        self.digest = digest
        self.config = config
        self.started = _now()
        self.outputs: list[str] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p

    def finish(self, extra: dict | None = None) -> Path:
        manifest = {
            "kind": MANIFEST_KIND,
            "command": self.command,
            "config_digest": self.digest,
            "master_seed": self.seed,
            "tool_version": __version__,
            "started": self.started,
            "finished": _now(),
            "outputs": self.outputs,
            "config": self.config,
        }
        manifest.update(extra or {})
        p = self.out_dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return p


def _load(path: str) -> tuple[RunConfig, int | None]:
    """A config file, or a manifest whose embedded config and seed are replayed."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and doc.get("kind") == MANIFEST_KIND:
        if not doc.get("config"):
            raise ConfigError(f"{path}: manifest carries no config")
        return parse_config(json.dumps(doc["config"], indent=2), path), int(doc["master_seed"])
    return load_config(path), None


def _digest(kind: str, payload: dict) -> str:
    return hashlib.sha256(json.dumps({"command": kind, **payload}, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# estimate-q


def cmd_estimate_q(args) -> int:
    law = StepLaw.unit() if args.law == "unit" else StepLaw.zipf(args.alpha)
    seed = args.seed
    run = _Run("estimate-q", Path(args.out_dir), seed, _digest("estimate-q", {"law": law.as_dict(), "horizon": args.horizon, "reps": args.reps, "seed": seed}), None)
    key = RngKey(seed, 1)
    report = estimate_q(law, args.horizon, args.reps, key, n_range=args.n_range, reps_range=args.reps_range, workers=args.threads)
    ret, rng = report.return_based, report.range_slope
    print(f"return-based q   = {ret.mean:.6f} +/- {ret.stderr:.6f} (horizon {report.horizon}, reps {ret.replications})")
    print(f"range-slope  R/n = {rng.mean:.6f} +/- {rng.stderr:.6f} (n {report.n_range}, reps {rng.replications})")
    print(f"difference       = {report.difference:+.6f} (joint stderr {report.joint_stderr:.6f})")
    print(f"truncation bias  <= {report.bias_bound:.6f}")
    print(f"consistent at 3 sigma: {'YES' if report.consistent() else 'NO'}")
    with open(run.path("q_estimate.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["estimator", "estimate", "stderr"])
        w.writerow(["return_based", repr(ret.mean), repr(ret.stderr)])
        w.writerow(["range_slope", repr(rng.mean), repr(rng.stderr)])
        w.writerow(["difference", repr(report.difference), repr(report.joint_stderr)])
        w.writerow(["truncation_bias", repr(report.bias_bound), repr(0.0)])
    run.finish({"law": law.as_dict(), "horizon": args.horizon, "reps": args.reps})
    return EXIT_OK


# ---------------------------------------------------------------------------
# poisson


def cmd_poisson(args) -> int:
    cfg, manifest_seed = _load(args.config)
    seed = args.seed if args.seed is not None else (manifest_seed if manifest_seed is not None else cfg.seed)
    reps = args.reps if args.reps is not None else cfg.reps
    if reps < MIN_VERDICT_REPS:
        print(f"error: insufficient replications ({reps} < {MIN_VERDICT_REPS})", file=sys.stderr)
        return EXIT_USAGE
    raw = dict(cfg.raw, seed=seed, reps=reps)
    run = _Run("poisson", Path(args.out_dir), seed, cfg.digest(seed) if reps == cfg.reps else _digest("poisson", raw), raw)
    q_hat = cfg.resolve_q(seed, args.threads)
    exp = cfg.experiment(q_hat, seed=seed, reps=reps)
    records = run_experiment(exp, workers=args.threads)
    write_records(run.path("records.jsonl"), records)
    verdicts = poisson_suite(RecordSet(records, exp))
    write_verdicts(run.path("verdicts.csv"), verdicts)
    print(f"q_hat = {q_hat.mean:.6f} +/- {q_hat.stderr:.6f}")
    for v in verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'}  {v.name}: {v.statistic:.6g} vs {v.target:.6g} (tol {v.tolerance:.3g})")
    failures = sum(not v.passed for v in verdicts)
    run.finish({"q_hat": q_hat.as_dict(), "failures": failures})
    if cfg.negative_control:
        print(f"negative control: {failures} expected failure(s) {'observed' if failures else 'MISSING'}")
        return EXIT_OK
    return EXIT_FAIL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# diagnostics


def _theta_with_stderr(records: list, x: float, tau: float) -> tuple[tuple[float, float], tuple[float, float]]:
    ind = np.array([r["max_le_n"][0] for r in records], dtype=float)
    blocks = [np.asarray(r["block_exceedances"][0]) for r in records]
    tb, tl = extremal_index_estimators(ind, blocks, tau)
    n = ind.size
    p = ind.mean()
    se_l = math.sqrt(p * (1 - p) / n) / (p * tau) if 0 < p < 1 else 0.0
    # ratio-of-means linearisation for (blocks hit) / (exceedances)
    hits = np.array([np.count_nonzero(b) for b in blocks], dtype=float)
    tot = np.array([b.sum() for b in blocks], dtype=float)
    resid = hits - tb * tot
    se_b = float(resid.std(ddof=1) / (math.sqrt(n) * tot.mean())) if tot.mean() > 0 else 0.0
    return (tb, se_b), (tl, se_l)


def cmd_diagnostics(args) -> int:
    cfg, manifest_seed = _load(args.config)
    seed = args.seed if args.seed is not None else (manifest_seed if manifest_seed is not None else cfg.seed)
    d = cfg.diagnostics
    raw = dict(cfg.raw, seed=seed)
    run = _Run("diagnostics", Path(args.out_dir), seed, cfg.digest(seed), raw)
    law, spec, x = cfg.law, cfg.spec, d.x
    tau = tail_measure(spec).tail(x)
    report = DiagnosticReport()
    violated = []
    monotone = True
    ratios = []
    for n in d.n_grid:
        k_n, ell_n = default_sequences(n)
        u = norming(spec, n).threshold(x)
        key = lambda stream: RngKey(seed, stream).with_substream(n)  # noqa: E731
        scen = dprime_sum_scenery(spec, n, u, k_n)
        rw = dprime_sum_rwrs(law, spec, n, x, k_n, d.reps, key(_STREAM_DPRIME), args.threads)
        mass = estimate_return_mass(law, n // k_n, d.return_reps, key(_STREAM_RETURN), args.threads)
        report.add(n, "dprime_scenery", scen)
        report.add_estimate(n, "dprime_rwrs", rw)
        report.add_estimate(n, "return_mass", mass)
        floor = 0.5 * tau * mass.mean
        violated.append(mass.mean - 3 * mass.stderr > 0 and rw.mean >= floor)
        ladder = dk_ladder(law, spec, n, list(d.k_ladder), x, k_n, d.reps, key(_STREAM_DK), args.threads, inner_reps=d.inner_reps)
        for k, est in zip(d.k_ladder, ladder):
            report.add_estimate(n, f"dk[k={k}]", est)
        means = [e.mean for e in ladder]
        monotone &= all(b <= a for a, b in zip(means, means[1:]))
        if means[0] > 0:
            ratios.append((n, means[-1] / means[0]))
        lhs, rhs = obrien_product(law, spec, n, x, k_n, d.reps, key(_STREAM_OBRIEN), args.threads, inner_reps=d.inner_reps)
        report.add_estimate(n, "obrien_lhs", lhs)
        report.add_estimate(n, "obrien_rhs", rhs)
        # scaling m_n does not enter the maximum or block counts used here
        theta_seed = key(_STREAM_THETA).replicate(0).master_seed
        exp = replace(cfg.experiment(McEstimate(1.0, 0.0, 2), seed=theta_seed, reps=d.reps), n=n, levels=(x,))
        records = run_experiment(exp, workers=args.threads)
        try:
            (tb, se_b), (tl, se_l) = _theta_with_stderr(records, x, tau)
            report.add(n, "theta_blocks", tb, se_b)
            report.add(n, "theta_logs", tl, se_l)
        except LevelTooHigh:
            report.add(n, "theta_blocks", math.nan, math.nan)
            report.add(n, "theta_logs", math.nan, math.nan)
        alpha_mix = alpha_mixing_surrogate(spec, n, ell_n, u, key=key(_STREAM_THETA + 1))
        report.add(n, "alpha_mixing_surrogate", alpha_mix)
        eps = epsilon_bounds(n, k_n, ell_n, alpha_mix, rw.mean, d.c)
        report.add(n, "eps1", eps.eps1)
        report.add(n, "eps2", eps.eps2, d.c * rw.stderr)
    report.write_csv(run.path("diagnostics.csv"))
    print(f"{'n':>8}  {'functional':<24} {'estimate':>12} {'stderr':>12}")
    for n, name, est, se in report.rows:
        print(f"{n:>8}  {name:<24} {est:>12.6g} {se:>12.3g}")
    print(f"D-prime violated: {'YES' if violated and all(violated) else 'NO'}")
    print(f"D^(k) ladder monotone: {'YES' if monotone else 'NO'}")
    for n, r in ratios:
        print(f"D^(k) ratio k={d.k_ladder[-1]}/k={d.k_ladder[0]} at n={n}: {r:.4f} (threshold {d.dk_ratio_threshold})")
    run.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate-walk


def cmd_simulate_walk(args) -> int:
    law = StepLaw.unit() if args.law == "unit" else StepLaw.zipf(args.alpha)
    payload = {"law": law.as_dict(), "n": args.n, "count": args.count, "seed": args.seed}
    run = _Run("simulate-walk", Path(args.out_dir), args.seed, _digest("simulate-walk", payload), None)
    with open(run.path("walks.jsonl"), "w") as fh:
        for r in range(args.count):
            walk = generate_walk(law, args.n, RngKey(args.seed).replicate(r), keep_positions=args.positions)
            rec = {"rep": r, **walk.as_dict()}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            print(f"walk {r}: range {walk.range_size} ({walk.range_size / args.n:.4f} n)")
    run.finish(payload)
    return EXIT_OK


def cmd_version(args) -> int:
    print(f"rwrs {__version__}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _alpha(text: str) -> float:
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < a < 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return a


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _common(p: argparse.ArgumentParser, config: bool) -> None:
    if config:
        p.add_argument("--config", required=True, help="JSON config or a manifest to replay")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    else:
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive, default=default_workers(), help="worker processes (results do not depend on it)")
    p.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")


def _law_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--law", choices=["zipf", "unit"], default="zipf")
    p.add_argument("--alpha", type=_alpha, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwrs", description="Exceedances of random walks in random scenery.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate-q", help="estimate the escape probability two ways")
    _law_flags(p)
    p.add_argument("--horizon", type=_positive, default=10_000)
    p.add_argument("--reps", type=_positive, default=20_000)
    p.add_argument("--n-range", type=_positive, default=None, help="horizon of the range-slope estimator")
    p.add_argument("--reps-range", type=_positive, default=None)
    _common(p, config=False)
    p.set_defaults(func=cmd_estimate_q)

    p = sub.add_parser("poisson", help="run the exceedance experiment and its verdicts")
    p.add_argument("--reps", type=int, default=None, help="override the config replication count")
    _common(p, config=True)
    p.set_defaults(func=cmd_poisson)

    p = sub.add_parser("diagnostics", help="mixing and clustering functionals over an n-grid")
    _common(p, config=True)
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("simulate-walk", help="dump visit times and sites of walks")
    _law_flags(p)
    p.add_argument("--n", type=_positive, default=1000)
    p.add_argument("--count", type=_positive, default=1)
    p.add_argument("--positions", action="store_true", help="include the full path")
    _common(p, config=False)
    p.set_defaults(func=cmd_simulate_walk)

    p = sub.add_parser("version", help="print the tool version")
    p.set_defaults(func=cmd_version)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "law", None) == "zipf" and args.alpha is None:
        parser.error("--alpha is required with --law zipf")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
