"""Monte Carlo experiments over the particle system, with pass/fail checks.

Every experiment follows the same shape: run trials (optionally across
worker processes), aggregate deterministically in trial order, compare the
measured statistics against the matching closed-form rate or monotonicity
requirement, and return an :class:`ExperimentReport` that the CLI turns
into CSV tables, a JSON summary, and a manifest.

Determinism contract: a fixed (config, seed) pair produces byte-identical
CSV and JSON outputs regardless of worker count, because every trial's
randomness is keyed by (seed, trial, step) and aggregation walks trials in
index order.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Optional

import numpy as np

from .. import __version__
from ..dynamics import (
    INIT_STREAM,
    SUBSAMPLE_STREAM,
    ModelParams,
    coupled_run,
    simulate,
    simulate_meanfield,
    stream,
)
from ..errors import ConfigError, DivergedRunError, InvalidParameterError
from ..metrics import (
    EmpiricalMeasure,
    concentration_frequency,
    decay_fit,
    laplace_value,
    wasserstein_p,
)
from ..theory import (
    RegularizerSchedule,
    lambda_alpha,
    lipschitz_estimate,
    meanfield_threshold,
    noise_threshold,
    weighted_energy_floor,
)
from .config import ExperimentConfig, normalize

__all__ = [
    "CheckResult",
    "ExperimentReport",
    "gate_config",
    "run_experiment",
    "run_and_write",
    "replay_manifest",
    "write_manifest",
]

# scale factor between the SD of a sample and the asymptotic SE of its median
_MEDIAN_SE = math.sqrt(math.pi / 2.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    observed: Optional[float] = None
    bound: Optional[float] = None
    detail: str = ""


@dataclass
class ExperimentReport:
    kind: str
    checks: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> list of (t, stat, est, se)
    summary: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    divergence_count: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list:
        out = []
        for c in self.checks:
            status = "PASS" if c.passed else "FAIL"
            parts = [f"[{status}] {c.name}"]
            if c.observed is not None:
                parts.append(f"observed={c.observed:.6g}")
            if c.bound is not None:
                parts.append(f"bound={c.bound:.6g}")
            if c.detail:
                parts.append(c.detail)
            out.append("  ".join(parts))
        return out


# ---------------------------------------------------------------------------
# trial scheduling


def _safe_call(fn, trial: int):
    try:
        return fn(trial)
    except DivergedRunError:
        return None


def _run_trials(fn, n_trials: int, workers: int) -> list:
    """Run fn(0..n_trials-1), in order, optionally across processes.

    Results come back ordered by trial index whichever path runs, so any
    aggregation downstream is independent of the worker count.
    """
    job = partial(_safe_call, fn)
    if workers <= 1 or n_trials <= 1:
        return [job(k) for k in range(n_trials)]
    with ProcessPoolExecutor(max_workers=min(workers, n_trials)) as ex:
        return list(ex.map(job, range(n_trials), chunksize=1))


# ---------------------------------------------------------------------------
# strict-mode gating


def gate_config(cfg: ExperimentConfig, strict: bool) -> list:
    """Check the drift-vs-threshold preconditions an experiment relies on.

    Returns warning strings in exploratory mode; raises ConfigError in
    strict mode (and unconditionally for parameters that make the
    experiment meaningless, like an out-of-range concentration exponent).
    """
    kind = cfg.kind
    knobs = cfg.knobs
    m = cfg.data["model"]
    lam, sigma, alpha = m["lambda"], m["sigma"], m["alpha"]
    h = cfg.schedule()
    f_min = cfg.objective().f_min
    p = float(knobs.get("p", 2.0))
    q = float(knobs.get("q", 3.0))
    problems = []

    if kind == "decay":
        la = lambda_alpha(f_min, h, alpha)
        thr = noise_threshold(m["noise"], cfg.objective().dim, p, sigma, la)
        if lam <= thr:
            problems.append(f"drift lambda={lam:g} is not above the particle threshold {thr:g}")
    elif kind == "chaos":
        rep = cfg.threshold_report()
        if lam <= rep.chaos_threshold:
            problems.append(
                f"drift lambda={lam:g} is not above the coupling threshold {rep.chaos_threshold:g}"
            )
    elif kind == "concentration":
        frac = float(knobs["kappa_frac"])
        if not (0.0 < frac <= 0.9):
            raise ConfigError(f"kappa_frac must lie in (0, 0.9], got {frac:g}")
        rep = cfg.threshold_report()
        if rep.kappa_max is None:
            raise ConfigError(
                f"drift lambda={lam:g} is not above the coupling threshold "
                f"{rep.chaos_threshold:g}; no admissible concentration exponent exists"
            )
    elif kind == "meanfield" or (kind == "laplace" and knobs.get("mode") == "dynamic"):
        ladder = list(knobs.get("alpha_ladder") or [alpha])
        for a in ladder:
            la = lambda_alpha(f_min, h, a)
            thr = meanfield_threshold(p if kind == "meanfield" else 2.0, sigma, la)
            if lam <= thr:
                problems.append(
                    f"drift lambda={lam:g} is not above the mean-field threshold {thr:g} at alpha={a:g}"
                )
    elif kind == "noise_variants":
        la = lambda_alpha(f_min, h, alpha)
        d = cfg.objective().dim
        if knobs.get("auto_lambda", True):
            pass  # the per-variant rule below the run always clears the threshold
        else:
            thr = noise_threshold("baseline_scalar", d, p, sigma, la)
            if lam <= thr:
                problems.append(
                    f"drift lambda={lam:g} is not above the baseline particle threshold {thr:g}"
                )

    if strict and problems:
        raise ConfigError("strict mode: " + "; ".join(problems))
    return [p_ + " (continuing in exploratory mode)" for p_ in problems]


# ---------------------------------------------------------------------------
# decay of pairwise distances (finite-N consensus formation)


def _decay_trial(trial: int, *, f, params, n, init, seed, p):
    ts = simulate(f, params, n, init, seed, trial=trial, p_moment=p, record_positions=True)
    pos = ts.positions  # (R, n, d)
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    pair = np.linalg.norm(diff, axis=3) ** p  # (R, n, n)
    dev = np.linalg.norm(pos - ts.m_h[:, None, :], axis=2) ** p  # (R, n)
    return {"t": ts.t, "pair": pair, "dev": dev, "omega": ts.omega_energy}


class _MomentAccumulator:
    """Streaming per-slot mean and SE across trials (order-stable)."""

    def __init__(self):
        self.count = 0
        self.total = None
        self.total_sq = None

    def add(self, arr: np.ndarray) -> None:
        if self.total is None:
            self.total = np.zeros_like(arr)
            self.total_sq = np.zeros_like(arr)
        self.total += arr
        self.total_sq += arr * arr
        self.count += 1

    def mean(self) -> np.ndarray:
        return self.total / self.count

    def sem(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.total)
        var = (self.total_sq - self.total**2 / self.count) / (self.count - 1)
        return np.sqrt(np.maximum(var, 0.0) / self.count)


def _decay_curves(f, params, n, init, seed, n_trials, p, workers):
    """Trial-averaged worst-pair and worst-deviation decay statistics.

    Returns (t, s_pair, se_pair, s_dev, se_dev, omega, se_omega, diverged).
    The max over pairs/indices is taken after trial averaging, and the SE is
    read off at the argmax slot.
    """
    fn = partial(_decay_trial, f=f, params=params, n=n, init=init, seed=seed, p=p)
    results = _run_trials(fn, n_trials, workers)
    acc_pair, acc_dev, acc_om = _MomentAccumulator(), _MomentAccumulator(), _MomentAccumulator()
    t = None
    diverged = 0
    for res in results:
        if res is None:
            diverged += 1
            continue
        t = res["t"]
        acc_pair.add(res["pair"])
        acc_dev.add(res["dev"])
        acc_om.add(res["omega"])
    if acc_pair.count == 0:
        raise DivergedRunError("every trial diverged", trial=-1, step=-1)
    mean_pair, sem_pair = acc_pair.mean(), acc_pair.sem()
    iu, ju = np.triu_indices(n, k=1)
    flat = mean_pair[:, iu, ju]  # (R, n(n-1)/2)
    arg = np.argmax(flat, axis=1)
    rows = np.arange(flat.shape[0])
    s_pair = flat[rows, arg]
    se_pair = sem_pair[:, iu, ju][rows, arg]
    mean_dev, sem_dev = acc_dev.mean(), acc_dev.sem()
    arg_d = np.argmax(mean_dev, axis=1)
    s_dev = mean_dev[rows, arg_d]
    se_dev = sem_dev[rows, arg_d]
    return t, s_pair, se_pair, s_dev, se_dev, acc_om.mean(), acc_om.sem(), diverged


def _rate_check(name, t, values, *, t_start, bound, slack, r2_min, checks):
    """Fit an exponential rate and require it at least as negative as bound."""
    try:
        fit = decay_fit(list(zip(t, values)), t_start=t_start)
    except Exception as exc:  # degenerate data (zeros, too few records)
        checks.append(CheckResult(name, False, detail=f"rate fit failed: {exc}"))
        return None
    limit = bound + slack * abs(bound)
    ok = fit.rate <= limit and fit.r2 >= r2_min
    detail = f"fitted rate {fit.rate:.4f} vs bound {bound:.4f} (slack limit {limit:.4f}), r2={fit.r2:.4f}"
    checks.append(CheckResult(name, ok, observed=fit.rate, bound=limit, detail=detail))
    return fit


def run_decay(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    f = cfg.objective()
    knobs = cfg.knobs
    p = float(knobs["p"])
    params = cfg.model_params()
    init = cfg.init_law()
    n = cfg.n
    report = ExperimentReport(kind="decay", thresholds=cfg.threshold_report().to_dict())

    if n < 2:
        report.checks.append(
            CheckResult("degenerate_single_particle", True, detail="no particle pairs; nothing to measure")
        )
        report.summary["degenerate"] = True
        return report
    records = params.n_steps // params.record_every + 2
    if records * n * n > 25_000_000:
        raise ConfigError(
            "pairwise statistics would need too much memory; increase model.record_every"
        )

    t, s_pair, se_pair, s_dev, se_dev, om, se_om, diverged = _decay_curves(
        f, params, n, init, cfg.seed, cfg.trials, p, workers
    )
    report.divergence_count = diverged

    la = lambda_alpha(f.f_min, cfg.schedule(), params.alpha)
    thr = noise_threshold(params.noise.kind, f.dim, p, params.sigma, la)
    bound = -p * (params.lam - thr)
    t_start = float(knobs["fit_start_frac"]) * params.t_end
    fit_pair = _rate_check(
        "pairwise_distance_rate", t, s_pair,
        t_start=t_start, bound=bound, slack=float(knobs["rate_slack"]),
        r2_min=float(knobs["r2_min"]), checks=report.checks,
    )
    fit_dev = _rate_check(
        "consensus_deviation_rate", t, s_dev,
        t_start=t_start, bound=bound, slack=float(knobs["rate_slack"]),
        r2_min=float(knobs["r2_min"]), checks=report.checks,
    )

    if knobs.get("energy_floor"):
        _energy_floor_check(cfg, f, params, init, t, om, se_om, report)

    rows = []
    for k in range(t.size):
        rows.append((t[k], "max_pair_dist_p", s_pair[k], se_pair[k]))
        rows.append((t[k], "max_dev_consensus_p", s_dev[k], se_dev[k]))
        rows.append((t[k], "omega_energy", om[k], se_om[k]))
    report.tables["decay_timeseries"] = rows
    report.summary = {
        "p": p,
        "threshold": thr,
        "rate_bound": bound,
        "pair_fit": None if fit_pair is None else {"rate": fit_pair.rate, "r2": fit_pair.r2},
        "dev_fit": None if fit_dev is None else {"rate": fit_dev.rate, "r2": fit_dev.r2},
        "trials_used": cfg.trials - diverged,
    }
    return report


def _energy_floor_check(cfg, f, params, init, t, om, se_om, report):
    """Trial-averaged Gibbs energy must stay above its closed-form floor."""
    if f.grad is None or f.hessian_c0 is None:
        report.warnings.append("energy floor skipped: objective lacks gradient or curvature constant")
        return
    la = lambda_alpha(f.f_min, cfg.schedule(), params.alpha)
    lam2 = meanfield_threshold(2.0, params.sigma, la)
    if params.lam <= lam2:
        report.warnings.append("energy floor skipped: drift not above the mean-field threshold")
        return
    if not hasattr(init, "low"):
        report.warnings.append("energy floor skipped: needs a box-supported initial law")
        return
    box = [(float(lo), float(hi)) for lo, hi in zip(init.low, init.high)]
    l_omega = lipschitz_estimate(f, params.alpha, box, n_grid=65)
    floor = weighted_energy_floor(
        t,
        e_omega_in=float(om[0]),
        var_in=init.variance_trace(),
        lam=params.lam,
        sigma=params.sigma,
        alpha=params.alpha,
        f_min=f.f_min,
        h=cfg.schedule(),
        L_omega=l_omega,
        c0=f.hessian_c0,
    )
    margin = float(np.min(om + 3.0 * se_om - floor))
    report.checks.append(
        CheckResult(
            "weighted_energy_floor",
            margin >= 0.0,
            observed=margin,
            bound=0.0,
            detail="min over records of (mean omega + 3 SE - floor)",
        )
    )


# ---------------------------------------------------------------------------
# coupling gap vs ensemble size (finite-N to mean-field)


def _chaos_trial(trial: int, *, f, params, rungs, n_ref, init, seed, times, sub_l, p):
    gaps = np.empty((len(rungs), len(times)))
    wass = np.empty((len(rungs), len(times)))
    sub_idx = stream(seed, trial, SUBSAMPLE_STREAM).permutation(n_ref)[:sub_l]
    for r, n in enumerate(rungs):
        run = coupled_run(
            f, params, n, n_ref, init, seed, trial=trial, p_moment=p, snapshot_times=times
        )
        for c, tau in enumerate(times):
            k = int(np.argmin(np.abs(run.t - tau)))
            if abs(run.t[k] - tau) > params.dt:
                raise InvalidParameterError(
                    f"evaluation time {tau:g} not on the recording grid (nearest {run.t[k]:g})"
                )
            gaps[r, c] = run.gap[k]
            pos_s, pos_b = run.snapshots[float(tau)]
            mu = EmpiricalMeasure(np.repeat(pos_s, sub_l // n, axis=0))
            nu = EmpiricalMeasure(pos_b[sub_idx])
            wass[r, c] = wasserstein_p(mu, nu, p=p, method="exact_assignment")
    return {"gap": gaps, "w": wass}


def run_chaos(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    f = cfg.objective()
    knobs = cfg.knobs
    p = float(knobs["p"])
    params = cfg.model_params()
    init = cfg.init_law()
    rungs = [int(v) for v in knobs["n_ladder"]]
    times = [float(v) for v in knobs["eval_times"]]
    sub_l = int(knobs["subsample"])
    se_tol = float(knobs["se_tol"])
    n_ref = cfg.n_ref
    if sorted(rungs) != rungs or len(set(rungs)) != len(rungs):
        raise ConfigError("n_ladder must be strictly increasing")
    if rungs[-1] > sub_l:
        raise ConfigError(f"largest rung {rungs[-1]} exceeds the matching size {sub_l}")
    for n in rungs:
        if sub_l % n != 0:
            raise ConfigError(f"matching size {sub_l} must be a multiple of every rung (got {n})")
    if sub_l > 512:
        raise ConfigError("matching size above 512 makes the exact assignment too slow")
    if sub_l > n_ref:
        raise ConfigError("matching size cannot exceed n_ref")
    steps = [int(round(tau / params.dt)) for tau in times]
    if len(set(steps)) != len(steps) or any(s > params.n_steps for s in steps):
        raise ConfigError("eval_times must map to distinct steps within the horizon")

    report = ExperimentReport(kind="chaos", thresholds=cfg.threshold_report().to_dict())
    fn = partial(
        _chaos_trial,
        f=f, params=params, rungs=rungs, n_ref=n_ref, init=init,
        seed=cfg.seed, times=times, sub_l=sub_l, p=p,
    )
    results = _run_trials(fn, cfg.trials, workers)
    gap_samples, w_samples = [], []
    for res in results:
        if res is None:
            report.divergence_count += 1
            continue
        gap_samples.append(res["gap"])
        w_samples.append(res["w"])
    if not gap_samples:
        raise DivergedRunError("every trial diverged", trial=-1, step=-1)
    gap_arr = np.stack(gap_samples)  # (M, K, T)
    w_arr = np.stack(w_samples)
    m_used = gap_arr.shape[0]

    def _med_se(arr):
        med = np.median(arr, axis=0)
        if arr.shape[0] < 2:
            return med, np.zeros_like(med)
        se = _MEDIAN_SE * np.std(arr, axis=0, ddof=1) / math.sqrt(arr.shape[0])
        return med, se

    gap_med, gap_se = _med_se(gap_arr)
    w_med, w_se = _med_se(w_arr)

    def _ladder_checks(label, med, se):
        for c, tau in enumerate(times):
            ok = True
            details = []
            for r in range(len(rungs) - 1):
                tol = se_tol * math.hypot(se[r, c], se[r + 1, c])
                if med[r + 1, c] >= med[r, c] + tol:
                    ok = False
                details.append(f"N={rungs[r]}:{med[r, c]:.4g}")
            details.append(f"N={rungs[-1]}:{med[-1, c]:.4g}")
            report.checks.append(
                CheckResult(
                    f"{label}_decreasing_t{tau:g}",
                    ok,
                    detail=" > ".join(details) + f" (tolerance {se_tol} SE)",
                )
            )

    _ladder_checks("coupling_gap", gap_med, gap_se)
    _ladder_checks("wasserstein", w_med, w_se)

    rows = []
    for r, n in enumerate(rungs):
        for c, tau in enumerate(times):
            rows.append((tau, f"coupling_gap_N{n}", gap_med[r, c], gap_se[r, c]))
            rows.append((tau, f"wasserstein_N{n}", w_med[r, c], w_se[r, c]))
    report.tables["chaos_ladder"] = rows
    report.summary = {
        "p": p,
        "n_ladder": rungs,
        "eval_times": times,
        "trials_used": m_used,
        "gap_medians": gap_med.tolist(),
        "wasserstein_medians": w_med.tolist(),
    }
    return report


# ---------------------------------------------------------------------------
# sharpened-weight limit (soft minimum and consensus value vs alpha)


def _laplace_dynamic_trial(trial: int, *, f, params, n, init, seed, tail_frac):
    ts = simulate(f, params, n, init, seed, trial=trial)
    keep = ts.t >= (1.0 - tail_frac) * params.t_end - 1e-12
    x_inf = ts.m_h[keep].mean(axis=0)
    return float(f.eval(x_inf[None, :])[0])


def run_laplace(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    f = cfg.objective()
    knobs = cfg.knobs
    ladder = [float(a) for a in knobs["alpha_ladder"]]
    if len(ladder) < 2 or sorted(ladder) != ladder:
        raise ConfigError("alpha_ladder must be increasing with at least two entries")
    mode = knobs["mode"]
    if mode not in ("static", "dynamic"):
        raise ConfigError(f"laplace mode must be 'static' or 'dynamic', got {mode!r}")
    init = cfg.init_law()
    report = ExperimentReport(kind="laplace")
    if f.argmin is not None and not init.contains(np.asarray(f.argmin)):
        report.warnings.append("initial law does not cover the minimizer; the gap may not vanish")

    rows = []
    if mode == "static":
        n_samples = int(knobs["n_samples"])
        cloud = init.draw(n_samples, stream(cfg.seed, 0, INIT_STREAM))
        fx_min = float(np.min(f.eval(cloud)))
        gaps = []
        for a in ladder:
            gap = laplace_value(cloud, f, a) - f.f_min
            gaps.append(gap)
            lo = fx_min - f.f_min
            hi = lo + math.log(n_samples) / a
            report.checks.append(
                CheckResult(
                    f"bracket_alpha{a:g}",
                    lo - 1e-9 <= gap <= hi + 1e-9,
                    observed=gap,
                    bound=hi,
                    detail=f"soft-min gap within [{lo:.4g}, {hi:.4g}]",
                )
            )
            rows.append((0.0, f"laplace_gap_alpha{a:g}", gap, 0.0))
        dec = all(gaps[k + 1] < gaps[k] + 1e-12 for k in range(len(gaps) - 1))
        report.checks.append(
            CheckResult(
                "gap_decreasing_in_alpha",
                dec,
                detail=" > ".join(f"{g:.4g}" for g in gaps),
            )
        )
        report.summary = {"mode": mode, "alpha_ladder": ladder, "gaps": gaps, "n_samples": n_samples}
    else:
        params0 = cfg.model_params()
        reps = int(knobs["replicates"])
        tail = float(knobs["tail_frac"])
        meds, ses = [], []
        for a in ladder:
            params = cfg.model_params(alpha=a)
            fn = partial(
                _laplace_dynamic_trial,
                f=f, params=params, n=cfg.n, init=init, seed=cfg.seed, tail_frac=tail,
            )
            vals = [v for v in _run_trials(fn, reps, workers) if v is not None]
            report.divergence_count += reps - len(vals)
            if not vals:
                raise DivergedRunError("every replicate diverged", trial=-1, step=-1)
            arr = np.array(vals) - f.f_min
            meds.append(float(np.median(arr)))
            ses.append(_MEDIAN_SE * float(np.std(arr, ddof=1)) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0)
            rows.append((params0.t_end, f"consensus_gap_alpha{a:g}", meds[-1], ses[-1]))
        ok = all(
            meds[k + 1] < meds[k] + 2.0 * math.hypot(ses[k], ses[k + 1]) + 1e-12
            for k in range(len(meds) - 1)
        )
        report.checks.append(
            CheckResult(
                "consensus_gap_decreasing_in_alpha",
                ok,
                detail=" > ".join(f"{g:.4g}" for g in meds) + " (2 SE tolerance)",
            )
        )
        report.summary = {"mode": mode, "alpha_ladder": ladder, "gaps": meds, "replicates": reps}
    report.tables["laplace_ladder"] = rows
    return report


# ---------------------------------------------------------------------------
# mean-field variance decay and consensus quality vs alpha


def _meanfield_trial(trial: int, *, f, params, n_ref, init, seed):
    ts = simulate_meanfield(f, params, n_ref, init, seed, trial=trial)
    return {"t": ts.t, "v2": ts.v2, "m_h": ts.m_h}


def run_meanfield(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    f = cfg.objective()
    knobs = cfg.knobs
    ladder = [float(a) for a in (knobs["alpha_ladder"] or [cfg.data["model"]["alpha"]])]
    if sorted(ladder) != ladder:
        raise ConfigError("alpha_ladder must be increasing")
    reps = int(knobs["replicates"])
    tail = float(knobs["tail_frac"])
    slack = float(knobs["rate_slack"])
    init = cfg.init_law()
    h = cfg.schedule()
    report = ExperimentReport(kind="meanfield", thresholds=cfg.threshold_report().to_dict())

    rows = []
    gap_meds, gap_ses, rates = [], [], []
    for a in ladder:
        params = cfg.model_params(alpha=a)
        fn = partial(_meanfield_trial, f=f, params=params, n_ref=cfg.n_ref, init=init, seed=cfg.seed)
        results = [r for r in _run_trials(fn, reps, workers) if r is not None]
        report.divergence_count += reps - len(results)
        if not results:
            raise DivergedRunError("every replicate diverged", trial=-1, step=-1)
        t = results[0]["t"]
        v2 = np.stack([r["v2"] for r in results])
        v2_mean = v2.mean(axis=0)
        v2_se = v2.std(axis=0, ddof=1) / math.sqrt(v2.shape[0]) if v2.shape[0] > 1 else np.zeros_like(v2_mean)

        la = lambda_alpha(f.f_min, h, a)
        bound = -2.0 * (params.lam - meanfield_threshold(2.0, params.sigma, la))
        fit = _rate_check(
            f"variance_rate_alpha{a:g}", t, v2_mean,
            t_start=float(knobs["fit_start_frac"]) * params.t_end,
            bound=bound, slack=slack, r2_min=0.0, checks=report.checks,
        )
        rates.append(None if fit is None else fit.rate)

        keep = t >= (1.0 - tail) * params.t_end - 1e-12
        finals = np.array([float(f.eval(r["m_h"][keep].mean(axis=0)[None, :])[0]) for r in results])
        gaps = finals - f.f_min
        gap_meds.append(float(np.median(gaps)))
        gap_ses.append(
            _MEDIAN_SE * float(np.std(gaps, ddof=1)) / math.sqrt(gaps.size) if gaps.size > 1 else 0.0
        )

        for k in range(t.size):
            rows.append((t[k], f"var_alpha{a:g}", v2_mean[k], v2_se[k]))
        rows.append((params.t_end, f"gap_alpha{a:g}", gap_meds[-1], gap_ses[-1]))

    if len(ladder) > 1:
        ok = all(
            gap_meds[k + 1] <= gap_meds[k] + 2.0 * math.hypot(gap_ses[k], gap_ses[k + 1]) + 1e-12
            for k in range(len(gap_meds) - 1)
        )
        report.checks.append(
            CheckResult(
                "consensus_gap_nonincreasing_in_alpha",
                ok,
                detail=" -> ".join(f"{g:.4g}" for g in gap_meds) + " (2 SE tolerance)",
            )
        )
    max_gap = float(knobs["max_final_gap"])
    if math.isfinite(max_gap):
        report.checks.append(
            CheckResult(
                "final_gap_small",
                gap_meds[-1] <= max_gap,
                observed=gap_meds[-1],
                bound=max_gap,
                detail=f"median objective gap at alpha={ladder[-1]:g}",
            )
        )
    report.tables["meanfield_ladder"] = rows
    report.summary = {
        "alpha_ladder": ladder,
        "gap_medians": gap_meds,
        "variance_rates": rates,
        "replicates": reps,
    }
    return report


# ---------------------------------------------------------------------------
# noise geometry variants


def run_noise_variants(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    f = cfg.objective()
    knobs = cfg.knobs
    p = float(knobs["p"])
    init = cfg.init_law()
    h = cfg.schedule()
    m = cfg.data["model"]
    la = lambda_alpha(f.f_min, h, m["alpha"])
    d = f.dim
    report = ExperimentReport(kind="noise_variants", thresholds=cfg.threshold_report().to_dict())

    variants = ["baseline_scalar", "anisotropic_hadamard", "common_direction", "isotropic"]
    if d == 1:
        variants = ["baseline_scalar"]
        report.warnings.append("dimension 1: all noise geometries coincide, running the baseline only")

    rows = []
    summary = {}
    for kind in variants:
        thr = noise_threshold(kind, d, p, m["sigma"], la)
        if knobs["auto_lambda"]:
            lam = float(knobs["lambda_rule_mult"]) * thr + float(knobs["lambda_rule_offset"])
        else:
            lam = m["lambda"]
        if lam <= thr:
            report.warnings.append(
                f"{kind}: drift {lam:g} does not clear the threshold {thr:g}, check skipped"
            )
            report.checks.append(
                CheckResult(f"{kind}_rate", True, detail="skipped: contraction condition unmet")
            )
            summary[kind] = {"lambda": lam, "threshold": thr, "skipped": True}
            continue
        params = cfg.model_params(lam=lam, noise=kind)
        t, s_pair, se_pair, _, _, _, _, diverged = _decay_curves(
            f, params, cfg.n, init, cfg.seed, cfg.trials, p, workers
        )
        report.divergence_count += diverged
        bound = -p * (lam - thr)
        fit = _rate_check(
            f"{kind}_rate", t, s_pair,
            t_start=float(knobs["fit_start_frac"]) * params.t_end,
            bound=bound, slack=float(knobs["rate_slack"]),
            r2_min=float(knobs["r2_min"]), checks=report.checks,
        )
        for k in range(t.size):
            rows.append((t[k], f"max_pair_dist_{kind}", s_pair[k], se_pair[k]))
        summary[kind] = {
            "lambda": lam,
            "threshold": thr,
            "rate_bound": bound,
            "fit": None if fit is None else {"rate": fit.rate, "r2": fit.r2},
        }
    report.tables["noise_variants"] = rows
    report.summary = {"p": p, "dimension": d, "variants": summary}
    return report


# ---------------------------------------------------------------------------
# exponential-in-time concentration frequencies


def _concentration_trial(trial: int, *, f, params, n, init, seed, p):
    ts = simulate(f, params, n, init, seed, trial=trial, p_moment=p)
    return ts


def run_concentration(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    f = cfg.objective()
    knobs = cfg.knobs
    p = float(knobs["p"])
    rep = cfg.threshold_report()
    if rep.kappa_max is None:
        raise ConfigError("drift below the coupling threshold; no admissible exponent")
    frac = float(knobs["kappa_frac"])
    if not (0.0 < frac <= 0.9):
        raise ConfigError(f"kappa_frac must lie in (0, 0.9], got {frac:g}")
    kappa = frac * rep.kappa_max
    init = cfg.init_law()
    params = cfg.model_params()
    v0 = init.variance_trace()
    a_values = [float(a) * v0 for a in knobs["a_ladder"]]
    n_ladder = [int(n) for n in knobs["n_ladder"]]
    se_tol = float(knobs["se_tol"])
    if sorted(n_ladder) != n_ladder or len(set(n_ladder)) != len(n_ladder):
        raise ConfigError("n_ladder must be strictly increasing")
    report = ExperimentReport(kind="concentration", thresholds=rep.to_dict())

    freq = np.empty((len(n_ladder), len(a_values)))
    se = np.empty_like(freq)
    m_trials = cfg.trials
    for r, n in enumerate(n_ladder):
        fn = partial(_concentration_trial, f=f, params=params, n=n, init=init, seed=cfg.seed, p=p)
        results = [ts for ts in _run_trials(fn, m_trials, workers) if ts is not None]
        report.divergence_count += m_trials - len(results)
        if not results:
            raise DivergedRunError("every trial diverged", trial=-1, step=-1)
        for c, a in enumerate(a_values):
            fr = concentration_frequency(results, p, kappa, a)
            freq[r, c] = fr
            se[r, c] = math.sqrt(fr * (1.0 - fr) / len(results))

    for c, a in enumerate(a_values):
        ok = all(
            freq[r + 1, c] <= freq[r, c] + se_tol * math.hypot(se[r, c], se[r + 1, c])
            for r in range(len(n_ladder) - 1)
        )
        report.checks.append(
            CheckResult(
                f"freq_nonincreasing_in_n_A{a:g}",
                ok,
                detail=" -> ".join(f"N={n}:{freq[r, c]:.3f}" for r, n in enumerate(n_ladder)),
            )
        )
    for r, n in enumerate(n_ladder):
        ok = all(
            freq[r, c + 1] <= freq[r, c] + se_tol * math.hypot(se[r, c], se[r, c + 1])
            for c in range(len(a_values) - 1)
        )
        report.checks.append(
            CheckResult(
                f"freq_nonincreasing_in_A_N{n}",
                ok,
                detail=" -> ".join(f"A={a:.3g}:{freq[r, c]:.3f}" for c, a in enumerate(a_values)),
            )
        )

    rows = []
    for r, n in enumerate(n_ladder):
        for c, a in enumerate(a_values):
            rows.append((params.t_end, f"exceed_freq_A{a:g}_N{n}", freq[r, c], se[r, c]))
    report.tables["concentration_grid"] = rows
    report.summary = {
        "kappa": kappa,
        "kappa_max": rep.kappa_max,
        "a_values": a_values,
        "n_ladder": n_ladder,
        "frequencies": freq.tolist(),
    }
    return report


# ---------------------------------------------------------------------------
# plain simulation


def run_simulate(cfg: ExperimentConfig, workers: int = 1) -> ExperimentReport:
    f = cfg.objective()
    params = cfg.model_params()
    report = ExperimentReport(kind="simulate", thresholds=cfg.threshold_report().to_dict())
    try:
        ts = simulate(f, params, cfg.n, cfg.init_law(), cfg.seed, trial=0)
    except DivergedRunError as exc:
        report.divergence_count = 1
        report.checks.append(CheckResult("trajectory_finite", False, detail=str(exc)))
        return report
    report.checks.append(CheckResult("trajectory_finite", True))
    rows = []
    for k in range(ts.t.size):
        tk = ts.t[k]
        rows.append((tk, "v2", ts.v2[k], 0.0))
        rows.append((tk, "beta", ts.beta[k], 0.0))
        rows.append((tk, "omega_energy", ts.omega_energy[k], 0.0))
        rows.append((tk, "best_f", ts.best_f[k], 0.0))
        for j in range(ts.m_h.shape[1]):
            rows.append((tk, f"m_h_{j}", ts.m_h[k, j], 0.0))
    report.tables["trajectory"] = rows
    report.summary = {
        "final_best_f": float(ts.best_f[-1]),
        "final_v2": float(ts.v2[-1]),
        "final_m_h": [float(v) for v in ts.m_h[-1]],
    }
    return report


# ---------------------------------------------------------------------------
# dispatch and output


_RUNNERS = {
    "simulate": run_simulate,
    "decay": run_decay,
    "chaos": run_chaos,
    "laplace": run_laplace,
    "meanfield": run_meanfield,
    "noise_variants": run_noise_variants,
    "concentration": run_concentration,
}


def run_experiment(cfg: ExperimentConfig, workers: int = 1, strict: bool = False) -> ExperimentReport:
    warnings = gate_config(cfg, strict)
    report = _RUNNERS[cfg.kind](cfg, workers=workers)
    report.warnings = warnings + report.warnings
    return report


def _py(obj):
    if isinstance(obj, dict):
        return {k: _py(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_py(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_py(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_csv(path: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "statistic", "estimate", "stderr"])
        for t, stat, est, err in rows:
            writer.writerow([repr(float(t)), stat, repr(float(est)), repr(float(err))])


def summary_dict(report: ExperimentReport) -> dict:
    return _py(
        {
            "kind": report.kind,
            "passed": report.passed,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "observed": c.observed,
                    "bound": c.bound,
                    "detail": c.detail,
                }
                for c in report.checks
            ],
            "thresholds": report.thresholds,
            "summary": report.summary,
            "warnings": report.warnings,
            "divergence_count": report.divergence_count,
        }
    )


def write_manifest(path: str, cfg: ExperimentConfig, report: ExperimentReport, outputs, wall_clock_s: float) -> None:
    manifest = _py(
        {
            "version": __version__,
            "kind": cfg.kind,
            "seed": cfg.seed,
            "config": cfg.data,
            "thresholds": report.thresholds,
            "passed": report.passed,
            "divergence_count": report.divergence_count,
            "outputs": sorted(outputs),
            "wall_clock_s": wall_clock_s,
        }
    )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_and_write(
    cfg: ExperimentConfig,
    workers: int = 1,
    strict: bool = False,
) -> tuple:
    """Run the configured experiment and write its outputs.

    Returns (report, manifest_path).  Data files (CSV tables, summary JSON)
    are deterministic functions of (config, seed); the manifest additionally
    records wall-clock time, so replay comparisons should exclude it.
    """
    t0 = time.monotonic()
    report = run_experiment(cfg, workers=workers, strict=strict)
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    if "csv" in cfg.formats:
        for name, rows in sorted(report.tables.items()):
            fname = f"{name}.csv"
            _write_csv(os.path.join(out_dir, fname), rows)
            outputs.append(fname)
    if "json" in cfg.formats:
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary_dict(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append("summary.json")
    manifest_path = os.path.join(out_dir, "manifest.json")
    write_manifest(manifest_path, cfg, report, outputs, time.monotonic() - t0)
    return report, manifest_path


def replay_manifest(manifest_path: str, out_dir: str, workers: int = 1) -> tuple:
    """Re-run the experiment recorded in a manifest into a fresh directory.

    The config echo in the manifest is already normalized, so the replay
    sees exactly the knobs of the original run; with the recorded seed the
    data files come out byte-identical.
    """
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = ExperimentConfig(normalize(manifest["config"])).with_overrides(out_dir=out_dir)
    return run_and_write(cfg, workers=workers, strict=False)
