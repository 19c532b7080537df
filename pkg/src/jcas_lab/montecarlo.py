"""Monte Carlo validation of the covariance bounds and distortion accounting.

``expected_covariance_mc`` runs the stochastic covariance recursion with
Bernoulli measurement arrivals (covariance only -- the expected covariance
does not depend on the measurement values, which makes the check sharp and
fast) and compares the empirical mean at the horizon against the
finite-horizon lower/upper iterates S_n and V_n started from the same P0.

``empirical_block_distortion`` runs the full state/filter simulation and
averages the per-block distortion, the quantity the steady-state traces are
supposed to predict.

Determinism: trial t uses the seed ``seed XOR t``; trial results are reduced
in trial-index order with a centered accumulation (deviations from the first
trial), so reruns are bit-identical, any worker split leaves the result
unchanged, and zero-variance cases reproduce the deterministic iterate
exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .filtering import derive_trial_seed, make_rng, run_filter
from .riccati import BeamPolicy, critical_lambda, gamma_bs, riccati_kernel, riccati_step
from .statespace import GaussMarkovModel, as_matrix, lyap_kernel, lyapunov_step

VERDICT_WITHIN = "within"
VERDICT_VIOLATED = "violated"

#: lam closer than this to the critical sensing probability gets flagged
NEAR_CRITICAL_BAND = 0.05


@dataclass
class McReport:
    """Sandwich check of the empirical mean covariance trace at one lam."""

    lam: float
    trials: int
    horizon: int
    empirical_mean_trace: float
    std_error: float
    s_bound_trace: float
    v_bound_trace: float
    verdict: str
    near_critical: bool = False
    infinite_band: bool = False
    per_step_mean: np.ndarray | None = None
    per_step_s: np.ndarray | None = None
    per_step_v: np.ndarray | None = None

    def band(self) -> tuple:
        return (
            self.s_bound_trace - 3.0 * self.std_error,
            self.v_bound_trace + 3.0 * self.std_error,
        )

    def to_text(self) -> str:
        lo, hi = self.band()
        lines = [
            f"lam={self.lam!r} trials={self.trials} horizon={self.horizon}",
            f"  empirical mean trace : {self.empirical_mean_trace!r}",
            f"  std error            : {self.std_error!r}",
            f"  lower bound tr(S_n)  : {self.s_bound_trace!r}",
            f"  upper bound tr(V_n)  : {self.v_bound_trace!r}",
            f"  3-sigma band         : [{lo!r}, {hi!r}]",
            f"  verdict              : {self.verdict}",
        ]
        if self.infinite_band:
            lines.append("  note: single trial, no variance estimate (infinite band)")
        if self.near_critical:
            lines.append("  note: near-critical sensing probability, interpret with care")
        return "\n".join(lines)


CSV_HEADER = (
    "lam,trials,horizon,empirical_mean_trace,std_error,"
    "s_bound_trace,v_bound_trace,verdict,near_critical,infinite_band"
)


def mc_report_csv_row(report: McReport) -> str:
    return (
        f"{report.lam!r},{report.trials},{report.horizon},"
        f"{report.empirical_mean_trace!r},{report.std_error!r},"
        f"{report.s_bound_trace!r},{report.v_bound_trace!r},"
        f"{report.verdict},{1 if report.near_critical else 0},"
        f"{1 if report.infinite_band else 0}"
    )


def write_per_step_csv(report: McReport, path, comment: str | None = None) -> None:
    """Long-format per-step traces: i, mean_trace, s_bound, v_bound."""
    if report.per_step_mean is None:
        raise ParameterError("report was built without per-step traces")
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append("i,mean_trace,s_bound,v_bound")
    for i in range(len(report.per_step_mean)):
        lines.append(
            f"{i},{float(report.per_step_mean[i])!r},"
            f"{float(report.per_step_s[i])!r},{float(report.per_step_v[i])!r}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _centered_mean(values: list) -> np.ndarray:
    """Mean by fixed-order accumulation of deviations from the first value.

    Identical inputs give back the first value bit-for-bit, which keeps the
    zero-variance sanity cases exact.
    """
    ref = values[0]
    acc = np.zeros_like(ref)
    for v in values:
        acc = acc + (v - ref)
    return ref + acc / len(values)


def _map_trials(fn, trials: int, threads: int) -> list:
    if threads <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def expected_covariance_mc(
    model: GaussMarkovModel,
    lam: float,
    horizon: int,
    trials: int,
    seed: int,
    p0=None,
    per_step: bool = False,
    threads: int = 1,
    critical: float | None = None,
) -> McReport:
    """Empirical E[P_n] under Bernoulli(lam) arrivals vs the S_n/V_n iterates.

    Each trial iterates the covariance recursion for ``horizon`` steps,
    taking the full-measurement step on arrival and the open-loop step
    otherwise.  The verdict checks
    tr(S_n) - 3 SE <= tr(mean P_n) <= tr(V_n) + 3 SE.
    ``critical`` may pass a precomputed critical sensing probability for the
    near-critical flag; None computes it (coarsely), math.nan disables it.
    """
    if not (0.0 <= lam <= 1.0):
        raise ParameterError(f"lam must lie in [0, 1], got {lam}")
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    p0 = model.Q.copy() if p0 is None else as_matrix(p0, "P0")

    # deterministic finite-horizon bounds from the same starting covariance
    s_seq = [p0]
    v_seq = [p0]
    for _ in range(horizon):
        s_seq.append(lyapunov_step(model, s_seq[-1], 1.0 - lam))
        v_seq.append(gamma_bs(v_seq[-1], lam, model))

    if model.is_scalar:
        a, c, q, r = model.scalars()
        p0_val = float(p0[0, 0])

        def one_trial(t: int):
            rng = make_rng(derive_trial_seed(seed, t))
            arrivals = rng.random(horizon) < lam
            p = p0_val
            if per_step:
                track = np.empty(horizon + 1)
                track[0] = p
                for j in range(horizon):
                    p = (
                        riccati_kernel(a, c, q, r, p, 1.0)
                        if arrivals[j]
                        else lyap_kernel(a, q, p, 1.0)
                    )
                    track[j + 1] = p
                return np.array([[p]]), track
            for j in range(horizon):
                p = (
                    riccati_kernel(a, c, q, r, p, 1.0)
                    if arrivals[j]
                    else lyap_kernel(a, q, p, 1.0)
                )
            return np.array([[p]]), None

    else:

        def one_trial(t: int):
            rng = make_rng(derive_trial_seed(seed, t))
            arrivals = rng.random(horizon) < lam
            p = p0
            track = np.empty(horizon + 1) if per_step else None
            if per_step:
                track[0] = float(np.trace(p))
            for j in range(horizon):
                p = (
                    riccati_step(model, p, 1.0)
                    if arrivals[j]
                    else lyapunov_step(model, p, 1.0)
                )
                if per_step:
                    track[j + 1] = float(np.trace(p))
            return p, track

    results = _map_trials(one_trial, trials, threads)
    finals = [res[0] for res in results]
    mean_p = _centered_mean(finals)
    traces = np.array([float(np.trace(p)) for p in finals])
    if trials > 1:
        std_error = float(np.std(traces, ddof=1) / math.sqrt(trials))
        infinite_band = False
    else:
        std_error = math.inf
        infinite_band = True

    emp = float(np.trace(mean_p))
    s_trace = float(np.trace(s_seq[-1]))
    v_trace = float(np.trace(v_seq[-1]))
    within = (s_trace - 3.0 * std_error) <= emp <= (v_trace + 3.0 * std_error)

    if critical is None:
        critical = critical_lambda(model, bisect_tol=1e-3)
    near = (not math.isnan(critical)) and abs(lam - critical) < NEAR_CRITICAL_BAND

    per_mean = per_s = per_v = None
    if per_step:
        per_mean = _centered_mean([res[1] for res in results])
        per_s = np.array([float(np.trace(s)) for s in s_seq])
        per_v = np.array([float(np.trace(v)) for v in v_seq])

    return McReport(
        lam=lam,
        trials=trials,
        horizon=horizon,
        empirical_mean_trace=emp,
        std_error=std_error,
        s_bound_trace=s_trace,
        v_bound_trace=v_trace,
        verdict=VERDICT_WITHIN if within else VERDICT_VIOLATED,
        near_critical=near,
        infinite_band=infinite_band,
        per_step_mean=per_mean,
        per_step_s=per_s,
        per_step_v=per_v,
    )


@dataclass
class BlockDistortionReport:
    """Trial-averaged per-block distortion with a 3-sigma band."""

    trials: int
    horizon: int
    mean: float
    std_error: float
    per_index_mean: np.ndarray = field(repr=False, default=None)

    def ci3(self) -> tuple:
        return (self.mean - 3.0 * self.std_error, self.mean + 3.0 * self.std_error)


def empirical_block_distortion(
    model: GaussMarkovModel,
    policy: BeamPolicy,
    horizon: int,
    trials: int,
    seed: int,
    s0_mean,
    s0_cov,
    threads: int = 1,
) -> BlockDistortionReport:
    """Average block distortion over independent filtered trajectories.

    The initial true state is drawn from N(s0_mean, s0_cov) and the filter
    starts from the matching estimate/covariance pair.  Also returns the
    per-index mean distortion sequence for tracking-loss monitoring.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")

    def one_trial(t: int):
        traj = run_filter(
            model, policy, horizon, s0_mean, s0_cov, derive_trial_seed(seed, t)
        )
        return traj.block_distortion(), traj.per_letter_distortions

    results = _map_trials(one_trial, trials, threads)
    blocks = np.array([res[0] for res in results])
    mean = float(_centered_mean([np.array(b) for b in blocks]))
    if trials > 1:
        std_error = float(np.std(blocks, ddof=1) / math.sqrt(trials))
    else:
        std_error = math.inf
    per_index = _centered_mean([res[1] for res in results])
    return BlockDistortionReport(trials, horizon, mean, std_error, per_index)


def tracking_loss_monitor(per_index_distortion, threshold: float):
    """First index whose mean distortion exceeds the loss threshold, else None."""
    if not (threshold > 0.0):
        raise ParameterError(f"loss threshold must be positive, got {threshold}")
    for i, value in enumerate(per_index_distortion):
        if value > threshold:
            return i
    return None
