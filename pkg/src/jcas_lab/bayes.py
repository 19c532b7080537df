"""Desk-scale finite-alphabet engine for the general Markov-state model.

Works entirely with exact enumeration at small alphabet sizes: recursive
predict/update posterior filtering, the risk-minimizing state estimator, the
input-conditioned sensing cost, and a gridded product-distribution search for
the best rate under a distortion budget.  Everything is in nats.

Alphabets are index sets 0..size-1.  The channel is a joint conditional
table P(y, z | x, s); the state evolves by a row-stochastic kernel
P(s' | s) from a known initial distribution.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EnumerationLimitError,
    EvidenceError,
    ParameterError,
    SchemaError,
)

PROB_TOL = 1e-12

#: enumeration guards (documented desk-scale bounds)
MAX_STATES_EXACT = 5
MAX_STEPS_EXACT = 8
MAX_COST_PATHS = 200_000
MAX_GRID_COMBOS = 5_000_000


@dataclass(frozen=True)
class DiscreteJcasModel:
    """Finite-alphabet channel-with-state model.

    channel[x, s, y, z] = P(y, z | x, s); markov[s, s'] = P(s' | s);
    initial[s] is the time-0 state prior; distortion[s, shat] >= 0 with the
    estimate alphabet indexing the columns (a subset relabeling of the state
    alphabet).
    """

    channel: np.ndarray
    markov: np.ndarray
    initial: np.ndarray
    distortion: np.ndarray

    def __post_init__(self):
        channel = np.asarray(self.channel, dtype=float)
        markov = np.asarray(self.markov, dtype=float)
        initial = np.asarray(self.initial, dtype=float).reshape(-1)
        distortion = np.asarray(self.distortion, dtype=float)
        if channel.ndim != 4:
            raise SchemaError(f"channel table must be 4-D (x,s,y,z), got {channel.ndim}-D")
        nx, ns, ny, nz = channel.shape
        if markov.shape != (ns, ns):
            raise SchemaError(f"markov kernel must be {ns}x{ns}, got {markov.shape}")
        if initial.shape != (ns,):
            raise SchemaError(f"initial distribution must have {ns} entries")
        if distortion.ndim != 2 or distortion.shape[0] != ns:
            raise SchemaError(f"distortion table must have {ns} rows, got {distortion.shape}")
        if np.any(channel < 0):
            raise SchemaError("channel table has negative entries")
        for x in range(nx):
            for s in range(ns):
                tot = float(channel[x, s].sum())
                if abs(tot - 1.0) > PROB_TOL:
                    raise SchemaError(f"channel row (x={x}, s={s}) sums to {tot!r}, expected 1")
        if np.any(markov < 0):
            raise SchemaError("markov kernel has negative entries")
        for s in range(ns):
            tot = float(markov[s].sum())
            if abs(tot - 1.0) > PROB_TOL:
                raise SchemaError(f"markov row (s={s}) sums to {tot!r}, expected 1")
        if np.any(initial < 0) or abs(float(initial.sum()) - 1.0) > PROB_TOL:
            raise SchemaError("initial distribution must be nonnegative and sum to 1")
        if not np.all(np.isfinite(distortion)) or np.any(distortion < 0):
            raise SchemaError("distortion entries must be finite and nonnegative")
        for name, arr in (
            ("channel", channel),
            ("markov", markov),
            ("initial", initial),
            ("distortion", distortion),
        ):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def nx(self) -> int:
        return self.channel.shape[0]

    @property
    def ns(self) -> int:
        return self.channel.shape[1]

    @property
    def ny(self) -> int:
        return self.channel.shape[2]

    @property
    def nz(self) -> int:
        return self.channel.shape[3]

    @property
    def n_estimates(self) -> int:
        return self.distortion.shape[1]

    def z_likelihood(self) -> np.ndarray:
        """P(z | x, s): channel marginalized over y; shape (nx, ns, nz)."""
        return self.channel.sum(axis=2)

    def y_likelihood(self) -> np.ndarray:
        """P(y | x, s): channel marginalized over z; shape (nx, ns, ny)."""
        return self.channel.sum(axis=3)


@dataclass(frozen=True)
class Belief:
    """Distribution over the state alphabet at one time index."""

    probabilities: np.ndarray
    time_index: int = 0

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).reshape(-1)
        if np.any(p < -PROB_TOL) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ParameterError("belief must be a probability distribution")
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)


def belief_predict(belief: Belief, model: DiscreteJcasModel) -> Belief:
    """Push the belief through the state kernel: b'(s') = sum_s P(s'|s) b(s)."""
    return Belief(belief.probabilities @ model.markov, belief.time_index + 1)


def belief_update(belief: Belief, x: int, z: int, model: DiscreteJcasModel) -> Belief:
    """Condition on a measurement: b'(s) proportional to P(z|x,s) b(s).

    Zero-probability evidence raises EvidenceError rather than silently
    renormalizing; it signals a model/trace mismatch.
    """
    like = model.z_likelihood()[x, :, z]
    post = like * belief.probabilities
    total = float(post.sum())
    if total <= 0.0:
        raise EvidenceError(
            f"measurement z={z} has zero probability under input x={x}"
        )
    return Belief(post / total, belief.time_index)


def optimal_estimate(belief: Belief, model: DiscreteJcasModel):
    """Risk-minimizing estimate under the belief; ties break to the smallest index.

    Returns (estimate_index, expected_per_letter_distortion).
    """
    costs = belief.probabilities @ model.distortion
    idx = int(np.argmin(costs))
    return idx, float(costs[idx])


def bruteforce_posterior(x_seq, z_seq, model: DiscreteJcasModel) -> Belief:
    """Exact posterior over the current state by full path enumeration.

    Sums P(s_0) prod_j P(s_j|s_{j-1}) P(z_j|x_j,s_j) over every state path;
    the independent oracle for the recursive predict/update filter.  Empty
    sequences return the initial distribution.
    """
    x_seq = list(x_seq)
    z_seq = list(z_seq)
    if len(x_seq) != len(z_seq):
        raise ParameterError("x and z sequences must have equal length")
    steps = len(x_seq)
    if model.ns > MAX_STATES_EXACT or steps > MAX_STEPS_EXACT:
        raise EnumerationLimitError(
            f"exact enumeration limited to |S| <= {MAX_STATES_EXACT}, "
            f"steps <= {MAX_STEPS_EXACT}"
        )
    if steps == 0:
        return Belief(model.initial.copy(), 0)
    pz = model.z_likelihood()
    post = np.zeros(model.ns)
    for path in itertools.product(range(model.ns), repeat=steps + 1):
        w = model.initial[path[0]]
        for j in range(1, steps + 1):
            if w == 0.0:
                break
            w *= model.markov[path[j - 1], path[j]] * pz[x_seq[j - 1], path[j], z_seq[j - 1]]
        post[path[-1]] += w
    total = float(post.sum())
    if total <= 0.0:
        raise EvidenceError("measurement sequence has zero probability")
    return Belief(post / total, steps)


def _estimates_along(x_seq, z_path, model: DiscreteJcasModel):
    """Recursive-estimator outputs [shat_0..shat_n] along one measurement path.

    Returns None when the path has zero marginal evidence (and therefore
    zero joint probability with every state path).
    """
    belief = Belief(model.initial.copy(), 0)
    ests = [optimal_estimate(belief, model)[0]]
    for x, z in zip(x_seq, z_path):
        belief = belief_predict(belief, model)
        try:
            belief = belief_update(belief, x, z, model)
        except EvidenceError:
            return None
        ests.append(optimal_estimate(belief, model)[0])
    return ests


def sensing_cost(x_seq, model: DiscreteJcasModel) -> float:
    """Expected block distortion of the recursive estimator given the inputs.

    Exact: enumerates every (state path, measurement path) pair, weights by
    P(s^n) P(z^n | x^n, s^n), runs the recursive estimator along the
    measurement path, and averages the n+1 per-letter distortions
    (index 0, estimated from the prior alone, included).
    """
    x_seq = [int(x) for x in x_seq]
    n = len(x_seq)
    for x in x_seq:
        if not (0 <= x < model.nx):
            raise ParameterError(f"input symbol {x} outside alphabet of size {model.nx}")
    n_paths = model.ns ** (n + 1) * model.nz ** n
    if n_paths > MAX_COST_PATHS:
        raise EnumerationLimitError(
            f"sensing cost enumeration would visit {n_paths} paths "
            f"(limit {MAX_COST_PATHS})"
        )
    if n == 0:
        belief = Belief(model.initial.copy(), 0)
        sh0, _ = optimal_estimate(belief, model)
        return float(model.initial @ model.distortion[:, sh0])

    pz = model.z_likelihood()
    z_paths = list(itertools.product(range(model.nz), repeat=n))
    est_by_zpath = {zp: _estimates_along(x_seq, zp, model) for zp in z_paths}

    total = 0.0
    for s_path in itertools.product(range(model.ns), repeat=n + 1):
        ps = model.initial[s_path[0]]
        for j in range(1, n + 1):
            ps *= model.markov[s_path[j - 1], s_path[j]]
        if ps == 0.0:
            continue
        for zp in z_paths:
            w = ps
            for j in range(1, n + 1):
                w *= pz[x_seq[j - 1], s_path[j], zp[j - 1]]
                if w == 0.0:
                    break
            if w == 0.0:
                continue
            ests = est_by_zpath[zp]
            if ests is None:
                raise EvidenceError("positive-weight path with zero marginal evidence")
            block = 0.0
            for j in range(n + 1):
                block += model.distortion[s_path[j], ests[j]]
            total += w * block / (n + 1)
    return float(total)


def _mutual_information(px: np.ndarray, py_given_x: np.ndarray) -> float:
    """I(X;Y) in nats for input px and transition rows py_given_x."""
    joint = px[:, None] * py_given_x
    py = joint.sum(axis=0)
    mask = joint > 0.0
    py_full = np.broadcast_to(py, joint.shape)
    return float(np.sum(joint[mask] * np.log(py_given_x[mask] / py_full[mask])))


def state_marginals(model: DiscreteJcasModel, n: int) -> np.ndarray:
    """P(S_i) for i = 1..n by chain iteration; shape (n, ns)."""
    out = np.empty((n, model.ns))
    p = model.initial
    for i in range(n):
        p = p @ model.markov
        out[i] = p
    return out


def capacity_objective(input_dists, model: DiscreteJcasModel, n: int) -> float:
    """(1/n) sum_i I(X_i; Y_i | S_i) in nats for per-step input distributions."""
    dists = np.asarray(input_dists, dtype=float)
    if dists.ndim == 1:
        dists = np.tile(dists, (n, 1))
    if dists.shape != (n, model.nx):
        raise ParameterError(f"need {n} input distributions of size {model.nx}")
    if np.any(dists < -1e-12) or np.any(np.abs(dists.sum(axis=1) - 1.0) > 1e-9):
        raise ParameterError("input distributions must be probability vectors")
    py = model.y_likelihood()
    marginals = state_marginals(model, n)
    total = 0.0
    for i in range(n):
        mi = 0.0
        for s in range(model.ns):
            ps = marginals[i, s]
            if ps > 0.0:
                mi += ps * _mutual_information(dists[i], py[:, s, :])
        total += mi
    return total / n


def simplex_grid(dim: int, resolution: float) -> np.ndarray:
    """All probability vectors with entries on a grid of the given step."""
    if not (0.0 < resolution <= 1.0):
        raise ParameterError(f"grid resolution must lie in (0, 1], got {resolution}")
    k = max(1, round(1.0 / resolution))
    points = []
    for combo in itertools.combinations_with_replacement(range(dim), k):
        counts = np.bincount(np.array(combo, dtype=int), minlength=dim)
        points.append(counts / k)
    return np.array(points)


@dataclass
class TradeoffResult:
    """Outcome of the gridded open-loop rate search under a distortion budget."""

    feasible: bool
    rate: float | None
    input_distributions: np.ndarray | None
    distortion_budget: float
    n: int
    grid_resolution: float
    n_feasible: int = 0
    per_sequence_costs: dict = field(default_factory=dict)


def bruteforce_open_loop_tradeoff(
    model: DiscreteJcasModel,
    distortion_budget: float,
    n: int,
    grid_resolution: float,
) -> TradeoffResult:
    """Best finite-n rate over gridded product input distributions.

    Only product (open-loop) distributions are searched: the objective
    depends on per-step marginals only, and restricting to products keeps
    the desk-scale search honest about what it optimizes.  Values are
    finite-n averages, labeled as such by the ``n`` field of the result.
    An empty feasible set is a result (feasible=False), not an error.
    """
    if not (1 <= n <= 3):
        raise EnumerationLimitError(f"grid search supports n in 1..3, got {n}")
    grid = simplex_grid(model.nx, grid_resolution)
    n_points = grid.shape[0]
    if n_points ** n > MAX_GRID_COMBOS:
        raise EnumerationLimitError(
            f"grid search would visit {n_points ** n} combinations "
            f"(limit {MAX_GRID_COMBOS})"
        )

    x_seqs = list(itertools.product(range(model.nx), repeat=n))
    costs = np.array([sensing_cost(xs, model) for xs in x_seqs])
    cost_tensor = costs.reshape((model.nx,) * n)

    # per-grid-point, per-step conditional mutual information
    py = model.y_likelihood()
    marginals = state_marginals(model, n)
    mi_table = np.empty((n_points, n))
    for g in range(n_points):
        for i in range(n):
            mi = 0.0
            for s in range(model.ns):
                ps = marginals[i, s]
                if ps > 0.0:
                    mi += ps * _mutual_information(grid[g], py[:, s, :])
            mi_table[g, i] = mi

    best_rate = -math.inf
    best_combo = None
    n_feasible = 0
    for combo in itertools.product(range(n_points), repeat=n):
        expected = cost_tensor
        for idx in combo:
            expected = np.tensordot(grid[idx], expected, axes=(0, 0))
        if float(expected) > distortion_budget + 1e-12:
            continue
        n_feasible += 1
        rate = float(np.mean([mi_table[idx, i] for i, idx in enumerate(combo)]))
        if rate > best_rate:
            best_rate = rate
            best_combo = combo

    per_seq = {xs: float(c) for xs, c in zip(x_seqs, costs)}
    if best_combo is None:
        return TradeoffResult(
            False, None, None, distortion_budget, n, grid_resolution, 0, per_seq
        )
    return TradeoffResult(
        True,
        best_rate,
        np.array([grid[idx] for idx in best_combo]),
        distortion_budget,
        n,
        grid_resolution,
        n_feasible,
        per_seq,
    )


# ---------------------------------------------------------------------------
# model file loading
# ---------------------------------------------------------------------------

def load_discrete_model(path) -> DiscreteJcasModel:
    """Load a model from the sectioned text format (see docs/discrete-model-format.md).

    Sections: [alphabets] with X/S/Z/Y sizes, [channel] rows
    ``x s : p(y,z)...`` flattened y-major, [markov] rows ``s : p(s'|s)...``,
    [initial] one probability row, [distortion] rows ``s : d(s, shat)...``.
    """
    sections: dict = {}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip().lower()
                sections[current] = []
                continue
            if current is None:
                raise SchemaError(f"line {lineno}: content before any [section]")
            sections[current].append((lineno, line))

    for required in ("alphabets", "channel", "markov", "initial", "distortion"):
        if required not in sections:
            raise SchemaError(f"missing [{required}] section")

    sizes = {}
    for lineno, line in sections["alphabets"]:
        if "=" not in line:
            raise SchemaError(f"line {lineno}: expected 'NAME = size'")
        name, _, value = line.partition("=")
        try:
            sizes[name.strip().upper()] = int(value)
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: alphabet size must be an integer") from exc
    for name in ("X", "S", "Z", "Y"):
        if name not in sizes or sizes[name] < 1:
            raise SchemaError(f"[alphabets] must define a positive size for {name}")
    nx, ns, nz, ny = sizes["X"], sizes["S"], sizes["Z"], sizes["Y"]

    def parse_floats(lineno, text, expected, what):
        parts = text.split()
        if len(parts) != expected:
            raise SchemaError(
                f"line {lineno}: {what} needs {expected} values, got {len(parts)}"
            )
        try:
            return [float(p) for p in parts]
        except ValueError as exc:
            raise SchemaError(f"line {lineno}: {what} has a non-numeric entry") from exc

    channel = np.full((nx, ns, ny, nz), np.nan)
    for lineno, line in sections["channel"]:
        head, _, tail = line.partition(":")
        if not tail:
            raise SchemaError(f"line {lineno}: channel row needs 'x s : probs'")
        idx = head.split()
        if len(idx) != 2:
            raise SchemaError(f"line {lineno}: channel row needs two indices 'x s'")
        x, s = int(idx[0]), int(idx[1])
        if not (0 <= x < nx and 0 <= s < ns):
            raise SchemaError(f"line {lineno}: channel row (x={x}, s={s}) out of range")
        vals = parse_floats(lineno, tail, ny * nz, f"channel row (x={x}, s={s})")
        channel[x, s] = np.array(vals).reshape(ny, nz)
    if np.isnan(channel).any():
        raise SchemaError("channel section is missing one or more (x, s) rows")

    markov = np.full((ns, ns), np.nan)
    for lineno, line in sections["markov"]:
        head, _, tail = line.partition(":")
        if not tail:
            raise SchemaError(f"line {lineno}: markov row needs 's : probs'")
        s = int(head.strip())
        if not (0 <= s < ns):
            raise SchemaError(f"line {lineno}: markov row (s={s}) out of range")
        markov[s] = parse_floats(lineno, tail, ns, f"markov row (s={s})")
    if np.isnan(markov).any():
        raise SchemaError("markov section is missing one or more rows")

    if len(sections["initial"]) != 1:
        raise SchemaError("[initial] must contain exactly one row")
    lineno, line = sections["initial"][0]
    initial = parse_floats(lineno, line.partition(":")[2] or line, ns, "initial row")

    distortion = np.full((ns, ns), np.nan)
    for lineno, line in sections["distortion"]:
        head, _, tail = line.partition(":")
        if not tail:
            raise SchemaError(f"line {lineno}: distortion row needs 's : values'")
        s = int(head.strip())
        if not (0 <= s < ns):
            raise SchemaError(f"line {lineno}: distortion row (s={s}) out of range")
        distortion[s] = parse_floats(lineno, tail, ns, f"distortion row (s={s})")
    if np.isnan(distortion).any():
        raise SchemaError("distortion section is missing one or more rows")

    return DiscreteJcasModel(
        channel=channel, markov=markov, initial=np.array(initial), distortion=distortion
    )
