"""Nested quadrature pairs by penalized Gauss-Newton moment matching.

A nested pair is a coarse rule (x_1, w_1) embedded in a fine rule
(x_2, w_2): every coarse node is literally one of the fine nodes, selected
by ``subset_map``, so one set of integrand evaluations yields two estimates
and an embedded error indicator.  Both rules must reproduce the orthonormal
moments of the weight through their target degrees alpha_1 < alpha_2, which
gives the stacked residual

    R(d) = [ V_a1(x_1) w_1 - sqrt(b_0) e_1 ]
           [ V_a2(x_2) w_2 - sqrt(b_0) e_1 ],   x_1 = x_2[subset_map],

over the decision vector d = (x_2, w_1, w_2).  Node bounds and a small
positive weight floor are enforced by quadratic penalties scaled with a
coefficient c_k that grows as the residual shrinks; the augmented system
[R; c_k P] is driven to zero by undamped Gauss-Newton steps regularized
through a truncated-SVD Tikhonov filter whose parameter is re-selected
periodically from the singular spectrum.  The fine degree alpha_2 is
searched from an optimistic start downward: a stalled iteration first
restarts from the interlaced initial guess and then concedes one degree.
After the first converged degree, one degree higher is probed once and the
largest certified value is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConvergenceError,
    FeasibilityError,
    NumericalError,
    ParameterError,
    UnsupportedFamilyError,
)
from .gauss import QuadratureRule, gauss_rule, moment_residuals, verify_rule
from .orthopoly import (
    Domain,
    RecurrenceTable,
    WeightFamily,
    eval_orthonormal,
    generalized_laguerre,
    recurrence_coefficients,
)

__all__ = [
    "OptimizerConfig",
    "ProblemDims",
    "OptimizerState",
    "NestedRulePair",
    "assemble_residual",
    "penalty_terms",
    "penalty_coefficient",
    "assemble_jacobian",
    "select_lambda",
    "tikhonov_step",
    "newton_decrement",
    "initialize",
    "generate_nested",
    "extend_patterson",
    "prune_negligible",
    "hermite_to_laguerre",
]

# Residual norm below which the shifted (sigma + lambda) step form is used.
_NEAR_ROOT = 1e-8
# The driver floors the selected lambda at this multiple of the current
# augmented residual norm (Levenberg-Marquardt damping).  Far from a root
# this bounds the step along weak directions; it vanishes at convergence.
_LM_FLOOR = 0.1
# Stall: decrement below tolerance while the residual stays above 100 eps,
# sustained this many consecutive iterations.
_STALL_RUN = 25
# Plateau fallback: no new best residual over this many iterations counts
# as a stall even when the decrement has not collapsed (guards cycling).
_PLATEAU_RUN = 200
# Penalty violations up to this size at convergence are snapped into the
# feasible set; anything larger is a genuine feasibility failure.
_SNAP_TOL = 1e-9
_C_CAP = 1e16


@dataclass(frozen=True)
class OptimizerConfig:
    """Tunables of the nested-rule search.

    ``A`` is the floor of the penalty coefficient c_k = max(A, 1/|R|);
    ``weight_floor`` keeps weights strictly positive with a small safety
    radius, and ``alpha2_initial`` overrides the default optimistic start
    3 n_1 + 2 of the fine-degree search.
    """

    epsilon: float = 1e-12
    A: float = 1e3
    weight_floor: float = 1e-6
    node_margin: float = 0.0
    max_iterations: int = 5000
    lambda_update_period: int = 40
    decrement_stall_tol: float | None = None
    prune_threshold: float = 1e-13
    allow_negative_weights: bool = False
    alpha2_initial: int | None = None

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ParameterError("epsilon must lie in (0, 1)")
        if self.A < 1.0:
            raise ParameterError("penalty floor A must be at least 1")
        if not self.allow_negative_weights and not (0.0 < self.weight_floor < 1.0):
            raise ParameterError("weight_floor must lie in (0, 1)")
        if self.max_iterations < 1 or self.lambda_update_period < 1:
            raise ParameterError("iteration controls must be positive")

    @property
    def stall_tol(self) -> float:
        return self.epsilon if self.decrement_stall_tol is None \
            else self.decrement_stall_tol

    @classmethod
    def defaults_for(cls, family: WeightFamily, **overrides) -> "OptimizerConfig":
        """Family-aware defaults.

        Unbounded weights carry genuinely tiny tail weights (far below the
        1e-6 floor that suits [-1, 1] families), so the floor is relaxed to
        1e-13 there; positivity is still enforced.
        """
        if not family.domain.bounded and "weight_floor" not in overrides:
            overrides["weight_floor"] = 1e-13
        return cls(**overrides)


@dataclass(frozen=True)
class ProblemDims:
    """Sizes of one nested-pair problem and the coarse-in-fine index map."""

    n1: int
    n2: int
    alpha1: int
    alpha2: int
    subset_map: tuple

    def __post_init__(self):
        if self.n1 < 1 or self.n2 <= self.n1:
            raise ParameterError("need n2 > n1 >= 1")
        if not (0 <= self.alpha1 < self.alpha2):
            raise ParameterError("need 0 <= alpha1 < alpha2")
        sm = tuple(int(i) for i in self.subset_map)
        if len(sm) != self.n1 or any(not 0 <= i < self.n2 for i in sm):
            raise ParameterError("subset_map must hold n1 fine-node indices")
        if any(b <= a for a, b in zip(sm, sm[1:])):
            raise ParameterError("subset_map must be strictly increasing")
        object.__setattr__(self, "subset_map", sm)

    @property
    def n_unknowns(self) -> int:
        return self.n1 + 2 * self.n2

    @property
    def n_moments(self) -> int:
        return self.alpha1 + self.alpha2 + 2

    @property
    def n_penalties(self) -> int:
        return 2 * self.n2 + self.n1


@dataclass
class OptimizerState:
    """Mutable iteration record returned as diagnostics.

    ``history`` holds one (iteration, augmented residual norm, Newton
    decrement) triple per Gauss-Newton step across all attempted degrees.
    """

    d: np.ndarray
    c_k: float = 0.0
    iteration: int = 0
    residual_norm: float = math.inf
    newton_decrement: float = math.inf
    lam: float = 0.0
    alpha2_current: int = 0
    restarts: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class NestedRulePair:
    """A certified coarse rule embedded in a fine rule.

    ``residual_norm`` is the 2-norm of the stacked moment residual of both
    rules, recomputed at full precision after the search finished.
    """

    family: WeightFamily
    coarse: QuadratureRule
    fine: QuadratureRule
    subset_map: tuple
    residual_norm: float

    def __post_init__(self):
        sm = tuple(int(i) for i in self.subset_map)
        object.__setattr__(self, "subset_map", sm)
        if self.coarse.family != self.family or self.fine.family != self.family:
            raise ParameterError("pair members disagree on the weight family")
        if len(sm) != self.coarse.n:
            raise ParameterError("subset_map length must equal the coarse size")
        if any(b <= a for a, b in zip(sm, sm[1:])):
            raise ParameterError("subset_map must be strictly increasing")
        embedded = self.fine.nodes[list(sm)]
        if not np.array_equal(embedded, self.coarse.nodes):
            raise ParameterError("coarse nodes must be fine nodes bit-exactly")
        if not self.coarse.exactness_degree < self.fine.exactness_degree:
            raise ParameterError("fine degree must exceed coarse degree")

    @property
    def n1(self) -> int:
        return self.coarse.n

    @property
    def n2(self) -> int:
        return self.fine.n


def _split(d: np.ndarray, dims: ProblemDims):
    n1, n2 = dims.n1, dims.n2
    return d[:n2], d[n2:n2 + n1], d[n2 + n1:]


def assemble_residual(d: np.ndarray, table: RecurrenceTable,
                      dims: ProblemDims) -> np.ndarray:
    """Stacked moment residual [R_1; R_2] of a decision vector.

    Coarse nodes are read out of the fine block through ``subset_map``, so
    the coarse conditions see exactly the shared node values.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != (dims.n_unknowns,):
        raise ParameterError(
            f"decision vector must have length {dims.n_unknowns}")
    x2, w1, w2 = _split(d, dims)
    x1 = x2[list(dims.subset_map)]
    target = math.sqrt(table.b[0])
    r1 = eval_orthonormal(table, dims.alpha1, x1).values @ w1
    r1[0] -= target
    r2 = eval_orthonormal(table, dims.alpha2, x2).values @ w2
    r2[0] -= target
    return np.concatenate([r1, r2])


def _bounds(domain: Domain, config: OptimizerConfig):
    lo = domain.lo + config.node_margin if domain.bounded_below else -math.inf
    hi = domain.hi - config.node_margin if domain.bounded_above else math.inf
    return lo, hi


def _violations(x2, w1, w2, domain: Domain, config: OptimizerConfig):
    """Signed penalty violations: (node excess, w2 shortfall, w1 shortfall)."""
    lo, hi = _bounds(domain, config)
    node = np.zeros_like(x2)
    if domain.bounded_above:
        node = np.maximum(node, x2 - hi)
    if domain.bounded_below:
        node = np.maximum(node, lo - x2)
    if config.allow_negative_weights:
        v2 = np.zeros_like(w2)
        v1 = np.zeros_like(w1)
    else:
        v2 = np.maximum(0.0, config.weight_floor - w2)
        v1 = np.maximum(0.0, config.weight_floor - w1)
    return node, v2, v1


def penalty_terms(d: np.ndarray, dims: ProblemDims, domain: Domain,
                  config: OptimizerConfig) -> np.ndarray:
    """Quadratic constraint penalties, ordered [nodes; w_2; w_1].

    Node entries are (max[0, x - hi, lo - x])^2 with unbounded directions
    contributing nothing; weight entries are (max[0, floor - w])^2, or zero
    when negative weights are allowed.  Length 2 n_2 + n_1.
    """
    x2, w1, w2 = _split(np.asarray(d, dtype=float), dims)
    node, v2, v1 = _violations(x2, w1, w2, domain, config)
    return np.concatenate([node * node, v2 * v2, v1 * v1])


def penalty_coefficient(residual_norm: float, config: OptimizerConfig) -> float:
    """c_k = max(A, 1/|R|), capped at 1e16 (the exact-root limit)."""
    if not residual_norm >= 0.0:
        raise ParameterError("residual norm must be nonnegative")
    if residual_norm == 0.0:
        return _C_CAP
    return float(min(max(config.A, 1.0 / residual_norm), _C_CAP))


def assemble_jacobian(d: np.ndarray, table: RecurrenceTable, dims: ProblemDims,
                      c_k: float, config: OptimizerConfig) -> np.ndarray:
    """Jacobian of the augmented residual [R; c_k P] w.r.t. d.

    Rows follow the residual stacking; columns follow d = (x_2, w_1, w_2).
    Residual rows use d p_m(x_i) w_i / d x_i = p'_m(x_i) w_i, with the
    coarse block accumulated into the shared fine-node columns through
    ``subset_map``.  Shape (alpha1 + alpha2 + 2 + 2 n_2 + n_1, n_1 + 2 n_2).
    """
    d = np.asarray(d, dtype=float)
    x2, w1, w2 = _split(d, dims)
    sub = list(dims.subset_map)
    x1 = x2[sub]
    n1, n2 = dims.n1, dims.n2
    a1, a2 = dims.alpha1, dims.alpha2

    ev1 = eval_orthonormal(table, a1, x1, derivatives=True)
    ev2 = eval_orthonormal(table, a2, x2, derivatives=True)

    J = np.zeros((dims.n_moments + dims.n_penalties, dims.n_unknowns))
    J[:a1 + 1, sub] = ev1.derivatives * w1
    J[:a1 + 1, n2:n2 + n1] = ev1.values
    J[a1 + 1:dims.n_moments, :n2] = ev2.derivatives * w2
    J[a1 + 1:dims.n_moments, n2 + n1:] = ev2.values

    node, v2, v1 = _violations(x2, w1, w2, table.family.domain, config)
    lo, hi = _bounds(table.family.domain, config)
    base = dims.n_moments
    rows = np.arange(n2)
    # d/dx (x - hi)^2 = 2(x - hi) above, d/dx (lo - x)^2 = -2(lo - x) below
    grad = np.zeros(n2)
    above = x2 > hi
    below = x2 < lo
    grad[above] = 2.0 * (x2[above] - hi)
    grad[below] = -2.0 * (lo - x2[below])
    J[base + rows, rows] = c_k * grad
    J[base + n2 + rows, n2 + n1 + rows] = -2.0 * c_k * v2
    rows1 = np.arange(n1)
    J[base + 2 * n2 + rows1, n2 + rows1] = -2.0 * c_k * v1
    return J


def select_lambda(singular_values) -> float:
    """Pick the Tikhonov parameter from the singular spectrum's sharpest drop.

    Scans the discrete curvature of log sigma_i for convex spikes, meaning
    the spectrum falls off a cliff there: a spike must be at least three
    e-folds (so ordinary smooth decay never triggers) and more than five
    times the median curvature of the trailing spectrum.  Lambda is sigma
    just past the sharpest such cliff, which separates the directions
    worth following from the ones that only amplify noise; a spectrum
    with no cliff gets sigma_max * 1e-10.
    """
    s = np.sort(np.asarray(singular_values, dtype=float))[::-1]
    if s.size < 3:
        raise ParameterError("need at least 3 singular values")
    if not (np.all(np.isfinite(s)) and s[0] > 0.0):
        raise NumericalError("degenerate singular spectrum")
    logs = np.log(np.maximum(s, s[0] * 1e-250))
    curv = logs[:-2] - 2.0 * logs[1:-1] + logs[2:]
    spikes = np.maximum(curv, 0.0)
    best = -1
    for i in range(spikes.size):
        trailing = spikes[i + 1:]
        med = float(np.median(trailing)) if trailing.size else 0.0
        if spikes[i] >= 3.0 and spikes[i] > 5.0 * med:
            if best < 0 or spikes[i] > spikes[best]:
                best = i
    if best >= 0:
        return float(s[best + 1])
    return float(s[0] * 1e-10)


def _step_from_svd(u, s, vt, residual, lam: float, near_root: bool):
    utr = u.T @ residual
    if near_root:
        denom = s + lam
        coef = np.divide(utr, denom, out=np.zeros_like(utr),
                         where=denom > 0.0)
    else:
        denom = s * s + lam * lam
        coef = np.divide(s * utr, denom, out=np.zeros_like(utr),
                         where=denom > 0.0)
    return vt.T @ coef


def tikhonov_step(jacobian: np.ndarray, residual: np.ndarray, lam: float,
                  near_root: bool = False) -> np.ndarray:
    """Regularized Gauss-Newton step Delta d for J Delta d ~= R.

    The default form filters each SVD direction by sigma^2/(sigma^2 +
    lambda^2); with ``near_root`` the shift 1/(sigma + lambda) is used
    instead, which keeps full steps along well-conditioned directions when
    the residual is already tiny.
    """
    if lam < 0.0:
        raise ParameterError("lambda must be nonnegative")
    try:
        u, s, vt = np.linalg.svd(np.asarray(jacobian, dtype=float),
                                 full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from exc
    return _step_from_svd(u, s, vt, np.asarray(residual, dtype=float),
                          lam, near_root)


def newton_decrement(step: np.ndarray, jacobian: np.ndarray,
                     residual: np.ndarray) -> float:
    """eta = |step . (J^T R)|^(1/2), the progress measure of one step."""
    return float(math.sqrt(abs(float(np.dot(step, jacobian.T @ residual)))))


def _default_alpha2(n1: int) -> int:
    return 3 * n1 + 2


def _interlaced_fine_nodes(table: RecurrenceTable, n2: int,
                           alpha2: int) -> np.ndarray:
    """Gauss-n2 nodes, shrunk on unbounded domains to the span a rule of
    degree alpha2 actually needs (ratio of extreme Gauss nodes)."""
    nodes = gauss_rule(table, n2).nodes.copy()
    if not table.family.domain.bounded:
        m = (alpha2 + 1) // 2
        if m < n2:
            small = gauss_rule(table, m).nodes
            ratio = np.max(np.abs(small)) / np.max(np.abs(nodes))
            nodes = nodes * ratio
    return nodes


def initialize(n1: int, table: RecurrenceTable, alpha2: int | None = None):
    """Interlaced initial guess (d_0, dims) for the nested-pair search.

    Fine nodes start at the Gauss rule of size n_2 = 2 n_1 + 1 (range-
    shrunk for unbounded weights); the coarse rule takes every second fine
    node, so coarse and fine interlace.  All weights start uniform.
    """
    if n1 < 1:
        raise ParameterError("n1 must be at least 1")
    n2 = 2 * n1 + 1
    alpha1 = 2 * n1 - 1
    if alpha2 is None:
        alpha2 = _default_alpha2(n1)
    table.require(max(alpha2, 2 * n2 - 1))
    x2 = _interlaced_fine_nodes(table, n2, alpha2)
    subset = tuple(range(1, 2 * n1, 2))
    mass = float(table.b[0])
    d0 = np.concatenate([x2, np.full(n1, mass / n1), np.full(n2, mass / n2)])
    dims = ProblemDims(n1, n2, alpha1, alpha2, subset)
    return d0, dims


class _PairProblem:
    """Workspace wiring the pair residual/Jacobian into the search driver."""

    def __init__(self, n1: int, table: RecurrenceTable,
                 config: OptimizerConfig, alpha2: int):
        self.table = table
        self.config = config
        self.n1 = n1
        _, self.dims = initialize(n1, table, alpha2)
        self.min_alpha2 = self.dims.alpha1 + 1

    def set_alpha2(self, alpha2: int):
        self.table.require(alpha2)
        self.dims = replace(self.dims, alpha2=alpha2)

    def fresh_start(self) -> np.ndarray:
        d0, _ = initialize(self.n1, self.table, self.dims.alpha2)
        return d0

    def moment_residual(self, d) -> np.ndarray:
        return assemble_residual(d, self.table, self.dims)

    def penalties(self, d) -> np.ndarray:
        return penalty_terms(d, self.dims, self.table.family.domain,
                             self.config)

    def jacobian(self, d, c_k) -> np.ndarray:
        return assemble_jacobian(d, self.table, self.dims, c_k, self.config)

    def expand_step(self, step) -> np.ndarray:
        return step


class _ExtensionProblem:
    """Workspace for extending a frozen base rule by n_base + 1 new nodes.

    The decision vector stays (x_2, w_2) of length 2 n_2 with the base
    nodes parked in the trailing x_2 slots; their columns are excluded
    from the Jacobian and their step entries forced to zero, which is the
    zero-padded update of the sequential (Patterson-style) mode.
    """

    def __init__(self, base: QuadratureRule, table: RecurrenceTable,
                 config: OptimizerConfig, alpha2: int):
        self.table = table
        self.config = config
        self.base = base
        nb = base.n
        self.n_new = nb + 1
        self.n2 = 2 * nb + 1
        self.min_alpha2 = base.exactness_degree
        # free columns: the new nodes and every weight
        self.free = np.concatenate([
            np.arange(self.n_new),
            self.n2 + np.arange(self.n2),
        ])
        self.alpha2 = alpha2

    def set_alpha2(self, alpha2: int):
        self.table.require(alpha2)
        self.alpha2 = alpha2

    def fresh_start(self) -> np.ndarray:
        seed = _interlaced_fine_nodes(self.table, self.n2, self.alpha2)
        new = seed[0::2]
        x2 = np.concatenate([new, self.base.nodes])
        mass = float(self.table.b[0])
        return np.concatenate([x2, np.full(self.n2, mass / self.n2)])

    def moment_residual(self, d) -> np.ndarray:
        x2, w2 = d[:self.n2], d[self.n2:]
        r = eval_orthonormal(self.table, self.alpha2, x2).values @ w2
        r[0] -= math.sqrt(self.table.b[0])
        return r

    def penalties(self, d) -> np.ndarray:
        x2, w2 = d[:self.n2], d[self.n2:]
        node, v2, _ = _violations(x2, np.empty(0), w2,
                                  self.table.family.domain, self.config)
        return np.concatenate([node * node, v2 * v2])

    def jacobian(self, d, c_k) -> np.ndarray:
        x2, w2 = d[:self.n2], d[self.n2:]
        ev = eval_orthonormal(self.table, self.alpha2, x2, derivatives=True)
        n2 = self.n2
        J = np.zeros((self.alpha2 + 1 + 2 * n2, 2 * n2))
        J[:self.alpha2 + 1, :n2] = ev.derivatives * w2
        J[:self.alpha2 + 1, n2:] = ev.values
        node, v2, _ = _violations(x2, np.empty(0), w2,
                                  self.table.family.domain, self.config)
        lo, hi = _bounds(self.table.family.domain, self.config)
        base = self.alpha2 + 1
        rows = np.arange(n2)
        grad = np.zeros(n2)
        above = x2 > hi
        below = x2 < lo
        grad[above] = 2.0 * (x2[above] - hi)
        grad[below] = -2.0 * (lo - x2[below])
        J[base + rows, rows] = c_k * grad
        J[base + n2 + rows, n2 + rows] = -2.0 * c_k * v2
        return J[:, self.free]

    def expand_step(self, step) -> np.ndarray:
        full = np.zeros(2 * self.n2)
        full[self.free] = step
        return full


class _DiagnosticsLog:
    """Optional per-iteration CSV stream."""

    def __init__(self, path):
        self.path = path
        self.lines = ["iteration,residual_norm,newton_decrement,c_k,lambda,alpha2"]

    def record(self, iteration, rnorm, eta, c_k, lam, alpha2):
        self.lines.append(
            f"{iteration},{rnorm:.17e},{eta:.17e},{c_k:.17e},{lam:.17e},{alpha2}")

    def flush(self):
        if self.path is not None:
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(self.lines) + "\n")


def _drive(problem, config: OptimizerConfig, alpha2_start: int, log=None):
    """Degree search around the Gauss-Newton inner loop.

    Returns (certified d, certified alpha2, state).  Implements restart-
    then-decrement on stall and the one-higher probe after certification.
    """
    alpha2 = alpha2_start
    problem.set_alpha2(alpha2)
    d = problem.fresh_start()
    state = OptimizerState(d=d, alpha2_current=alpha2)

    started_fresh = True
    restart_used = False
    probing = False
    alpha2_star = None
    snapshot = None
    best_overall = math.inf
    best_level = math.inf
    stall_run = 0
    plateau_run = 0
    level_iter = 0
    prev_eta = None
    lam = None
    total_cap = config.max_iterations * 40

    def reset_level_counters():
        nonlocal stall_run, plateau_run, level_iter, prev_eta, lam, best_level
        stall_run = plateau_run = level_iter = 0
        prev_eta = None
        lam = None
        best_level = math.inf

    while True:
        if state.iteration >= total_cap:
            raise ConvergenceError(
                f"iteration budget exhausted at alpha2={alpha2}",
                best_residual=best_overall)

        r = problem.moment_residual(d)
        diverged = not np.all(np.isfinite(r))
        if diverged:
            rnorm = math.inf
        else:
            p = problem.penalties(d)
            c = penalty_coefficient(float(np.linalg.norm(r)), config)
            rt = np.concatenate([r, c * p])
            rnorm = float(np.linalg.norm(rt))
            best_overall = min(best_overall, rnorm)
            state.c_k = c
            state.residual_norm = rnorm

        if not diverged and rnorm <= config.epsilon:
            if alpha2_star == alpha2:
                state.d = d
                state.alpha2_current = alpha2
                return d, alpha2, state
            alpha2_star = alpha2
            snapshot = (alpha2, d.copy())
            if problem.table.capacity >= alpha2 + 1:
                alpha2 += 1
                problem.set_alpha2(alpha2)
                probing = True
                started_fresh = False
                reset_level_counters()
                continue
            state.d = d
            state.alpha2_current = alpha2
            return d, alpha2, state

        if not diverged:
            if rnorm < best_level - 1e-16:
                best_level = rnorm
                plateau_run = 0
            else:
                plateau_run += 1
            if (prev_eta is not None and prev_eta < config.stall_tol
                    and rnorm > 100.0 * config.epsilon):
                stall_run += 1
            else:
                stall_run = 0

        stalled = (diverged or stall_run >= _STALL_RUN
                   or plateau_run >= _PLATEAU_RUN
                   or level_iter >= config.max_iterations)
        if stalled:
            if probing:
                # concede the probe: fall back to the certified solution
                alpha2 = snapshot[0]
                problem.set_alpha2(alpha2)
                d = snapshot[1].copy()
                probing = False
                started_fresh = False
                restart_used = True
            elif not restart_used and not started_fresh:
                d = problem.fresh_start()
                restart_used = True
                started_fresh = True
                state.restarts += 1
            else:
                alpha2 -= 1
                if alpha2 <= problem.min_alpha2:
                    raise ConvergenceError(
                        f"search fell below the minimal degree "
                        f"{problem.min_alpha2 + 1} without converging",
                        best_residual=best_overall)
                problem.set_alpha2(alpha2)
                restart_used = False
                started_fresh = False
                if diverged:
                    # a blown-up iterate is useless at the lower degree too
                    d = problem.fresh_start()
                    started_fresh = True
            reset_level_counters()
            continue

        J = problem.jacobian(d, c)
        try:
            u, s, vt = np.linalg.svd(J, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"SVD failed during iteration: {exc}") from exc
        if lam is None or level_iter % config.lambda_update_period == 0:
            lam = select_lambda(s)
        lam_eff = max(lam, _LM_FLOOR * rnorm)
        step = _step_from_svd(u, s, vt, rt, lam_eff, near_root=rnorm < _NEAR_ROOT)
        eta = newton_decrement(step, J, rt)
        d = d - problem.expand_step(step)

        state.iteration += 1
        level_iter += 1
        prev_eta = eta
        state.newton_decrement = eta
        state.lam = lam_eff
        state.alpha2_current = alpha2
        state.history.append((state.iteration, rnorm, eta))
        if log:
            log.record(state.iteration, rnorm, eta, c, lam_eff, alpha2)


def _snap_into_domain(x: np.ndarray, domain: Domain) -> np.ndarray:
    return np.clip(x, domain.lo, domain.hi)


def _check_feasible(x2, weights, domain: Domain, config: OptimizerConfig):
    lo, hi = _bounds(domain, config)
    node_viol = 0.0
    if domain.bounded_above:
        node_viol = max(node_viol, float(np.max(x2 - hi, initial=0.0)))
    if domain.bounded_below:
        node_viol = max(node_viol, float(np.max(lo - x2, initial=0.0)))
    if node_viol > _SNAP_TOL:
        raise FeasibilityError(
            f"converged nodes violate the domain by {node_viol:.3e}")
    if not config.allow_negative_weights:
        shortfall = float(np.max(config.weight_floor - weights, initial=0.0))
        if shortfall > _SNAP_TOL:
            raise FeasibilityError(
                f"converged weights fall {shortfall:.3e} below the floor")


def _extract_pair(d, dims: ProblemDims, table: RecurrenceTable,
                  config: OptimizerConfig) -> NestedRulePair:
    x2, w1, w2 = _split(np.asarray(d, dtype=float), dims)
    _check_feasible(x2, np.concatenate([w1, w2]), table.family.domain, config)
    x2 = _snap_into_domain(x2, table.family.domain)

    order = np.argsort(x2)
    x2s = x2[order]
    w2s = w2[order]
    pos = np.empty(dims.n2, dtype=int)
    pos[order] = np.arange(dims.n2)
    subset_sorted = np.sort(pos[list(dims.subset_map)])
    if np.any(np.diff(x2s) <= 0.0):
        raise FeasibilityError("fine nodes collided during optimization")

    coarse_idx = subset_sorted.tolist()
    x1s = x2s[coarse_idx]
    # coarse weights follow their nodes through the same reordering
    coarse_nodes_orig = x2[list(dims.subset_map)]
    w1s = w1[np.argsort(coarse_nodes_orig)]

    relaxed = config.allow_negative_weights
    r1 = moment_residuals(x1s, w1s, table, dims.alpha1)
    r2 = moment_residuals(x2s, w2s, table, dims.alpha2)
    fine = QuadratureRule(table.family, x2s, w2s, dims.alpha2,
                          float(np.linalg.norm(r2)),
                          weight_floor_relaxed=relaxed)
    coarse = QuadratureRule(table.family, x1s, w1s, dims.alpha1,
                            float(np.linalg.norm(r1)),
                            weight_floor_relaxed=relaxed)
    stacked = float(math.hypot(coarse.residual_norm, fine.residual_norm))
    return NestedRulePair(table.family, coarse, fine, tuple(coarse_idx),
                          stacked)


def generate_nested(n1: int, table: RecurrenceTable,
                    config: OptimizerConfig | None = None,
                    log_path=None):
    """Generate a certified nested pair with n_2 = 2 n_1 + 1 nodes.

    The coarse rule targets degree 2 n_1 - 1 (which forces it onto the
    Gauss rule); the fine degree is searched downward from
    ``config.alpha2_initial`` (default 3 n_1 + 2).  Returns the pair and
    the iteration diagnostics.  Raises ConvergenceError when no degree
    certifies, FeasibilityError when a converged iterate is infeasible.
    """
    if config is None:
        config = OptimizerConfig.defaults_for(table.family)
    alpha2 = config.alpha2_initial
    if alpha2 is None:
        alpha2 = _default_alpha2(n1)
    if alpha2 <= 2 * n1 - 1:
        raise ParameterError("alpha2_initial must exceed alpha1 = 2 n1 - 1")
    problem = _PairProblem(n1, table, config, alpha2)
    log = _DiagnosticsLog(log_path) if log_path is not None else None
    try:
        d, alpha2_final, state = _drive(problem, config, alpha2, log)
    finally:
        if log:
            log.flush()
    dims = replace(problem.dims, alpha2=alpha2_final)
    pair = _extract_pair(d, dims, table, config)
    state.residual_norm = pair.residual_norm
    state.d = d
    return pair, state


def extend_patterson(base: QuadratureRule, table: RecurrenceTable,
                     config: OptimizerConfig | None = None,
                     log_path=None):
    """Extend a certified rule by n + 1 nodes, keeping its nodes frozen.

    Sequential (Patterson-style) construction: only the new node positions
    and all 2 n + 1 weights are optimized against the fine moment
    conditions.  Returns the extended rule (whose exactness degree is the
    certified alpha_2) and the iteration diagnostics.
    """
    if config is None:
        config = OptimizerConfig.defaults_for(table.family)
    if base.family != table.family:
        raise ParameterError("base rule and table disagree on the family")
    check = verify_rule(base, table, base.exactness_degree)
    if check.norm > max(10.0 * config.epsilon, 10.0 * base.residual_norm):
        raise ParameterError(
            f"base rule fails its own certificate ({check.norm:.3e})")

    alpha2 = config.alpha2_initial
    if alpha2 is None:
        alpha2 = _default_alpha2(base.n)
    problem = _ExtensionProblem(base, table, config, alpha2)
    log = _DiagnosticsLog(log_path) if log_path is not None else None
    try:
        d, alpha2_final, state = _drive(problem, config, alpha2, log)
    finally:
        if log:
            log.flush()

    x2, w2 = d[:problem.n2], d[problem.n2:]
    _check_feasible(x2, w2, table.family.domain, config)
    # never move the frozen base nodes, even by a boundary snap
    x2 = np.concatenate([
        _snap_into_domain(x2[:problem.n_new], table.family.domain),
        base.nodes,
    ])
    order = np.argsort(x2)
    x2s = x2[order]
    w2s = w2[order]
    if np.any(np.diff(x2s) <= 0.0):
        raise FeasibilityError("extension nodes collided with the base rule")
    r2 = moment_residuals(x2s, w2s, table, alpha2_final)
    rule = QuadratureRule(table.family, x2s, w2s, alpha2_final,
                          float(np.linalg.norm(r2)),
                          weight_floor_relaxed=config.allow_negative_weights)
    state.residual_norm = rule.residual_norm
    return rule, state


def prune_negligible(rule: QuadratureRule, table: RecurrenceTable,
                     config: OptimizerConfig | None = None) -> QuadratureRule:
    """Drop nodes whose |weight| falls below ``config.prune_threshold``.

    The pruned rule is re-verified at the original exactness degree and
    returned with its updated certificate; if the re-verified residual
    exceeds 10 epsilon (or the pruned rule is structurally invalid) the
    prune is refused and the input returned unchanged.
    """
    if config is None:
        config = OptimizerConfig.defaults_for(rule.family)
    keep = np.abs(rule.weights) >= config.prune_threshold
    if np.all(keep):
        return rule
    if not np.any(keep):
        return rule
    nodes = rule.nodes[keep]
    weights = rule.weights[keep]
    r = moment_residuals(nodes, weights, table, rule.exactness_degree)
    norm = float(np.linalg.norm(r))
    if norm > 10.0 * config.epsilon:
        return rule
    try:
        return QuadratureRule(rule.family, nodes, weights,
                              rule.exactness_degree, norm,
                              weight_floor_relaxed=rule.weight_floor_relaxed)
    except ParameterError:
        return rule


def _fold_half(rule: QuadratureRule, tol: float):
    """Split a symmetric rule into (center weight or None, positive half)."""
    x, w = rule.nodes, rule.weights
    n = x.size
    scale = max(1.0, float(np.max(np.abs(x))))
    for i in range(n // 2):
        j = n - 1 - i
        if abs(x[i] + x[j]) > tol * scale or abs(w[i] - w[j]) > tol:
            raise ParameterError(
                "rule is not symmetric about zero; cannot fold")
    if n % 2 == 1:
        mid = n // 2
        if abs(x[mid]) > tol * scale:
            raise ParameterError("odd-sized rule lacks a center node at zero")
        return float(w[mid]), x[mid + 1:], w[mid + 1:]
    return None, x[n // 2:], w[n // 2:]


def hermite_to_laguerre(pair: NestedRulePair, rho_g: float | None = None,
                        tol: float = 1e-10) -> NestedRulePair:
    """Map a symmetric generalized-Hermite pair to a generalized-Laguerre one.

    The substitution t = x^2 sends a rule for |x|^rho_G exp(-x^2) on the
    real line to one for t^rho_L exp(-t) on the half line with rho_L =
    (rho_G - 1)/2; symmetric node pairs fold onto t = x^2 with doubled
    weight (a center node at 0 keeps its weight) and exactness degrees
    halve.  Asymmetric input is rejected.
    """
    if pair.family.kind != "generalized_hermite":
        raise UnsupportedFamilyError(
            "only generalized-Hermite pairs can be folded to Laguerre")
    family_rho = pair.family.params[0]
    if rho_g is None:
        rho_g = family_rho
    elif rho_g != family_rho:
        raise ParameterError(
            f"rho_g={rho_g} disagrees with the pair's family ({family_rho})")

    rho_l = (rho_g - 1.0) / 2.0
    lag = generalized_laguerre(rho_l)
    alpha1 = pair.coarse.exactness_degree // 2
    alpha2 = pair.fine.exactness_degree // 2
    table = recurrence_coefficients(lag, max(alpha2, 1))

    def fold(rule: QuadratureRule, alpha: int) -> QuadratureRule:
        wc, xh, wh = _fold_half(rule, tol)
        nodes = xh * xh
        weights = 2.0 * wh
        if wc is not None:
            nodes = np.concatenate([[0.0], nodes])
            weights = np.concatenate([[wc], weights])
        r = moment_residuals(nodes, weights, table, alpha)
        return QuadratureRule(lag, nodes, weights, alpha,
                              float(np.linalg.norm(r)),
                              weight_floor_relaxed=rule.weight_floor_relaxed)

    coarse = fold(pair.coarse, alpha1)
    fine = fold(pair.fine, alpha2)
    subset = [int(np.searchsorted(fine.nodes, t)) for t in coarse.nodes]
    stacked = float(math.hypot(coarse.residual_norm, fine.residual_norm))
    return NestedRulePair(lag, coarse, fine, tuple(subset), stacked)
