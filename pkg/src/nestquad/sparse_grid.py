"""Smolyak sparse grids assembled from univariate quadrature levels.

A level family supplies one univariate rule per accuracy level i, sized so
that level i integrates polynomials of degree 2i - 1.  The level-k sparse
operator in d dimensions combines tensor products of these rules,

    A(d, k) = sum_{r} (-1)^(k-1-r) C(d-1, k-1-r) sum_{|i| = d+r} X_i1 x ... x X_id,

with r running over max(0, k-d) .. k-1.  Coincident nodes across blocks are
merged by summing weights, which is where nested level families pay off:
their shared nodes coincide bit-exactly, so the union grows far slower than
with independent Gauss rules per level.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, EvaluationError, ParameterError
from .gauss import QuadratureRule, gauss_rule
from .orthopoly import RecurrenceTable, WeightFamily

__all__ = [
    "UnivariateLevelFamily",
    "SparseGrid",
    "TensorErrorBound",
    "gauss_levels",
    "nested_levels",
    "tensor_rule",
    "smolyak_grid",
    "integrate",
    "tensor_error_bound",
    "write_grid_csv",
    "grid_to_json_dict",
]

# Full tensor products beyond this many points are refused outright.
_TENSOR_CAP = 1e8
# Accidental node coincidences (non-nested families) merge within this
# absolute distance per coordinate; nested families merge bit-exactly.
_MERGE_TOL = 1e-14
# Merged weights below this magnitude are candidates for removal.
_DROP_TOL = 1e-15


@dataclass(frozen=True)
class UnivariateLevelFamily:
    """Univariate rules indexed by level i = 1..depth.

    ``nested`` declares that each level's nodes are a bit-exact subset of
    the next level's, which is validated here.  A level whose certified
    exactness degree falls short of the 2i - 1 convention is admitted with
    a warning: the grid is still well defined, it just loses the sparse
    operator's total-degree exactness guarantee.
    """

    levels: tuple
    nested: bool = False

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ParameterError("need at least one level")
        family = levels[0].family
        for rule in levels[1:]:
            if rule.family != family:
                raise ParameterError("levels must share one weight family")
        if self.nested:
            for i, (lo, hi) in enumerate(zip(levels, levels[1:]), start=1):
                fine = set(hi.nodes.tolist())
                if not set(lo.nodes.tolist()) <= fine:
                    raise ParameterError(
                        f"level {i} nodes are not embedded in level {i + 1}")
        for i, rule in enumerate(levels, start=1):
            if rule.exactness_degree < 2 * i - 1:
                warnings.warn(
                    f"level {i} rule only certifies degree "
                    f"{rule.exactness_degree}, below the 2i-1 convention "
                    f"({2 * i - 1}); total-degree exactness will degrade",
                    UserWarning, stacklevel=2)

    @property
    def family(self) -> WeightFamily:
        return self.levels[0].family

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def sizes(self) -> tuple:
        return tuple(rule.n for rule in self.levels)

    def rule(self, level: int) -> QuadratureRule:
        if not 1 <= level <= self.depth:
            raise ParameterError(
                f"level must lie in 1..{self.depth}, got {level}")
        return self.levels[level - 1]


def gauss_levels(table: RecurrenceTable, depth: int) -> UnivariateLevelFamily:
    """Level i = the i-point Gauss rule (degree 2i - 1, nothing shared)."""
    if depth < 1:
        raise ParameterError("depth must be at least 1")
    return UnivariateLevelFamily(
        tuple(gauss_rule(table, i) for i in range(1, depth + 1)),
        nested=False)


def nested_levels(chain, depth: int) -> UnivariateLevelFamily:
    """Build the repeated-size level schedule from a telescoping chain.

    ``chain`` is a sequence of successively embedded rules (a Gauss seed
    plus its extensions).  Chain entry m serves the m consecutive levels
    m(m-1)/2 < i <= m(m+1)/2, giving sizes [1, 3, 3, 7, 7, 7, 15, ...].
    Extension chains whose degree roughly doubles per entry (5, 11, 23 for
    the uniform weight) then certify degree 2i - 1 at every level; chains
    that grow slower trip the level family's shortfall warning instead of
    failing.
    """
    if depth < 1:
        raise ParameterError("depth must be at least 1")
    chain = sorted(chain, key=lambda r: r.n)
    levels = []
    m = 1
    while len(levels) < depth:
        if m > len(chain):
            raise CapacityError(
                f"chain has {len(chain)} rules, level {len(levels) + 1} "
                f"needs entry {m}")
        levels.extend([chain[m - 1]] * m)
        m += 1
    return UnivariateLevelFamily(tuple(levels[:depth]), nested=True)


def tensor_rule(rules):
    """Full tensor product of d univariate rules.

    Returns (nodes, weights): nodes is an (N, d) array in lexicographic
    order (first coordinate slowest), weights the matching products.
    """
    rules = list(rules)
    if not rules:
        raise ParameterError("need at least one rule")
    total = 1.0
    for rule in rules:
        total *= rule.n
    if total > _TENSOR_CAP:
        raise CapacityError(
            f"tensor product would hold {total:.3g} points")
    axes = [rule.nodes for rule in rules]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    weights = rules[0].weights
    for rule in rules[1:]:
        weights = np.multiply.outer(weights, rule.weights)
    return nodes, weights.ravel()


def _compositions(total: int, d: int):
    """All d-tuples of positive integers summing to total, colexicographic
    (last coordinate varies slowest)."""
    if d == 1:
        yield (total,)
        return
    for last in range(1, total - d + 2):
        for head in _compositions(total - last, d - 1):
            yield head + (last,)


def _canonical_levels(family: UnivariateLevelFamily, k: int):
    """Per-level node arrays with cross-level coincidences snapped to one
    representative, so the merge step can key on exact values."""
    if family.nested:
        return [family.rule(i).nodes for i in range(1, k + 1)]
    values = sorted({float(x)
                     for i in range(1, k + 1)
                     for x in family.rule(i).nodes})
    canon = {}
    group_start = None
    rep = None
    for v in values:
        if group_start is None or v - group_start > _MERGE_TOL:
            group_start = v
            rep = v
        canon[v] = rep
    return [np.array([canon[float(x)] for x in family.rule(i).nodes])
            for i in range(1, k + 1)]


@dataclass(frozen=True)
class SparseGrid:
    """Merged node/weight set of the level-k sparse operator in d dims.

    Combination weights can be negative; the total still sums to unit mass
    for probability-normalized families.
    """

    d: int
    k: int
    nodes: np.ndarray
    weights: np.ndarray
    source: UnivariateLevelFamily

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 2 or nodes.shape != (weights.size, self.d):
            raise ParameterError("nodes must be (node_count, d)")
        mass = float(self.source.family.mass) ** self.d
        if abs(weights.sum() - mass) > 1e-10:
            raise ParameterError(
                f"grid weights sum to {weights.sum()!r}, expected {mass!r}")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def node_count(self) -> int:
        return self.weights.size


def smolyak_grid(family: UnivariateLevelFamily, d: int, k: int) -> SparseGrid:
    """Build the level-k sparse grid over d dimensions.

    Tensor blocks are accumulated shell by shell (|i| = d + r, indices
    colexicographic) into a node-keyed weight table; coincident nodes merge
    by summation.  Merged nodes with |weight| < 1e-15 are dropped only when
    the removal provably cannot disturb degree-(2k-1) exactness.
    """
    if d < 1 or k < 1:
        raise ParameterError("need d >= 1 and k >= 1")
    if family.depth < k:
        raise ParameterError(
            f"family supplies {family.depth} levels, level {k} requested")

    axes = _canonical_levels(family, k)
    level_weights = [family.rule(i).weights for i in range(1, k + 1)]
    table = {}
    for r in range(max(0, k - d), k):
        coeff = (-1.0) ** (k - 1 - r) * math.comb(d - 1, k - 1 - r)
        for ivec in _compositions(d + r, d):
            block_axes = [axes[i - 1] for i in ivec]
            size = math.prod(ax.size for ax in block_axes)
            if size > _TENSOR_CAP:
                raise CapacityError(
                    f"tensor block {ivec} would hold {size:.3g} points")
            mesh = np.meshgrid(*block_axes, indexing="ij")
            pts = np.stack([m.ravel() for m in mesh], axis=1)
            w = level_weights[ivec[0] - 1]
            for i in ivec[1:]:
                w = np.multiply.outer(w, level_weights[i - 1])
            w = coeff * w.ravel()
            for point, wq in zip(map(tuple, pts.tolist()), w.tolist()):
                table[point] = table.get(point, 0.0) + wq

    points = sorted(table.keys())
    weights = np.array([table[p] for p in points])
    nodes = np.array(points, dtype=float).reshape(len(points), d)

    small = np.abs(weights) < _DROP_TOL
    if np.any(small):
        # a dropped node can shift any degree-(2k-1) monomial by at most
        # |w| * prod_q max(1, |x_q|)^(2k-1); refuse unless provably harmless
        mags = np.prod(np.maximum(1.0, np.abs(nodes)), axis=1) ** (2 * k - 1)
        if float(np.sum(np.abs(weights[small]) * mags[small])) <= 1e-12:
            nodes = nodes[~small]
            weights = weights[~small]

    return SparseGrid(d, k, nodes, weights, family)


def integrate(grid: SparseGrid, f) -> float:
    """Sum w_q f(x_q) over the grid in node order.

    ``f`` receives one d-vector per call.  A non-finite value aborts with
    an evaluation error carrying the offending node.
    """
    terms = []
    for point, weight in zip(grid.nodes, grid.weights):
        value = float(f(point))
        if not math.isfinite(value):
            raise EvaluationError(
                f"integrand returned {value} at {point.tolist()}",
                node=point.copy())
        terms.append(weight * value)
    return math.fsum(terms)


@dataclass(frozen=True)
class TensorErrorBound:
    """Worst-case integration error of one tensor block.

    For univariate rules whose moment residuals are bounded by epsilon and
    a polynomial p within the block's joint exactness span, the integration
    error is at most eps * |p| * d * (1+eps)^(d-1) * prod sqrt(alpha_q + 1).
    """

    epsilon: float
    alphas: tuple
    d: int
    p_norm: float

    def __post_init__(self):
        object.__setattr__(self, "alphas", tuple(self.alphas))
        if self.epsilon < 0.0 or self.p_norm < 0.0:
            raise ParameterError("epsilon and p_norm must be nonnegative")
        if self.d < 1 or len(self.alphas) != self.d:
            raise ParameterError("need one alpha per dimension")
        if any(a < 0 for a in self.alphas):
            raise ParameterError("degrees must be nonnegative")

    @property
    def value(self) -> float:
        prod = 1.0
        for a in self.alphas:
            prod *= math.sqrt(a + 1.0)
        return (self.epsilon * self.p_norm * self.d
                * (1.0 + self.epsilon) ** (self.d - 1) * prod)


def tensor_error_bound(epsilon: float, alphas, d: int,
                       p_norm: float) -> float:
    return TensorErrorBound(epsilon, tuple(alphas), d, p_norm).value


def write_grid_csv(grid: SparseGrid, path):
    """One row per node: d coordinates then the weight."""
    header = ",".join(f"x{q + 1}" for q in range(grid.d)) + ",weight"
    lines = [header]
    for point, weight in zip(grid.nodes, grid.weights):
        coords = ",".join(repr(float(c)) for c in point)
        lines.append(f"{coords},{float(weight)!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def grid_to_json_dict(grid: SparseGrid, family_ref: str) -> dict:
    return {
        "d": grid.d,
        "k": grid.k,
        "family_ref": family_ref,
        "nodes": [[float(c) for c in point] for point in grid.nodes],
        "weights": [float(w) for w in grid.weights],
    }


def grid_to_json(grid: SparseGrid, family_ref: str) -> str:
    return json.dumps(grid_to_json_dict(grid, family_ref), indent=2)
