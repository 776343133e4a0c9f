"""Gauss rules from recurrence tables, plus rule verification diagnostics.

The n-point Gauss rule of a weight function is recovered from the symmetric
tridiagonal Jacobi matrix built out of the recurrence coefficients: nodes
are its eigenvalues, weights are b_0 times the squared first components of
the normalized eigenvectors.  An n-point Gauss rule integrates polynomials
through degree 2n - 1.

Verification is moment-based: a rule exact through degree alpha must
reproduce the orthonormal moments, i.e. sum_q p_j(x_q) w_q = sqrt(b_0) for
j = 0 and 0 for 1 <= j <= alpha.  The residual vector of these conditions
is the certificate every rule in this package carries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .errors import NumericalError, ParameterError, UnsupportedFamilyError
from .orthopoly import (
    RecurrenceTable,
    WeightFamily,
    eval_orthonormal,
    weight_density,
)

__all__ = [
    "QuadratureRule",
    "MomentReport",
    "gauss_rule",
    "verify_rule",
    "circle_theorem_deviation",
]

# Slack for optimizer-produced nodes that land on a domain endpoint; the
# eigensolver itself keeps Gauss nodes strictly interior.
_BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class QuadratureRule:
    """An immutable quadrature rule with its exactness certificate.

    ``exactness_degree`` is the highest polynomial degree the rule is
    certified for and ``residual_norm`` the 2-norm of the orthonormal-moment
    residuals through that degree at certification time.  Weights must be
    positive unless ``weight_floor_relaxed`` is set.
    """

    family: WeightFamily
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int
    residual_norm: float
    weight_floor_relaxed: bool = field(default=False)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size == 0:
            raise ParameterError("nodes and weights must be equal-length 1-d")
        if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))):
            raise ParameterError("nodes and weights must be finite")
        if np.any(np.diff(nodes) <= 0.0):
            raise ParameterError("nodes must be strictly ascending")
        dom = self.family.domain
        if not dom.contains(nodes, tol=_BOUNDARY_TOL):
            raise ParameterError("nodes fall outside the weight's domain")
        if not self.weight_floor_relaxed and np.any(weights <= 0.0):
            raise ParameterError("weights must be positive")
        if abs(float(weights.sum()) - self.family.mass) > 1e-12:
            raise ParameterError(
                f"weights sum to {weights.sum()!r}, expected {self.family.mass}")
        if self.exactness_degree < 0:
            raise ParameterError("exactness degree must be nonnegative")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.nodes.size


@dataclass(frozen=True)
class MomentReport:
    """Per-degree orthonormal-moment residuals r_0..r_alpha and their norm."""

    residuals: np.ndarray
    norm: float

    @property
    def degree(self) -> int:
        return self.residuals.size - 1


def gauss_rule(table: RecurrenceTable, n: int) -> QuadratureRule:
    """Build the n-point Gauss rule of the table's family.

    Needs coefficients a_0..a_{n-1}, b_1..b_{n-1}; the table must also
    reach degree 2n - 1 so the returned certificate can be computed.
    """
    if n < 1:
        raise ParameterError("rule size must be at least 1")
    if table.capacity < n - 1:
        from .errors import CapacityError
        raise CapacityError(
            f"table capacity {table.capacity} too small for {n}-point rule")
    diag = table.a[:n]
    off = np.sqrt(table.b[1:n])
    try:
        if n == 1:
            nodes = diag.copy()
        else:
            nodes = np.sort(eigvalsh_tridiagonal(diag, off))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise NumericalError(f"tridiagonal eigensolver failed: {exc}") from exc
    # Squared first eigenvector components via the Christoffel identity
    # 1 / sum_j p_j(x_i)^2; unlike the raw eigenvectors this keeps tiny
    # tail weights (Laguerre, Hermite) at full relative precision.
    V = eval_orthonormal(table, n - 1, nodes).values
    weights = 1.0 / np.einsum("ji,ji->i", V, V)

    degree = 2 * n - 1
    rule = QuadratureRule(
        family=table.family,
        nodes=nodes,
        weights=weights,
        exactness_degree=degree,
        residual_norm=0.0,
    )
    if table.capacity >= degree:
        report = verify_rule(rule, table, degree)
        rule = QuadratureRule(
            family=table.family,
            nodes=nodes,
            weights=weights,
            exactness_degree=degree,
            residual_norm=report.norm,
        )
    return rule


def moment_residuals(nodes, weights, table: RecurrenceTable,
                     degree: int) -> np.ndarray:
    """Residuals of the orthonormal moment conditions for raw arrays.

    r_j = sum_q p_j(x_q) w_q - sqrt(b_0) delta_{j0}, j = 0..degree.
    """
    V = eval_orthonormal(table, degree, nodes).values
    r = V @ np.asarray(weights, dtype=float)
    r[0] -= np.sqrt(table.b[0])
    return r


def verify_rule(rule: QuadratureRule, table: RecurrenceTable,
                degree: int | None = None) -> MomentReport:
    """Recompute the moment residuals of a rule through ``degree``.

    Defaults to the rule's certified exactness degree.  This is the full
    precision re-check used both at certification time and when loading
    stored rules.
    """
    if degree is None:
        degree = rule.exactness_degree
    if degree < 0:
        raise ParameterError("degree must be nonnegative")
    r = moment_residuals(rule.nodes, rule.weights, table, degree)
    return MomentReport(residuals=r, norm=float(np.linalg.norm(r)))


def circle_theorem_deviation(rule: QuadratureRule, weight_fn=None,
                             interior: float = 0.9) -> float:
    """Deviation of scaled weights from the circle-theorem semicircle.

    For Jacobi-type weights on [-1, 1] the products n * w_q / (pi * w(x_q))
    approach sqrt(1 - x_q^2) as n grows.  Returns the maximum deviation over
    nodes with |x| <= ``interior``; the boundary layer is excluded because
    convergence is not uniform there.
    """
    dom = rule.family.domain
    if not (dom.lo == -1.0 and dom.hi == 1.0):
        raise UnsupportedFamilyError(
            "circle theorem applies to weights on [-1, 1] only")
    if weight_fn is None:
        weight_fn = weight_density(rule.family)
    mask = np.abs(rule.nodes) <= interior
    if not np.any(mask):
        raise ParameterError("no nodes inside the requested interior band")
    x = rule.nodes[mask]
    w = rule.weights[mask]
    scaled = rule.n * w / (np.pi * np.asarray(weight_fn(x), dtype=float))
    return float(np.max(np.abs(scaled - np.sqrt(1.0 - x * x))))
