"""Decoy-state parameter estimation.

Turns the observed tallies into confidence bounds on per-class yields and
the minority-basis error rate, solves the constrained linear program for the
vacuum and single-photon yields, projects those onto photon-number counts,
and evaluates the closed-form upper bound on the single-photon error rate
together with its tolerated threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import gammaln

from .channel import BASES, CLASSES, EstimationAbort, ObservedCounts, ProtocolConfig
from .statbounds import WorstCaseBound, worst_case_bounds


@dataclass(frozen=True)
class CellYieldBound:
    mean: float
    lower: float
    upper: float
    lower_source: str
    upper_source: str


@dataclass(frozen=True)
class YieldBounds:
    """Per (class, basis) yield bounds plus the signal-class X-basis
    per-pulse error-rate upper bound."""

    yields: dict[tuple[str, str], CellYieldBound]
    x_error_mean: float
    x_error_upper: float
    eps_each: float

    def cell(self, cls: str, basis: str) -> CellYieldBound:
        return self.yields[(cls, basis)]


@dataclass(frozen=True)
class PhotonBasisBounds:
    """Vacuum and single-photon yield/count bounds for one basis."""

    basis: str
    y0_low: float
    y0_high: float
    y1_low: float
    y1_high: float
    n0_low: int
    n0_high: int
    n1_low: int
    n1_high: int


@dataclass(frozen=True)
class EstimationResult:
    """Everything the key-length assembly needs, with its failure budget."""

    yield_bounds: YieldBounds
    z_basis: PhotonBasisBounds
    x_basis: PhotonBasisBounds
    qber1_upper: float
    q_tol_x: float
    eps_each: float


def bound_yields(
    counts: ObservedCounts, eps_each: float, n_total: int | None = None
) -> YieldBounds:
    """Worst-case Clopper-Pearson bounds for every matched cell.

    Each cell is bounded under both the plain Binomial and the
    permuted-Binomial (without-replacement) model, keeping the loosest side;
    each two-sided bound spends failure probability 2*eps_each.
    """
    if n_total is None:
        n_total = counts.n_total
    yields = {}
    for cls in CLASSES:
        for basis in BASES:
            cell = counts.cell(cls, basis)
            if cell.pulses == 0:
                raise EstimationAbort(f"no pulses in cell ({cls}, {basis})")
            wc = worst_case_bounds(n_total, cell.pulses, cell.detections, eps_each)
            yields[(cls, basis)] = CellYieldBound(
                cell.detections / cell.pulses,
                wc.lower,
                wc.upper,
                wc.lower_source,
                wc.upper_source,
            )
    xcell = counts.cell("signal", "X")
    wc_err = worst_case_bounds(n_total, xcell.pulses, xcell.errors, eps_each)
    return YieldBounds(yields, xcell.errors / xcell.pulses, wc_err.upper, eps_each)


def poisson_weights(mu: float, k_max: int) -> np.ndarray:
    """exp(-mu) * mu^k / k! for k = 0..k_max."""
    k = np.arange(k_max + 1)
    if mu == 0.0:
        w = np.zeros(k_max + 1)
        w[0] = 1.0
        return w
    return np.exp(-mu + k * math.log(mu) - gammaln(k + 1))


def truncation_slack(mu: float, k_max: int) -> float:
    """Poisson mass beyond the photon-number cutoff."""
    return max(0.0, 1.0 - float(poisson_weights(mu, k_max).sum()))


def estimate_photon_yields(
    yb: YieldBounds, pr: ProtocolConfig, basis: str
) -> tuple[float, float, float, float]:
    """Linear-program bounds (y0_low, y0_high, y1_low, y1_high) for one basis.

    Variables are the photon-number yields y_k in [0, 1] for k up to the
    cutoff; each intensity class contributes the two-sided constraint

        Y_lower - tau_mu  <=  sum_k Poisson_mu(k) * y_k  <=  Y_upper

    where tau_mu is the Poisson tail beyond the cutoff (the conservative
    slack that keeps truncation from invalidating either direction). Three
    two-sided constraints make the combined failure probability 6*eps_each.
    """
    k_max = pr.photon_cutoff
    n_vars = k_max + 1
    rows = []
    upper_rhs = []
    lower_rhs = []
    for cls, mu in zip(CLASSES, pr.intensities):
        cell = yb.cell(cls, basis)
        w = poisson_weights(mu, k_max)
        rows.append(w)
        upper_rhs.append(cell.upper)
        lower_rhs.append(cell.lower - truncation_slack(mu, k_max))
    A = np.array(rows)
    a_ub = np.vstack([A, -A])
    b_ub = np.array(upper_rhs + [-lo for lo in lower_rhs])
    bounds = [(0.0, 1.0)] * n_vars

    out = {}
    for name, idx, sign in (
        ("y0_low", 0, 1.0),
        ("y0_high", 0, -1.0),
        ("y1_low", 1, 1.0),
        ("y1_high", 1, -1.0),
    ):
        c = np.zeros(n_vars)
        c[idx] = sign
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if not res.success:
            raise EstimationAbort(
                f"decoy linear program infeasible in basis {basis}: {res.message}"
            )
        out[name] = float(np.clip(sign * res.fun, 0.0, 1.0))
    return out["y0_low"], out["y0_high"], out["y1_low"], out["y1_high"]


def photon_count_bounds(
    y_low: float, y_high: float, counts: ObservedCounts, pr: ProtocolConfig,
    basis: str, k: int,
) -> tuple[int, int]:
    """Bounds on the number of k-photon signal pulses in the given basis:
    floor/ceil of the pulse count times the yield bound times the Poisson
    weight of k at the signal intensity."""
    n_cell = counts.cell("signal", basis).pulses
    u = pr.intensities[0]
    weight = math.exp(-u) * u**k / math.factorial(k)
    return (
        math.floor(n_cell * y_low * weight),
        math.ceil(n_cell * y_high * weight),
    )


def qber1_upper_bound(
    x_error_upper: float, y0_x_low: float, y1_x_low: float, pr: ProtocolConfig
) -> float:
    """Closed-form upper bound on the single-photon X-basis bit error rate.

    Subtracts the vacuum contribution (random bits, error probability 1/2)
    from the amplified error-rate bound and attributes the remainder to the
    single-photon pulses; clamped to [0, 1/2].
    """
    if y1_x_low <= 0.0:
        raise EstimationAbort(
            "single-photon X-basis yield lower bound is zero (estimation too loose)"
        )
    u = pr.intensities[0]
    numerator = math.exp(u) * x_error_upper - 0.5 * y0_x_low
    if numerator <= 0.0:
        return 0.0
    return min(numerator / (u * y1_x_low), 0.5)


def tolerated_phase_error(
    qber1_upper: float, n1_z_low: int, n1_x_high: int, eps_each: float,
    cap: float = 0.5,
) -> float:
    """Tolerated phase-error threshold: the single-photon error bound plus a
    finite-sample correction shrinking as the joint sample grows, capped."""
    if n1_z_low <= 0 or n1_x_high <= 0:
        raise EstimationAbort("zero single-photon count bound entering threshold")
    xi = math.sqrt(
        math.log(1.0 / eps_each)
        * (n1_z_low + n1_x_high)
        / (2.0 * n1_z_low * n1_x_high)
    )
    return min(cap, qber1_upper + xi)


def _basis_bounds(
    yb: YieldBounds, counts: ObservedCounts, pr: ProtocolConfig, basis: str
) -> PhotonBasisBounds:
    y0l, y0h, y1l, y1h = estimate_photon_yields(yb, pr, basis)
    n0l, n0h = photon_count_bounds(y0l, y0h, counts, pr, basis, 0)
    n1l, n1h = photon_count_bounds(y1l, y1h, counts, pr, basis, 1)
    return PhotonBasisBounds(basis, y0l, y0h, y1l, y1h, n0l, n0h, n1l, n1h)


def estimate_all(
    counts: ObservedCounts, pr: ProtocolConfig, eps_each: float | None = None
) -> EstimationResult:
    """Full estimation pipeline: CP bounds, per-basis LPs, count bounds,
    single-photon error bound and tolerated threshold."""
    if eps_each is None:
        eps_each = pr.eps_per_constraint
    yb = bound_yields(counts, eps_each)
    z = _basis_bounds(yb, counts, pr, "Z")
    x = _basis_bounds(yb, counts, pr, "X")
    qber1 = qber1_upper_bound(yb.x_error_upper, x.y0_low, x.y1_low, pr)
    q_tol = tolerated_phase_error(qber1, z.n1_low, x.n1_high, eps_each, pr.q_tol_cap)
    return EstimationResult(yb, z, x, qber1, q_tol, eps_each)
