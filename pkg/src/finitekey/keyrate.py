"""Secure key length assembly.

Combines the estimated vacuum/single-photon bounds with the error-correction
leakage model and the fixed privacy-amplification overhead into the final
key length, applying the abort logic and keeping the complete
failure-probability ledger behind the composable security claim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .channel import EstimationAbort, ObservedCounts, ProtocolConfig
from .decoy import EstimationResult, estimate_all

CSV_COLUMNS = (
    "distance_km",
    "block_size",
    "n_sec",
    "rate_bps",
    "term_vacuum_lower",
    "term_single_lower_gamma",
    "term_phase_entropy",
    "term_ec_leakage",
    "term_delta",
    "q_tol_x",
    "abort_reason",
)


def binary_entropy_truncated(x: float) -> float:
    """Binary entropy -x*log2(x) - (1-x)*log2(1-x) for x <= 1/2, else 1.

    h(0) = 0 by continuity.
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"entropy argument must be in [0, 1], got {x}")
    if x > 0.5:
        return 1.0
    if x == 0.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def delta_overhead(eps_ver: float, eps_sec: float) -> float:
    """Privacy-amplification overhead in bits:
    log2(2/eps_ver) + 6*log2(46/eps_sec).

    The 46 counts the elementary estimation constraints plus the proof
    overhead; the value is real-valued (only the final key length is
    floored).
    """
    return math.log2(2.0 / eps_ver) + 6.0 * math.log2(46.0 / eps_sec)


def phase_error_count_bound(n1_z_upper: int, q_tol_x: float, gamma: float) -> int:
    """Upper bound on the number of Z-basis phase errors:
    floor(n1_upper * q_tol / gamma)."""
    if gamma <= 0.0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return math.floor(n1_z_upper * q_tol_x / gamma)


def ec_leakage(raw_key_length: int, qber_z: float, f_ec: float) -> int:
    """Bits disclosed by error correction: ceil(f_ec * length * h(QBER))."""
    if raw_key_length == 0:
        return 0
    return math.ceil(f_ec * raw_key_length * binary_entropy_truncated(qber_z))


@dataclass(frozen=True)
class KeyRateReport:
    """Final key length with its term breakdown, abort state and
    failure-probability ledger."""

    n_sec: int
    rate_bps: float
    terms: dict[str, float] = field(repr=False)
    w_phase_z_bound: int
    q_tol_x: float
    qber1_upper: float
    block_size: int
    acquisition_time_s: float
    abort: bool
    abort_reason: str | None
    no_key: bool
    eps_ledger: tuple[tuple[str, float], ...]
    security_claim: str
    distance_km: float | None = None
    n0_z_low: int = 0
    n1_z_low: int = 0
    n1_z_high: int = 0
    n1_x_high: int = 0

    def eps_total(self) -> float:
        return sum(e for _, e in self.eps_ledger)

    def to_text(self) -> str:
        lines = [
            f"n_sec = {self.n_sec}",
            f"rate_bps = {self.rate_bps!r}",
            f"block_size = {self.block_size}",
            f"q_tol_x = {self.q_tol_x!r}",
            f"qber1_upper = {self.qber1_upper!r}",
            f"w_phase_z_bound = {self.w_phase_z_bound}",
            f"abort = {self.abort}",
            f"abort_reason = {self.abort_reason or ''}",
            f"no_key = {self.no_key}",
            f"security_claim = {self.security_claim}",
        ]
        if self.distance_km is not None:
            lines.insert(0, f"distance_km = {self.distance_km!r}")
        for name, value in sorted(self.terms.items()):
            lines.append(f"term.{name} = {value!r}")
        for name, eps in self.eps_ledger:
            lines.append(f"eps.{name} = {eps!r}")
        lines.append(f"eps.total = {self.eps_total()!r}")
        return "\n".join(lines)

    def csv_row(self) -> str:
        dist = "" if self.distance_km is None else repr(float(self.distance_km))
        fields = (
            dist,
            str(self.block_size),
            str(self.n_sec),
            repr(self.rate_bps),
            repr(self.terms.get("vacuum_lower", 0.0)),
            repr(self.terms.get("single_lower_gamma", 0.0)),
            repr(self.terms.get("phase_entropy", 0.0)),
            repr(self.terms.get("ec_leakage", 0.0)),
            repr(self.terms.get("delta", 0.0)),
            repr(self.q_tol_x),
            self.abort_reason or "",
        )
        return ",".join(fields)


def _eps_ledger(pr: ProtocolConfig) -> tuple[tuple[str, float], ...]:
    """Failure-probability ledger; the 46 constraint weights total eps_sec
    and verification adds eps_ver."""
    e = pr.eps_per_constraint
    return (
        ("photon_yield_bounds_Z", 6.0 * e),
        ("photon_yield_bounds_X", 6.0 * e),
        ("photon_count_bounds", 6.0 * e),
        ("single_photon_error_bound", 19.0 * e),
        ("proof_overhead", 9.0 * e),
        ("verification", pr.eps_ver),
    )


def _security_claim(pr: ProtocolConfig) -> str:
    return f"{pr.eps_ver!r}-correct, {pr.eps_sec!r}-secret"


def _abort_report(
    reason: str, counts: ObservedCounts, pr: ProtocolConfig,
    distance_km: float | None,
) -> KeyRateReport:
    return KeyRateReport(
        n_sec=0,
        rate_bps=0.0,
        terms={},
        w_phase_z_bound=0,
        q_tol_x=float("nan"),
        qber1_upper=float("nan"),
        block_size=counts.raw_key_length,
        acquisition_time_s=pr.acquisition_time_s,
        abort=True,
        abort_reason=reason,
        no_key=True,
        eps_ledger=_eps_ledger(pr),
        security_claim=_security_claim(pr),
        distance_km=distance_km,
    )


def secure_key_length(
    est: EstimationResult,
    counts: ObservedCounts,
    pr: ProtocolConfig,
    distance_km: float | None = None,
) -> KeyRateReport:
    """Assemble the secure key length from a completed estimation.

    n_sec = max(0, floor(n0_low + gamma*n1_low - n1_high*h(q_tol) - n_EC - Delta)),
    with the max-entropy term deliberately using the single-photon count
    upper bound. Aborts when the Z single-photon sample fails to dominate
    the X one by the configured ratio, or when the single-photon error bound
    exceeds the tolerated threshold.
    """
    z, x = est.z_basis, est.x_basis

    if z.n1_low < pr.z1_dominance_ratio * x.n1_high:
        return _abort_report(
            f"single-photon dominance failed: n1_Z_low={z.n1_low} < "
            f"{pr.z1_dominance_ratio!r} * n1_X_high={x.n1_high}",
            counts, pr, distance_km,
        )
    if est.qber1_upper > est.q_tol_x:
        return _abort_report(
            f"single-photon error bound {est.qber1_upper!r} above tolerated "
            f"threshold {est.q_tol_x!r}",
            counts, pr, distance_km,
        )

    key_cell = counts.cell("signal", "Z")
    qber_z = key_cell.errors / key_cell.detections if key_cell.detections else 0.0
    n_ec = ec_leakage(key_cell.detections, qber_z, pr.ec_efficiency)
    delta = delta_overhead(pr.eps_ver, pr.eps_sec)
    h_tol = binary_entropy_truncated(est.q_tol_x)

    terms = {
        "vacuum_lower": float(z.n0_low),
        "single_lower_gamma": pr.gamma * z.n1_low,
        "phase_entropy": z.n1_high * h_tol,
        "ec_leakage": float(n_ec),
        "delta": delta,
    }
    raw = (
        terms["vacuum_lower"]
        + terms["single_lower_gamma"]
        - terms["phase_entropy"]
        - terms["ec_leakage"]
        - terms["delta"]
    )
    n_sec = max(0, math.floor(raw))
    return KeyRateReport(
        n_sec=n_sec,
        rate_bps=n_sec / pr.acquisition_time_s,
        terms=terms,
        w_phase_z_bound=phase_error_count_bound(z.n1_high, est.q_tol_x, pr.gamma),
        q_tol_x=est.q_tol_x,
        qber1_upper=est.qber1_upper,
        block_size=key_cell.detections,
        acquisition_time_s=pr.acquisition_time_s,
        abort=False,
        abort_reason=None,
        no_key=n_sec == 0,
        eps_ledger=_eps_ledger(pr),
        security_claim=_security_claim(pr),
        distance_km=distance_km,
        n0_z_low=z.n0_low,
        n1_z_low=z.n1_low,
        n1_z_high=z.n1_high,
        n1_x_high=x.n1_high,
    )


def protocol_report(
    counts: ObservedCounts, pr: ProtocolConfig, distance_km: float | None = None
) -> KeyRateReport:
    """Run estimation and key-length assembly, turning estimation aborts
    into an aborted report instead of an exception."""
    try:
        est = estimate_all(counts, pr)
    except EstimationAbort as exc:
        return _abort_report(exc.reason, counts, pr, distance_km)
    return secure_key_length(est, counts, pr, distance_km)
