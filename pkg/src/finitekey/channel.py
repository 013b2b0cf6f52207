"""Parametric fiber/detector model producing protocol count statistics.

Stands in for a real transmitter/receiver pair: given fiber length, detector
properties and the pulse-class schedule it yields the per-class, per-basis
pulse, detection and error tallies, either as rounded expectations or as a
seeded Monte Carlo draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CLASSES = ("signal", "decoy", "vacuum")
BASES = ("Z", "X")


class ConfigError(ValueError):
    """Raised when a channel or protocol configuration is nonphysical."""


class EstimationAbort(RuntimeError):
    """Raised when the protocol must abort (zero cells, infeasible
    estimation, estimation too loose)."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class ChannelConfig:
    """Fiber and detector parameters.

    Defaults model a 1 GHz gated two-detector receiver: 22.5% detection
    efficiency, 5% afterpulse probability, 2.1e-5 dark counts per gate per
    detector and 3 dB receiver insertion loss on standard 0.2 dB/km fiber.
    """

    fiber_length_km: float = 50.0
    attenuation_db_per_km: float = 0.2
    detector_efficiency: float = 0.225
    dark_count_prob: float = 2.1e-5
    afterpulse_prob: float = 0.05
    receiver_loss_db: float = 3.0
    misalignment_error: float = 0.015
    num_detectors: int = 2

    def validate(self) -> None:
        if self.fiber_length_km < 0 or self.attenuation_db_per_km < 0:
            raise ConfigError("fiber length and attenuation must be >= 0")
        if self.receiver_loss_db < 0:
            raise ConfigError("receiver loss must be >= 0")
        for name in ("detector_efficiency", "dark_count_prob",
                     "afterpulse_prob", "misalignment_error"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.num_detectors < 1:
            raise ConfigError("num_detectors must be >= 1")

    def transmittance(self) -> float:
        """Overall detection probability per photon (fiber + receiver +
        detector)."""
        loss_db = self.attenuation_db_per_km * self.fiber_length_km + self.receiver_loss_db
        return self.detector_efficiency * 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class ProtocolConfig:
    """Pulse schedule, security targets and estimation knobs.

    Default class probabilities and intensities are the 50 km optimum of the
    production parameter set; `eps_sec`/`eps_ver` are the secrecy and
    verification failure budgets of the composable security claim.
    """

    clock_rate_hz: float = 1e9
    acquisition_time_s: float = 1200.0
    p_z: float = 0.964
    class_probs: tuple[float, float, float] = (0.935, 0.028, 0.037)
    intensities: tuple[float, float, float] = (0.415, 0.05, 1e-4)
    gamma: float = 1.0
    eps_sec: float = 1e-10
    eps_ver: float = 1e-15
    q_tol_cap: float = 0.5
    photon_cutoff: int = 9
    ec_efficiency: float = 1.16
    z1_dominance_ratio: float = 10.0

    @property
    def p_x(self) -> float:
        return 1.0 - self.p_z

    @property
    def n_pulses(self) -> int:
        return int(round(self.clock_rate_hz * self.acquisition_time_s))

    @property
    def eps_per_constraint(self) -> float:
        """Failure probability allotted to each of the 46 elementary
        constraints backing the secrecy budget."""
        return self.eps_sec / 46.0

    def validate(self) -> None:
        if self.clock_rate_hz <= 0 or self.acquisition_time_s <= 0:
            raise ConfigError("clock rate and acquisition time must be > 0")
        if not 0.5 < self.p_z < 1.0:
            raise ConfigError(f"p_z must lie in (0.5, 1), got {self.p_z}")
        if any(p <= 0 for p in self.class_probs):
            raise ConfigError(f"class probabilities must be > 0, got {self.class_probs}")
        if abs(sum(self.class_probs) - 1.0) > 1e-9:
            raise ConfigError(f"class probabilities must sum to 1, got {self.class_probs}")
        u, v, w = self.intensities
        if not u > v > w >= 0:
            raise ConfigError(f"intensities must satisfy u > v > w >= 0, got {self.intensities}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        for name in ("eps_sec", "eps_ver"):
            e = getattr(self, name)
            if not 0.0 < e < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {e}")
        if not 0.0 < self.q_tol_cap <= 0.5:
            raise ConfigError(f"q_tol_cap must be in (0, 0.5], got {self.q_tol_cap}")
        if self.photon_cutoff < 1:
            raise ConfigError("photon_cutoff must be >= 1")
        if self.ec_efficiency < 1.0:
            raise ConfigError("ec_efficiency below the Shannon limit")
        if self.z1_dominance_ratio < 1.0:
            raise ConfigError("z1_dominance_ratio must be >= 1")

    def with_params(self, **kwargs) -> "ProtocolConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class CellCounts:
    """Pulse/detection/error tally of one (intensity class, matched basis) cell."""

    pulses: int
    detections: int
    errors: int

    def __post_init__(self):
        if not 0 <= self.errors <= self.detections <= self.pulses:
            raise ValueError(f"need errors <= detections <= pulses, got {self}")


@dataclass(frozen=True)
class ObservedCounts:
    """Matched-basis protocol tallies plus the discarded mismatched total."""

    n_total: int
    cells: dict[tuple[str, str], CellCounts] = field(repr=False)
    n_mismatched: int = 0

    @property
    def raw_key_length(self) -> int:
        """Sifted signal-class Z-basis detections (the raw key)."""
        return self.cells[("signal", "Z")].detections

    def cell(self, cls: str, basis: str) -> CellCounts:
        return self.cells[(cls, basis)]

    def matched_pulses(self) -> int:
        return sum(c.pulses for c in self.cells.values())


def _class_rates(ch: ChannelConfig, intensity: float) -> tuple[float, float]:
    """Per-pulse detection probability D and error probability e for one
    intensity class.

    A click occurs unless the pulse goes undetected and no detector dark
    fires; afterpulses inflate the click count by (1 + p_ap). Dark-driven
    and afterpulse clicks carry random bits, hence the 1/2 error weights.
    """
    eta = ch.transmittance()
    no_dark = (1.0 - ch.dark_count_prob) ** ch.num_detectors
    absorb = math.exp(-eta * intensity)
    base = 1.0 - no_dark * absorb
    detect = base * (1.0 + ch.afterpulse_prob)
    signal_click = 1.0 - absorb
    err = (
        ch.misalignment_error * signal_click
        + 0.5 * (base - signal_click)
        + 0.5 * ch.afterpulse_prob * base
    )
    return detect, err


def photon_number_yield(ch: ChannelConfig, k: int) -> float:
    """Detection probability of a pulse that carried exactly k photons.

    This is the exact Poisson decomposition of the class yields produced by
    :func:`expected_counts`; used as ground truth in coverage checks.
    """
    eta = ch.transmittance()
    no_dark = (1.0 - ch.dark_count_prob) ** ch.num_detectors
    return (1.0 - no_dark * (1.0 - eta) ** k) * (1.0 + ch.afterpulse_prob)


def _cell_pulse_probs(pr: ProtocolConfig) -> dict[tuple[str, str, str], float]:
    """Probability of each (class, Alice basis, Bob basis) cell."""
    probs = {}
    basis_p = {"Z": pr.p_z, "X": pr.p_x}
    for cls, p_cls in zip(CLASSES, pr.class_probs):
        for ba in BASES:
            for bb in BASES:
                probs[(cls, ba, bb)] = p_cls * basis_p[ba] * basis_p[bb]
    return probs


def expected_counts(ch: ChannelConfig, pr: ProtocolConfig) -> ObservedCounts:
    """Rounded expectation of the protocol tallies under the channel model."""
    ch.validate()
    pr.validate()
    n_total = pr.n_pulses
    basis_p = {"Z": pr.p_z, "X": pr.p_x}
    cells = {}
    matched = 0
    for cls, p_cls, mu in zip(CLASSES, pr.class_probs, pr.intensities):
        detect, err = _class_rates(ch, mu)
        for basis in BASES:
            pulses = int(round(n_total * p_cls * basis_p[basis] ** 2))
            detections = int(round(pulses * detect))
            errors = min(int(round(pulses * err)), detections)
            cells[(cls, basis)] = CellCounts(pulses, detections, errors)
            matched += pulses
    return ObservedCounts(n_total, cells, n_total - matched)


def sample_counts(ch: ChannelConfig, pr: ProtocolConfig, seed: int) -> ObservedCounts:
    """One Monte Carlo protocol round; deterministic for a given seed.

    Pulse cells are multinomial over (class, Alice basis, Bob basis),
    detections are Binomial in the per-class detection probability and
    errors Binomial in the conditional error fraction.
    """
    ch.validate()
    pr.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    n_total = pr.n_pulses

    cell_probs = _cell_pulse_probs(pr)
    keys = sorted(cell_probs)  # fixed draw order for determinism
    pvals = np.array([cell_probs[k] for k in keys], dtype=float)
    pvals = pvals / pvals.sum()
    draws = rng.multinomial(n_total, pvals)

    rates = {cls: _class_rates(ch, mu) for cls, mu in zip(CLASSES, pr.intensities)}
    cells = {}
    mismatched = 0
    for key, pulses in zip(keys, draws):
        cls, ba, bb = key
        if ba != bb:
            mismatched += int(pulses)
            continue
        detect, err = rates[cls]
        detections = int(rng.binomial(int(pulses), detect)) if detect > 0 else 0
        err_frac = err / detect if detect > 0 else 0.0
        errors = int(rng.binomial(detections, err_frac)) if detections else 0
        cells[(cls, ba)] = CellCounts(int(pulses), detections, errors)
    return ObservedCounts(n_total, cells, mismatched)
