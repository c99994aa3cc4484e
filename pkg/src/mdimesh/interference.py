"""Two-pulse interference at a 50:50 beam splitter with polarization-resolved detection.

Pulse B is split into a part matched to pulse A's temporal/spectral mode
(amplitude ``xi``) and an orthogonal remainder that does not interfere. For a
fixed relative phase the four detector exposures are independent Poisson
means, so clicks are independent given the phase. Phase-averaged quantities
use a periodic trapezoid rule refined until successive grids agree.

Detector order everywhere is ``(D1H, D1V, D2H, D2V)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .photonics import (
    DETECTOR_LABELS, DetectorModel, PulseDescriptor, PulseShape, encoded_jones,
)

__all__ = [
    "ModeOverlap",
    "ClickPattern",
    "BsmOutcome",
    "QuadratureError",
    "HomConfig",
    "HomScan",
    "mode_overlap",
    "overlap_quadrature",
    "detector_arrays",
    "phase_average",
    "exposures",
    "coincidence_prob",
    "coincidence_monte_carlo",
    "detector_marginals",
    "bell_probabilities",
    "hom_scan",
    "bsm_trial",
    "bsm_batch",
    "classify",
    "classify_array",
]

IDEAL = (np.ones(4), np.zeros(4))
_MIN_NODES = 16
_MAX_NODES = 1 << 16


class QuadratureError(ArithmeticError):
    """Phase average did not converge."""


@dataclass(frozen=True)
class ModeOverlap:
    xi: float
    tau: float = 0.0  # ps
    delta_nu: float = 0.0  # kHz

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError("xi must lie in [0, 1]")


class BsmOutcome(enum.IntEnum):
    NONE = 0
    PSI_PLUS = 1
    PSI_MINUS = 2


@dataclass(frozen=True)
class ClickPattern:
    d1h: bool = False
    d1v: bool = False
    d2h: bool = False
    d2v: bool = False

    @classmethod
    def from_labels(cls, labels) -> "ClickPattern":
        labels = set(labels)
        unknown = labels - set(DETECTOR_LABELS)
        if unknown:
            raise ValueError(f"unknown detectors {sorted(unknown)}")
        return cls(*(lab in labels for lab in DETECTOR_LABELS))

    def as_array(self) -> np.ndarray:
        return np.array([self.d1h, self.d1v, self.d2h, self.d2v])

    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, c in zip(DETECTOR_LABELS, self.as_array()) if c)


def mode_overlap(shape: PulseShape, tau: float = 0.0, delta_nu: float = 0.0) -> ModeOverlap:
    """Overlap of two Gaussian wavepackets offset by ``tau`` ps and ``delta_nu`` kHz.

    With intensity rms width ``s`` the amplitude envelope is
    ``exp(-t^2 / 4 s^2)``, giving
    ``xi = exp(-tau^2 / 8 s^2) * exp(-(2 pi dnu)^2 s^2 / 2)``.
    """
    s = shape.sigma_t * 1e-12
    w = 2.0 * math.pi * delta_nu * 1e3
    t = tau * 1e-12
    xi = math.exp(-t * t / (8.0 * s * s) - 0.5 * (w * s) ** 2)
    return ModeOverlap(xi, tau, delta_nu)


def overlap_quadrature(shape: PulseShape, tau: float = 0.0, delta_nu: float = 0.0) -> float:
    """Direct numerical evaluation of the overlap integral (reference path)."""
    s = shape.sigma_t
    w = 2.0 * math.pi * delta_nu * 1e3 * 1e-12  # rad/ps
    norm = 1.0 / math.sqrt(math.sqrt(2.0 * math.pi) * s)

    def env(t):
        return norm * math.exp(-t * t / (4 * s * s))

    lo, hi = min(0.0, tau) - 12 * s, max(0.0, tau) + 12 * s
    kw = dict(limit=400, epsabs=1e-13, epsrel=1e-12, points=[0.0, tau])
    re = integrate.quad(lambda t: env(t) * env(t - tau) * math.cos(w * t), lo, hi, **kw)[0]
    im = integrate.quad(lambda t: env(t) * env(t - tau) * math.sin(w * t), lo, hi, **kw)[0]
    return math.hypot(re, im)


def detector_arrays(detectors=None) -> tuple[np.ndarray, np.ndarray]:
    """(efficiency, dark) arrays of length 4.

    Accepts None (ideal), a single DetectorModel, four DetectorModels, or an
    ``(efficiency, dark)`` pair of scalars or arrays.
    """
    if detectors is None:
        return IDEAL
    if isinstance(detectors, tuple) and len(detectors) == 2 \
            and not isinstance(detectors[0], DetectorModel):
        eff, dark = detectors
        return np.broadcast_to(np.asarray(eff, float), 4), np.broadcast_to(np.asarray(dark, float), 4)
    if isinstance(detectors, DetectorModel):
        detectors = [detectors] * 4
    detectors = list(detectors)
    if len(detectors) != 4:
        raise ValueError("need four detectors")
    eff = np.array([d.efficiency for d in detectors], dtype=float)
    dark = np.array([d.dark_prob for d in detectors], dtype=float)
    return eff, dark


def exposures(mu_a, mu_b, jones_a, jones_b, xi, phi) -> np.ndarray:
    """Mean photon numbers at the four detectors; broadcasts, last axis = detector."""
    a = np.sqrt(np.asarray(mu_a, dtype=float))[..., None] * np.asarray(jones_a)
    b = np.sqrt(np.asarray(mu_b, dtype=float))[..., None] * np.asarray(jones_b)
    xi = np.asarray(xi, dtype=float)
    rot = (xi * np.exp(1j * np.asarray(phi)))[..., None]
    port1 = (a + rot * b) / math.sqrt(2.0)
    port2 = (a - rot * b) / math.sqrt(2.0)
    stray = ((1.0 - xi * xi)[..., None] * np.abs(b) ** 2) / 2.0
    return np.concatenate([np.abs(port1) ** 2 + stray, np.abs(port2) ** 2 + stray], axis=-1)


def _click_probs(x, eff, dark):
    return 1.0 - (1.0 - dark) * np.exp(-eff * x)


def phase_average(func, rtol: float = 1e-9, atol: float = 1e-300):
    """Average ``func(phi)`` over [0, 2 pi) by a refined periodic trapezoid rule.

    ``func`` maps an array of phases to an array whose first axis is the
    phase; the result is the mean over that axis.
    """
    n = _MIN_NODES
    prev = np.mean(func(np.arange(n) * (2 * math.pi / n)), axis=0)
    while n < _MAX_NODES:
        # reuse the previous nodes, evaluate only the midpoints
        mid = np.mean(func((np.arange(n) + 0.5) * (2 * math.pi / n)), axis=0)
        cur = 0.5 * (prev + mid)
        n *= 2
        if np.all(np.abs(cur - prev) <= rtol * np.abs(cur) + atol):
            return cur
        prev = cur
    raise QuadratureError(f"phase average not converged with {n} nodes")


def _coincidence_given_phase(p):
    q = 1.0 - p
    port1 = 1.0 - q[..., 0] * q[..., 1]
    port2 = 1.0 - q[..., 2] * q[..., 3]
    return port1 * port2


def coincidence_prob(mu1, mu2, overlap, detectors=None, jones1=None, jones2=None) -> float:
    """Phase-averaged probability of clicks behind both beam-splitter outputs.

    Both pulses default to H polarization. ``overlap`` is a ModeOverlap or a
    bare ``xi``.
    """
    if mu1 < 0 or mu2 < 0:
        raise ValueError("mean photon numbers must be non-negative")
    xi = overlap.xi if isinstance(overlap, ModeOverlap) else float(overlap)
    j1 = encoded_jones(0, "Z") if jones1 is None else np.asarray(jones1)
    j2 = encoded_jones(0, "Z") if jones2 is None else np.asarray(jones2)
    eff, dark = detector_arrays(detectors)

    def f(phi):
        x = exposures(mu1, mu2, j1, j2, xi, phi[:, None])[:, 0, :]
        return _coincidence_given_phase(_click_probs(x, eff, dark))

    return float(phase_average(f))


def coincidence_monte_carlo(mu1, mu2, overlap, samples: int, rng, detectors=None,
                            jones1=None, jones2=None) -> tuple[float, float]:
    """Monte Carlo phase sampling of the coincidence probability: (mean, stderr)."""
    xi = overlap.xi if isinstance(overlap, ModeOverlap) else float(overlap)
    j1 = encoded_jones(0, "Z") if jones1 is None else np.asarray(jones1)
    j2 = encoded_jones(0, "Z") if jones2 is None else np.asarray(jones2)
    eff, dark = detector_arrays(detectors)
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 1 << 20
    while done < samples:
        k = min(chunk, samples - done)
        phi = rng.uniform(0.0, 2 * math.pi, k)
        x = exposures(mu1, mu2, j1, j2, xi, phi[:, None])[:, 0, :]
        v = _coincidence_given_phase(_click_probs(x, eff, dark))
        total += v.sum()
        total_sq += (v * v).sum()
        done += k
    mean = total / samples
    var = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(var / samples)


def detector_marginals(mu_a, mu_b, jones_a, jones_b, xi, detectors=None) -> np.ndarray:
    """Phase-averaged click probability of each of the four detectors."""
    eff, dark = detector_arrays(detectors)

    def f(phi):
        x = exposures(mu_a, mu_b, jones_a, jones_b, xi, phi[:, None])[:, 0, :]
        return _click_probs(x, eff, dark)

    return phase_average(f)


def bell_probabilities(mu_a, mu_b, jones_a, jones_b, xi, detectors=None) -> np.ndarray:
    """Phase-averaged ``(P[Psi+], P[Psi-])``.

    ``jones_a``/``jones_b`` may carry leading batch axes (e.g. the four bit
    combinations); the result then has shape ``batch + (2,)``.
    """
    eff, dark = detector_arrays(detectors)
    ja = np.asarray(jones_a)
    jb = np.asarray(jones_b)
    batch = np.broadcast_shapes(ja.shape[:-1], jb.shape[:-1])

    def f(phi):
        shp = (len(phi),) + (1,) * len(batch)
        x = exposures(mu_a, mu_b, ja, jb, xi, phi.reshape(shp))
        p = _click_probs(x, eff, dark)
        q = 1.0 - p
        plus = p[..., 0] * p[..., 1] * q[..., 2] * q[..., 3] + p[..., 2] * p[..., 3] * q[..., 0] * q[..., 1]
        minus = p[..., 0] * p[..., 3] * q[..., 1] * q[..., 2] + p[..., 1] * p[..., 2] * q[..., 0] * q[..., 3]
        return np.stack([plus, minus], axis=-1)

    return phase_average(f, atol=1e-30)


@dataclass(frozen=True)
class HomConfig:
    """Source and detector calibration for a HOM dip measurement."""

    shape: PulseShape = field(default_factory=PulseShape)
    mean_photons: float = 0.01  # per pulse at the beam splitter
    timing_jitter: float = 2.0  # ps, residual rms delay error
    detuning_jitter: float = 30.7  # kHz, rms pair detuning
    static_overlap: float = 1.0  # pulse-shape mismatch factor on xi
    extinction_ratio_db: float = 30.0
    efficiency: float = 1.0
    dark_prob: float = 0.0
    jitter_nodes: int = 12  # Gauss-Hermite nodes per jitter axis

    def __post_init__(self):
        if self.mean_photons <= 0:
            raise ValueError("mean_photons must be positive")
        if self.timing_jitter < 0 or self.detuning_jitter < 0:
            raise ValueError("jitters must be non-negative")
        if not 0 <= self.static_overlap <= 1:
            raise ValueError("static_overlap must lie in [0, 1]")

    @property
    def detectors(self):
        return (np.full(4, self.efficiency), np.full(4, self.dark_prob))


@dataclass
class HomScan:
    delays: np.ndarray
    coincidence: np.ndarray
    visibility: float
    baseline: float

    def rows(self):
        for d, c in zip(self.delays.tolist(), self.coincidence.tolist()):
            yield d, c, self.visibility


def _jitter_nodes(std, n):
    if std == 0:
        return np.zeros(1), np.ones(1)
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x * std, w / w.sum()


def hom_scan(config: HomConfig, delays) -> HomScan:
    """Ensemble-averaged coincidence probability versus relative delay.

    Timing and detuning jitters are Gaussian and integrated with
    Gauss-Hermite nodes, so the scan is deterministic.
    """
    delays = np.asarray(delays, dtype=float)
    far = np.abs(delays) >= 5 * config.shape.fwhm
    if not far.any():
        raise ValueError("delays need a baseline point with |tau| >= 5 x FWHM")
    jones = encoded_jones(0, "Z", config.extinction_ratio_db)
    eff, dark = config.detectors
    dt, wt = _jitter_nodes(config.timing_jitter, config.jitter_nodes)
    dn, wn = _jitter_nodes(config.detuning_jitter, config.jitter_nodes)
    cc = np.empty(len(delays))
    cache: dict[float, float] = {}
    for i, tau in enumerate(delays):
        acc = 0.0
        for t, a in zip(dt, wt):
            for nu, b in zip(dn, wn):
                xi = config.static_overlap * mode_overlap(config.shape, tau + t, nu).xi
                key = round(xi, 14)
                if key not in cache:
                    cache[key] = coincidence_prob(config.mean_photons, config.mean_photons, xi,
                                                  (eff, dark), jones, jones)
                acc += a * b * cache[key]
        cc[i] = acc
    baseline = float(cc[far].mean())
    vis = 1.0 - float(cc.min()) / baseline if baseline > 0 else 0.0
    return HomScan(delays, cc, vis, baseline)


def bsm_batch(mu_a, mu_b, jones_a, jones_b, xi, rng, detectors=None) -> np.ndarray:
    """Sample click patterns for a batch of pulse pairs; returns bool array (n, 4)."""
    eff, dark = detector_arrays(detectors)
    mu_a = np.asarray(mu_a, dtype=float)
    n = np.broadcast_shapes(mu_a.shape, np.shape(mu_b), np.shape(xi), np.shape(jones_a)[:-1])
    phi = rng.uniform(0.0, 2 * math.pi, n)
    x = exposures(mu_a, mu_b, jones_a, jones_b, xi, phi)
    p = _click_probs(x, eff, dark)
    return rng.random(p.shape) < p


def bsm_trial(pulse_a: PulseDescriptor, pulse_b: PulseDescriptor, detectors, rng,
              shape: PulseShape | None = None) -> ClickPattern:
    """One pulse pair through the measurement station.

    The mode overlap follows from the pulses' time offsets and detunings when
    ``shape`` is given; otherwise the pulses are taken as mode-matched.
    """
    if shape is None:
        xi = 1.0
    else:
        xi = mode_overlap(shape, pulse_b.time_offset - pulse_a.time_offset,
                          pulse_b.carrier_detuning - pulse_a.carrier_detuning).xi
    clicks = bsm_batch(pulse_a.mean_photons, pulse_b.mean_photons,
                       pulse_a.polarization.vector, pulse_b.polarization.vector, xi, rng, detectors)
    return ClickPattern(*map(bool, clicks))


_PATTERN_CODES = np.zeros(16, dtype=np.int8)
_PATTERN_CODES[0b1001] = BsmOutcome.PSI_MINUS  # D1H + D2V
_PATTERN_CODES[0b0110] = BsmOutcome.PSI_MINUS  # D1V + D2H
_PATTERN_CODES[0b1100] = BsmOutcome.PSI_PLUS  # D1H + D1V
_PATTERN_CODES[0b0011] = BsmOutcome.PSI_PLUS  # D2H + D2V
_WEIGHTS = np.array([8, 4, 2, 1])


def classify_array(clicks) -> np.ndarray:
    """Outcome codes (0 none, 1 Psi+, 2 Psi-) for an (n, 4) boolean array."""
    clicks = np.asarray(clicks, dtype=bool)
    return _PATTERN_CODES[clicks.astype(np.int64) @ _WEIGHTS]


def classify(pattern: ClickPattern) -> BsmOutcome:
    return BsmOutcome(int(classify_array(pattern.as_array())))
