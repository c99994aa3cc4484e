"""Transmitter, fiber and detector models for weak coherent pulses.

Polarization is carried as a Jones vector ``(h, v)``. Rotations are written
on the Poincare sphere with S1 = H/V, S2 = +/-, S3 = circular, so a rotation
vector ``w`` acts as ``exp(-i w.sigma / 2)`` with ``sigma = (Z, X, Y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "PulseShape",
    "PolarizationState",
    "IntensitySet",
    "FiberChannel",
    "DetectorModel",
    "PulseDescriptor",
    "DriftState",
    "H", "V", "PLUS", "MINUS",
    "BASES",
    "encoded_jones",
    "encode_pulse",
    "polarization_error_floor",
    "rotation_unitary",
    "rotation_angle",
    "propagate",
    "drift_step",
    "click_probability",
    "detect",
    "default_detectors",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
BASES = ("Z", "X")
DETECTOR_LABELS = ("D1H", "D1V", "D2H", "D2V")

H = np.array([1.0, 0.0], dtype=complex)
V = np.array([0.0, 1.0], dtype=complex)
PLUS = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
MINUS = np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0)

_SIGMA = np.array([
    [[1, 0], [0, -1]],   # S1
    [[0, 1], [1, 0]],    # S2
    [[0, -1j], [1j, 0]],  # S3
], dtype=complex)


@dataclass(frozen=True)
class PulseShape:
    fwhm: float = 95.0  # ps, intensity FWHM
    clock_rate: float = 2.5  # GHz

    def __post_init__(self):
        if self.fwhm <= 0 or self.clock_rate <= 0:
            raise ValueError("fwhm and clock_rate must be positive")
        if self.fwhm >= 1e3 / self.clock_rate:
            raise ValueError("pulse does not fit in the clock period")

    @property
    def sigma_t(self) -> float:
        """Intensity rms width in ps."""
        return self.fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class PolarizationState:
    jones: tuple[complex, complex]

    def __post_init__(self):
        h, v = self.jones
        if abs(abs(h) ** 2 + abs(v) ** 2 - 1.0) > 1e-12:
            raise ValueError("Jones vector must have unit norm")

    @classmethod
    def from_vector(cls, vec) -> "PolarizationState":
        vec = np.asarray(vec, dtype=complex)
        vec = vec / np.linalg.norm(vec)
        return cls((complex(vec[0]), complex(vec[1])))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.jones, dtype=complex)


@dataclass(frozen=True)
class IntensitySet:
    """Decoy intensities with their send and basis probabilities.

    ``z_probabilities[i]`` is the chance of preparing intensity ``i`` in the Z
    basis; the remainder is X.
    """

    intensities: tuple[float, ...] = (0.3, 0.2, 0.05, 0.0)
    send_probabilities: tuple[float, ...] = (0.5, 0.1, 0.3, 0.1)
    z_probabilities: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0)
    names: tuple[str, ...] = ("signal", "decoy_strong", "decoy_weak", "vacuum")

    def __post_init__(self):
        k = len(self.intensities)
        if not (len(self.send_probabilities) == len(self.z_probabilities) == len(self.names) == k):
            raise ValueError("intensity set fields must have equal length")
        probs = np.asarray(self.send_probabilities)
        if np.any(probs < 0) or np.any(probs > 1) or abs(probs.sum() - 1) > 1e-9:
            raise ValueError("send probabilities must lie in [0, 1] and sum to 1")
        z = np.asarray(self.z_probabilities)
        if np.any(z < 0) or np.any(z > 1):
            raise ValueError("basis probabilities must lie in [0, 1]")
        mus = np.asarray(self.intensities)
        if np.any(mus < 0) or len(set(self.intensities)) != k:
            raise ValueError("intensities must be distinct and non-negative")
        if 0.0 not in self.intensities:
            raise ValueError("a vacuum intensity is required")

    def __len__(self):
        return len(self.intensities)

    def basis_probability(self, index: int, basis: str) -> float:
        z = self.z_probabilities[index]
        return z if basis == "Z" else 1.0 - z

    @property
    def vacuum_index(self) -> int:
        return self.intensities.index(0.0)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class FiberChannel:
    length: float = 100.0  # km
    attenuation: float = 0.2  # dB/km
    polarization_drift_rate: float = 0.0  # rad^2/s
    timing_drift: float = 0.0  # ps/sqrt(s)

    def __post_init__(self):
        if self.length < 0 or self.attenuation < 0:
            raise ValueError("length and attenuation must be non-negative")
        if self.polarization_drift_rate < 0 or self.timing_drift < 0:
            raise ValueError("drift magnitudes must be non-negative")

    @property
    def transmittance(self) -> float:
        return 10.0 ** (-self.attenuation * self.length / 10.0)


@dataclass(frozen=True)
class DetectorModel:
    efficiency: float = 0.8
    dark_prob: float = 1e-7
    jitter_std: float = 30.0  # ps
    label: str = "D1H"

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if not 0 <= self.dark_prob < 1:
            raise ValueError("dark_prob must lie in [0, 1)")
        if self.jitter_std < 0:
            raise ValueError("jitter_std must be non-negative")
        if self.label not in DETECTOR_LABELS:
            raise ValueError(f"label must be one of {DETECTOR_LABELS}")


def default_detectors(efficiency=0.8, dark_prob=1e-7, jitter_std=30.0) -> tuple[DetectorModel, ...]:
    return tuple(DetectorModel(efficiency, dark_prob, jitter_std, lab) for lab in DETECTOR_LABELS)


@dataclass(frozen=True)
class PulseDescriptor:
    mean_photons: float
    polarization: PolarizationState
    time_offset: float = 0.0  # ps
    carrier_detuning: float = 0.0  # kHz
    intensity_tag: int = 0
    basis_tag: str = "Z"
    bit: int = 0

    def __post_init__(self):
        if self.mean_photons < 0:
            raise ValueError("mean_photons must be non-negative")


@dataclass
class DriftState:
    """Channel polarization unitary plus slow arrival-time offset."""

    unitary: np.ndarray = field(default_factory=lambda: np.eye(2, dtype=complex))
    time_offset: float = 0.0  # ps
    last_rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))


def polarization_error_floor(extinction_ratio_db: float) -> float:
    """Probability of finding an encoded state in its orthogonal partner."""
    if math.isinf(extinction_ratio_db):
        return 0.0
    r = 10.0 ** (-extinction_ratio_db / 10.0)
    return r / (1.0 + r)


def encoded_jones(bit, basis, extinction_ratio_db: float = math.inf) -> np.ndarray:
    """Jones vectors for the encoded states, broadcasting over arrays.

    ``basis`` is 0/1 for Z/X (or the strings "Z"/"X"); the orthogonal state
    leaks in with relative power ``10**(-ER/10)``.
    """
    bit = np.asarray(bit)
    if isinstance(basis, str):
        basis = BASES.index(basis)
    basis = np.asarray(basis)
    if extinction_ratio_db <= 0:
        raise ValueError("extinction ratio must be positive")
    leak = 0.0 if math.isinf(extinction_ratio_db) else 10.0 ** (-extinction_ratio_db / 20.0)
    norm = 1.0 / math.sqrt(1.0 + leak * leak)
    # target and orthogonal partner for (basis, bit)
    table = np.array([[H, V], [V, H], [PLUS, MINUS], [MINUS, PLUS]])
    pair = table[2 * basis + bit]
    return norm * (pair[..., 0, :] + leak * pair[..., 1, :])


def encode_pulse(bit: int, basis: str, intensity_set: IntensitySet, intensity_index: int,
                 extinction_ratio_db: float = 30.0) -> PulseDescriptor:
    jones = encoded_jones(bit, basis, extinction_ratio_db)
    return PulseDescriptor(
        mean_photons=intensity_set.intensities[intensity_index],
        polarization=PolarizationState.from_vector(jones),
        intensity_tag=intensity_index,
        basis_tag=basis,
        bit=int(bit),
    )


def rotation_unitary(w) -> np.ndarray:
    """SU(2) matrix for Poincare rotation vector(s) ``w`` (last axis of size 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    safe = np.where(theta > 0, theta, 1.0)
    n = w / safe[..., None]
    gen = np.einsum("...k,kij->...ij", n, _SIGMA)
    c = np.cos(theta / 2)[..., None, None]
    s = np.sin(theta / 2)[..., None, None]
    return c * np.eye(2) - 1j * s * gen


def rotation_angle(u: np.ndarray) -> float:
    """Poincare rotation angle of a 2x2 unitary, ignoring global phase."""
    det = np.linalg.det(u)
    su = u / np.sqrt(det)
    c = min(1.0, abs(np.trace(su).real) / 2)
    return 2.0 * math.acos(c)


def propagate(pulse: PulseDescriptor, channel: FiberChannel, drift_state: DriftState | None = None,
              rng=None) -> PulseDescriptor:
    """Attenuate, rotate and delay a pulse through a fiber link.

    ``rng`` is accepted for interface symmetry; propagation itself is
    deterministic given the drift state.
    """
    if channel.length == 0 and drift_state is None:
        return pulse
    mean = pulse.mean_photons * channel.transmittance
    pol = pulse.polarization
    offset = pulse.time_offset
    if drift_state is not None:
        pol = PolarizationState.from_vector(drift_state.unitary @ pol.vector)
        offset += drift_state.time_offset
    return replace(pulse, mean_photons=mean, polarization=pol, time_offset=offset)


def drift_step(state: DriftState, dt: float, rate: float, rng, timing_drift: float = 0.0) -> DriftState:
    """Advance isotropic polarization diffusion and the timing random walk.

    The rotation vector of one step is Gaussian with total variance
    ``rate * dt`` split over the three Stokes axes.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = rng.normal(0.0, math.sqrt(rate * dt / 3.0), 3) if rate > 0 else np.zeros(3)
    u = rotation_unitary(w) @ state.unitary if rate > 0 else state.unitary
    offset = state.time_offset
    if timing_drift > 0:
        offset += rng.normal(0.0, timing_drift * math.sqrt(dt))
    return DriftState(u, offset, w)


def click_probability(exposure, efficiency, dark_prob):
    """Threshold detector: ``1 - (1 - dark) exp(-eta * exposure)``."""
    exposure = np.asarray(exposure, dtype=float)
    if np.any(exposure < 0):
        raise ValueError("exposure must be non-negative")
    return 1.0 - (1.0 - dark_prob) * np.exp(-efficiency * exposure)


def detect(exposure, model: DetectorModel, rng) -> bool | np.ndarray:
    p = click_probability(exposure, model.efficiency, model.dark_prob)
    draw = rng.random(np.shape(p))
    out = draw < p
    return bool(out) if np.ndim(out) == 0 else out
