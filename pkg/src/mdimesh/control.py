"""Closed-loop compensators: SPGD polarization control and arrival-time feedback."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .photonics import encoded_jones, rotation_unitary

__all__ = [
    "EpcState",
    "SpgdConfig",
    "PolarizationLink",
    "CompensationTrace",
    "TimingLoopConfig",
    "TimingTrace",
    "epc_unitary",
    "wrap_angles",
    "spgd_step",
    "rejected_fraction",
    "link_qber",
    "stokes",
    "run_compensation",
    "timing_feedback",
    "timing_drift_series",
]

# EPC stages alternate between the S1 and S2 axes
_EPC_AXES = np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0], [0, 1.0, 0]])


def wrap_angles(u) -> np.ndarray:
    return (np.asarray(u, dtype=float) + math.pi) % (2 * math.pi) - math.pi


def epc_unitary(angles) -> np.ndarray:
    """Composed rotation of the four retarder stages (first stage acts first)."""
    mats = rotation_unitary(_EPC_AXES * np.asarray(angles, dtype=float)[:, None])
    return mats[3] @ mats[2] @ mats[1] @ mats[0]


@dataclass(frozen=True)
class EpcState:
    angles: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.angles) != 4:
            raise ValueError("an EPC has four stages")
        object.__setattr__(self, "angles", tuple(float(a) for a in wrap_angles(self.angles)))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.angles)

    def unitary(self) -> np.ndarray:
        return epc_unitary(self.angles)


@dataclass(frozen=True)
class SpgdConfig:
    gain: float = 5.0  # grid-searched against 1e-4 rad^2/s drift
    perturbation: float = 0.05  # rad
    iteration_period: float = 0.1  # s
    objective: str = "rejected_zx"
    reference_counts: float = 1e5  # per reference state and evaluation

    def __post_init__(self):
        if self.gain <= 0 or self.perturbation <= 0 or self.iteration_period <= 0:
            raise ValueError("gain, perturbation and iteration_period must be positive")
        if self.objective not in ("rejected_zx", "rejected_z"):
            raise ValueError("objective must be 'rejected_zx' or 'rejected_z'")
        if self.reference_counts <= 0:
            raise ValueError("reference_counts must be positive")


def _signs(rng, size=4):
    return rng.integers(0, 2, size) * 2.0 - 1.0


def spgd_step(state: EpcState, objective, config: SpgdConfig, rng, gain: float | None = None) -> EpcState:
    """One two-sided dither: ``u <- u - gain * (J(u + d s) - J(u - d s)) * s``."""
    g = config.gain if gain is None else gain
    s = _signs(rng)
    u = state.vector
    dj = objective(u + config.perturbation * s) - objective(u - config.perturbation * s)
    if g == 0:
        return state
    return EpcState(tuple(u - g * dj * s))


# Unit quaternions (q0, q1, q2, q3) stand for q0 I - i (q1 S1 + q2 S2 + q3 S3);
# products compose unitaries and rotate Stokes vectors by the same angle.

def _qmul(a, b):
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return (a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + b0 * a1 + a2 * b3 - a3 * b2,
            a0 * b2 + b0 * a2 + a3 * b1 - a1 * b3,
            a0 * b3 + b0 * a3 + a1 * b2 - a2 * b1)


def _qrot(q, v):
    q0, x, y, z = q
    vx, vy, vz = v
    # t = 2 q x v ; v' = v + q0 t + q x t
    tx = 2 * (y * vz - z * vy)
    ty = 2 * (z * vx - x * vz)
    tz = 2 * (x * vy - y * vx)
    return (vx + q0 * tx + y * tz - z * ty,
            vy + q0 * ty + z * tx - x * tz,
            vz + q0 * tz + x * ty - y * tx)


def _qvec(w):
    wx, wy, wz = w
    th = math.sqrt(wx * wx + wy * wy + wz * wz)
    if th == 0:
        return (1.0, 0.0, 0.0, 0.0)
    s = math.sin(th / 2) / th
    return (math.cos(th / 2), wx * s, wy * s, wz * s)


def _qepc(angles):
    a0, a1, a2, a3 = angles
    c0, s0 = math.cos(a0 / 2), math.sin(a0 / 2)
    c1, s1 = math.cos(a1 / 2), math.sin(a1 / 2)
    c2, s2 = math.cos(a2 / 2), math.sin(a2 / 2)
    c3, s3 = math.cos(a3 / 2), math.sin(a3 / 2)
    q = _qmul((c1, 0.0, s1, 0.0), (c0, s0, 0.0, 0.0))
    q = _qmul((c2, s2, 0.0, 0.0), q)
    return _qmul((c3, 0.0, s3, 0.0), q)


def _qunitary(q) -> np.ndarray:
    q0, q1, q2, q3 = q
    # S1 -> Z, S2 -> X, S3 -> Y Pauli
    return np.array([[q0 - 1j * q1, -1j * q2 - q3],
                     [-1j * q2 + q3, q0 + 1j * q1]], dtype=complex)


def _qfrom_unitary(u) -> tuple:
    su = u / np.sqrt(np.linalg.det(u))
    q0 = 0.5 * np.trace(su).real
    q1 = -0.5 * (su[0, 0] - su[1, 1]).imag
    q2 = -0.5 * (su[0, 1] + su[1, 0]).imag
    q3 = 0.5 * (su[1, 0] - su[0, 1]).real
    return (float(q0), float(q1), float(q2), float(q3))


def stokes(jones) -> tuple[float, float, float]:
    h, v = complex(jones[0]), complex(jones[1])
    hv = h.conjugate() * v
    return (abs(h) ** 2 - abs(v) ** 2, 2 * hv.real, 2 * hv.imag)


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _references(extinction_ratio_db, bases):
    """(encoded Stokes vector, ideal target Stokes vector) per reference state."""
    ideal = {("Z", 0): (1.0, 0.0, 0.0), ("Z", 1): (-1.0, 0.0, 0.0),
             ("X", 0): (0.0, 1.0, 0.0), ("X", 1): (0.0, -1.0, 0.0)}
    return [(stokes(encoded_jones(bit, b, extinction_ratio_db)), ideal[b, bit])
            for b in bases for bit in (0, 1)]


def rejected_fraction(unitary, extinction_ratio_db: float = 30.0, bases: str = "ZX") -> float:
    """Mean probability that bit-0 reference states land in the wrong analyser port."""
    q = _qfrom_unitary(np.asarray(unitary))
    refs = _references(extinction_ratio_db, bases)[::2]
    return float(np.mean([(1 - _dot(t, _qrot(q, s))) / 2 for s, t in refs]))


def link_qber(unitary, extinction_ratio_db: float = 30.0) -> tuple[float, float]:
    """Single-link (Z, X) error probabilities of the encoded states under ``unitary``.

    ``unitary`` is a 2x2 matrix or a unit quaternion tuple.
    """
    q = unitary if isinstance(unitary, tuple) else _qfrom_unitary(np.asarray(unitary))
    refs = _references(extinction_ratio_db, "ZX")
    errs = [(1 - _dot(t, _qrot(q, s))) / 2 for s, t in refs]
    return (errs[0] + errs[1]) / 2, (errs[2] + errs[3]) / 2


@dataclass
class PolarizationLink:
    """One user-to-hub fiber with a drifting unitary, an EPC and a reference monitor.

    ``static_rotation`` is a fixed residual error downstream of the monitor,
    so the loop cannot remove it. The drift is kept as a unit quaternion.
    """

    drift_rate: float = 1e-4  # rad^2/s
    extinction_ratio_db: float = 30.0
    static_rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    drift_q: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    epc: EpcState = field(default_factory=EpcState)

    def monitored_q(self, angles=None):
        return _qmul(_qepc(self.epc.angles if angles is None else angles), self.drift_q)

    def total_q(self):
        return _qmul(_qvec(self.static_rotation), self.monitored_q())

    def monitored_unitary(self, angles=None) -> np.ndarray:
        return _qunitary(self.monitored_q(angles))

    def total_unitary(self) -> np.ndarray:
        return _qunitary(self.total_q())

    def objective(self, config: SpgdConfig, rng):
        """Shot-noise-limited rejected fraction of the monitored references."""
        bases = "ZX" if config.objective == "rejected_zx" else "Z"
        refs = _references(self.extinction_ratio_db, bases)[::2]
        k = config.reference_counts * len(refs)

        def j(angles):
            q = self.monitored_q(angles)
            p = sum((1 - _dot(t, _qrot(q, s))) / 2 for s, t in refs) / len(refs)
            return rng.poisson(k * max(p, 0.0)) / k

        return j


@dataclass
class CompensationTrace:
    time: np.ndarray
    qber: np.ndarray  # single-link Z-basis error
    qber_x: np.ndarray
    residual_angle: np.ndarray  # rad, rotation left on the monitored path

    def steady_state(self, skip: float = 0.1) -> float:
        k = int(len(self.qber) * skip)
        return float(np.mean(self.qber[k:]))

    def rows(self):
        yield from zip(self.time.tolist(), self.qber.tolist(), self.qber_x.tolist(),
                       self.residual_angle.tolist())


class _Angles:
    """Plain holder for already wrapped EPC angles inside the loop."""

    __slots__ = ("angles",)

    def __init__(self, angles):
        self.angles = angles


def run_compensation(link: PolarizationLink, duration: float, config: SpgdConfig, rng,
                     enabled: bool = True, sample_interval: float = 1.0) -> CompensationTrace:
    """Advance drift and (optionally) the SPGD loop for ``duration`` seconds.

    The link is updated in place so consecutive calls continue the same
    trajectory. Drift per loop period is an isotropic rotation with total
    angle variance ``drift_rate * period``. Samples are taken every
    ``sample_interval`` seconds.
    """
    dt = config.iteration_period
    steps = int(round(duration / dt))
    stride = max(1, int(round(sample_interval / dt)))
    kicks = rng.normal(0.0, math.sqrt(link.drift_rate * dt / 3.0), (steps, 3)).tolist()
    signs = _signs(rng, (steps, 4)).tolist()
    obj = link.objective(config, rng)
    delta, gain = config.perturbation, config.gain
    t, qz, qx, res = [], [], [], []
    u = list(link.epc.angles)
    for k in range(steps):
        link.drift_q = _qmul(_qvec(kicks[k]), link.drift_q)
        if enabled:
            s = signs[k]
            dj = obj([a + delta * b for a, b in zip(u, s)]) - obj([a - delta * b for a, b in zip(u, s)])
            u = [(a - gain * dj * b + math.pi) % (2 * math.pi) - math.pi for a, b in zip(u, s)]
            link.epc = _Angles(u)
        if (k + 1) % stride == 0:
            ez, ex = link_qber(link.total_q(), link.extinction_ratio_db)
            t.append((k + 1) * dt)
            qz.append(ez)
            qx.append(ex)
            res.append(2 * math.acos(min(1.0, abs(link.monitored_q()[0]))))
    # renormalise accumulated rounding
    norm = math.sqrt(sum(c * c for c in link.drift_q))
    link.drift_q = tuple(c / norm for c in link.drift_q)
    link.epc = EpcState(tuple(u))
    return CompensationTrace(np.array(t), np.array(qz), np.array(qx), np.array(res))


@dataclass(frozen=True)
class TimingLoopConfig:
    measurement_period: float = 0.1  # s
    smoothing: float = 0.5
    actuator_resolution: float = 0.5  # ps
    measurement_noise: float = 1.5  # ps rms per reading

    def __post_init__(self):
        if self.measurement_period <= 0:
            raise ValueError("measurement_period must be positive")
        if not 0 < self.smoothing <= 1:
            raise ValueError("smoothing must lie in (0, 1]")
        if self.actuator_resolution < 0 or self.measurement_noise < 0:
            raise ValueError("resolution and noise must be non-negative")


@dataclass
class TimingTrace:
    time: np.ndarray
    drift: np.ndarray  # ps, uncompensated offset
    residual: np.ndarray  # ps

    @property
    def residual_std(self) -> float:
        return float(np.std(self.residual))

    @property
    def residual_rms(self) -> float:
        """RMS offset from the slot centre."""
        return float(np.sqrt(np.mean(self.residual ** 2)))

    @property
    def drift_rms(self) -> float:
        return float(np.sqrt(np.mean(self.drift ** 2)))

    def rows(self):
        yield from zip(self.time.tolist(), self.drift.tolist(), self.residual.tolist())


def timing_drift_series(duration: float, period: float, walk: float, rng) -> np.ndarray:
    """Random-walk arrival offset (ps) sampled every ``period`` seconds."""
    steps = int(round(duration / period))
    return np.cumsum(rng.normal(0.0, walk * math.sqrt(period), steps))


def timing_feedback(drift, config: TimingLoopConfig, rng=None, enabled: bool = True) -> TimingTrace:
    """Residual arrival offset under exponentially smoothed delay correction.

    Each period the residual is read with white noise, the correction moves
    by ``smoothing`` times the reading and is rounded to the actuator step.
    """
    drift = np.asarray(drift, dtype=float)
    time = (np.arange(len(drift)) + 1) * config.measurement_period
    if not enabled:
        return TimingTrace(time, drift, drift.copy())
    noise = (rng.normal(0.0, config.measurement_noise, len(drift))
             if rng is not None and config.measurement_noise > 0 else np.zeros(len(drift)))
    q = config.actuator_resolution
    res = np.empty_like(drift)
    c = 0.0
    for k, d in enumerate(drift):
        r = d - c
        res[k] = r
        c = c + config.smoothing * (r + noise[k])
        if q > 0:
            c = q * round(c / q)
    return TimingTrace(time, drift, res)
