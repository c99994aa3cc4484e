"""Frequency plan and locking of a soliton microcomb.

Tooth index convention: increasing index means decreasing optical frequency,
so ``CH+15`` sits on the red side of ``CH0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CombPlan",
    "LockLoopConfig",
    "LockTrace",
    "SeedJitterModel",
    "LockInstabilityError",
    "ToothRangeError",
    "ItuRangeError",
    "tooth_frequency",
    "itu_label",
    "itu_frequency",
    "simulate_lock",
    "pair_detuning",
    "seed_jitter_trace",
    "calibrate_measurement_noise",
]

ITU_ANCHOR_THZ = 190.0
ITU_PITCH_THZ = 0.1
ITU_CHANNELS = range(1, 73)


class ToothRangeError(ValueError):
    """Tooth index outside the plan's usable range."""


class ItuRangeError(ValueError):
    """Tooth frequency not covered by the C/H channel labels."""


class LockInstabilityError(RuntimeError):
    """The lock loop diverged."""

    def __init__(self, message: str, time_s: float):
        super().__init__(message)
        self.time_s = time_s


@dataclass(frozen=True)
class CombPlan:
    center_frequency: float = 192.1175  # THz, tooth CH0
    repetition_rate: float = 49.0  # GHz
    tooth_range: tuple[int, int] = (-100, 100)
    snr_floor: float = 20.0  # dB

    def __post_init__(self):
        n_min, n_max = self.tooth_range
        if self.repetition_rate <= 0:
            raise ValueError("repetition_rate must be positive")
        if not n_min <= 0 <= n_max:
            raise ValueError("tooth_range must contain 0")

    @property
    def tooth_count(self) -> int:
        return self.tooth_range[1] - self.tooth_range[0] + 1

    def indices(self) -> np.ndarray:
        return np.arange(self.tooth_range[0], self.tooth_range[1] + 1)


def tooth_frequency(plan: CombPlan, n: int) -> float:
    """Optical frequency of tooth ``n`` in THz."""
    n_min, n_max = plan.tooth_range
    if not n_min <= n <= n_max:
        raise ToothRangeError(f"tooth {n} outside [{n_min}, {n_max}]")
    return plan.center_frequency - n * plan.repetition_rate * 1e-3


def itu_frequency(label: str) -> float:
    """Grid frequency (THz) of a ``C<k>`` or ``H<k>`` label."""
    kind, k = label[0], int(label[1:])
    if kind not in "CH" or k not in ITU_CHANNELS:
        raise ValueError(f"unknown ITU label {label!r}")
    return ITU_ANCHOR_THZ + k * ITU_PITCH_THZ + (0.05 if kind == "H" else 0.0)


def itu_label(plan: CombPlan, n: int) -> str:
    """Nearest 50-GHz grid label for tooth ``n``."""
    f = tooth_frequency(plan, n)
    half_steps = round((f - ITU_ANCHOR_THZ) / (ITU_PITCH_THZ / 2))
    k, half = divmod(half_steps, 2)
    if k not in ITU_CHANNELS:
        raise ItuRangeError(f"tooth {n} at {f:.4f} THz is outside the labelled band")
    return f"{'H' if half else 'C'}{k}"


@dataclass(frozen=True)
class LockLoopConfig:
    """Repetition-rate lock: PI control of the ring temperature.

    Gains are dimensionless per-step loop gains; the controller converts the
    error to a temperature command by dividing by ``thermal_coefficient``.
    """

    thermal_coefficient: float = 1000.0  # Hz/mK
    kp: float = 1.0
    ki: float = 0.2
    ambient_walk: float = 0.4  # mK/sqrt(s)
    measurement_noise: float = 154.5  # Hz, fitted: closed-loop std 215 Hz
    step_interval: float = 0.1  # s
    thermal_time_constant: float = 1.0  # s
    record_interval: float = 1.0  # s
    rf_reference: float = 49.0  # GHz
    initial_offset: float = 0.0  # Hz, initial Omega_RF - Omega_Rep
    divergence_bound: float = 1e6  # Hz
    survival_range: float = 2000.0  # mK

    def __post_init__(self):
        if min(self.step_interval, self.thermal_time_constant, self.record_interval) <= 0:
            raise ValueError("time constants must be positive")
        if self.ambient_walk < 0 or self.measurement_noise < 0:
            raise ValueError("noise stds must be non-negative")
        if self.thermal_coefficient == 0:
            raise ValueError("thermal_coefficient must be non-zero")


@dataclass
class LockTrace:
    time: np.ndarray
    delta_omega_r: np.ndarray  # Hz, measured error signal
    temperature_offset: np.ndarray  # mK, controller command

    @property
    def std(self) -> float:
        return float(np.std(self.delta_omega_r))

    @property
    def peak_to_peak(self) -> float:
        return float(np.ptp(self.delta_omega_r))

    @property
    def temperature_excursion(self) -> float:
        return float(np.ptp(self.temperature_offset))

    def rows(self):
        yield from zip(self.time.tolist(), self.delta_omega_r.tolist(),
                       self.temperature_offset.tolist())


def simulate_lock(config: LockLoopConfig, duration: float, seed=None) -> LockTrace:
    """Discrete-time PI lock of the repetition rate on a first-order thermal plant.

    Ring temperature relaxes toward ambient + command with the thermal time
    constant; ambient is a random walk and the beat-note reading carries white
    noise. The trace is sampled every ``record_interval``.

    Raises :class:`LockInstabilityError` when ``|delta_omega_r|`` leaves
    ``divergence_bound`` or the command leaves the survival range.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    steps = int(round(duration / config.step_interval))
    dt = config.step_interval
    alpha = dt / config.thermal_time_constant
    kappa = config.thermal_coefficient

    walk = rng.standard_normal(steps) * config.ambient_walk * math.sqrt(dt)
    meas = rng.standard_normal(steps) * config.measurement_noise

    stride = max(1, int(round(config.record_interval / dt)))
    err = np.empty(steps // stride)
    cmd = np.empty(steps // stride)
    ring = 0.0
    ambient = 0.0
    integral = 0.0
    u = 0.0
    for k in range(steps):
        ambient += walk[k]
        ring += alpha * (ambient + u - ring)
        e = -(config.initial_offset + kappa * ring) + meas[k]
        if not abs(e) <= config.divergence_bound:
            raise LockInstabilityError(
                f"|delta_omega_r| exceeded {config.divergence_bound:g} Hz", (k + 1) * dt)
        integral += e
        u = (config.kp * e + config.ki * integral) / kappa
        if not abs(u) <= config.survival_range:
            raise LockInstabilityError(
                f"temperature command left the {config.survival_range:g} mK survival range",
                (k + 1) * dt)
        if (k + 1) % stride == 0:
            j = (k + 1) // stride - 1
            err[j] = e
            cmd[j] = u
    time = (np.arange(len(err)) + 1) * stride * dt
    return LockTrace(time, err, cmd)


def calibrate_measurement_noise(config: LockLoopConfig, target_std: float = 215.0,
                                duration: float = 3 * 3600.0, seed=0) -> float:
    """Reading-noise std that makes the closed-loop error std hit ``target_std``.

    The loop is linear, so the error is the sum of an ambient-driven part and a
    part proportional to the reading noise; one run of each fixes the scale.
    """
    from dataclasses import replace

    ambient = simulate_lock(replace(config, measurement_noise=0.0), duration, seed).std
    unit = simulate_lock(replace(config, ambient_walk=0.0, initial_offset=0.0,
                                 measurement_noise=1.0), duration, seed).std
    return math.sqrt(max(target_std**2 - ambient**2, 0.0)) / unit


@dataclass(frozen=True)
class SeedJitterModel:
    single_laser_std: float = 21.7  # kHz
    correlation_time: float = 1.0  # s

    def __post_init__(self):
        if self.single_laser_std < 0 or self.correlation_time <= 0:
            raise ValueError("invalid jitter model")


def pair_detuning(model_a: SeedJitterModel, model_b: SeedJitterModel, rng, size=None):
    """Instantaneous carrier detuning (kHz) between matching teeth of two combs."""
    sigma = math.hypot(model_a.single_laser_std, model_b.single_laser_std)
    if sigma == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.normal(0.0, sigma, size)


def seed_jitter_trace(model: SeedJitterModel, duration: float, dt: float, rng) -> np.ndarray:
    """Ornstein-Uhlenbeck frequency deviation (kHz), stationary start."""
    steps = int(round(duration / dt))
    a = math.exp(-dt / model.correlation_time)
    kick = model.single_laser_std * math.sqrt(1 - a * a)
    out = np.empty(steps)
    x = rng.normal(0.0, model.single_laser_std) if model.single_laser_std else 0.0
    noise = rng.standard_normal(steps)
    for k in range(steps):
        out[k] = x
        x = a * x + kick * noise[k]
    return out
