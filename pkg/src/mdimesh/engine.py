"""End-to-end link simulation: encoder, fiber, measurement, sifting and key extraction.

Two execution modes share one physical model:

* ``analytic``: expected tallies from phase-averaged Bell-outcome probabilities.
* ``monte_carlo``: a budget of sampled pulse pairs, scaled up to the block
  length before finite-size analysis. Scaling keeps the mean but shrinks the
  relative spread of the scaled counts less than a full-length run would, so
  sampled key rates carry extra variance (``RunResult.caveat``).
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .comb import CombPlan, SeedJitterModel, itu_label
from .control import (
    CompensationTrace, PolarizationLink, SpgdConfig, TimingLoopConfig, TimingTrace,
    run_compensation, timing_drift_series, timing_feedback,
)
from .interference import bell_probabilities, bsm_batch, classify_array, coincidence_prob
from .photonics import (
    DetectorModel, FiberChannel, IntensitySet, PulseShape, default_detectors, encoded_jones,
    rotation_unitary,
)
from .protocol import (
    DecoyEstimate, FiniteKeyParams, KeyReport, SiftedTally, evaluate, four_intensity_set,
    optimize_intensities, sift_array,
)

__all__ = [
    "Scenario",
    "RunResult",
    "LongRunResult",
    "effective_overlap",
    "expected_tally",
    "sample_tally",
    "run_scenario",
    "run_long",
    "rate_vs_distance",
    "detector_count_rate",
    "optimize_decoys",
    "static_unitaries",
    "SCHEMA",
]

SCHEMA = "mdimesh.run_result/1"
_AXIS = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class Scenario:
    intensities: IntensitySet = field(default_factory=IntensitySet)
    shape: PulseShape = field(default_factory=PulseShape)
    channel_a: FiberChannel = field(default_factory=FiberChannel)
    channel_b: FiberChannel = field(default_factory=FiberChannel)
    detectors: tuple[DetectorModel, ...] = field(default_factory=default_detectors)
    extinction_ratio_db: float = 30.0
    misalignment: float = 0.0  # rad, residual rotation per side (+ for A, - for B)
    misalignment_axis: tuple[float, float, float] = _AXIS
    static_overlap: float = 1.0
    timing_jitter: float = 0.0  # ps rms relative delay
    jitter_a: SeedJitterModel = field(default_factory=lambda: SeedJitterModel(0.0))
    jitter_b: SeedJitterModel = field(default_factory=lambda: SeedJitterModel(0.0))
    comb: CombPlan = field(default_factory=CombPlan)
    tooth: int = 0
    spgd: SpgdConfig = field(default_factory=SpgdConfig)
    timing_loop: TimingLoopConfig = field(default_factory=TimingLoopConfig)
    accumulation_time: float = 1000.0  # s
    mode: str = "analytic"
    pulse_budget: int = 10 ** 7
    shards: int = 1
    threads: int = 1
    finite_key: FiniteKeyParams = field(default_factory=FiniteKeyParams)
    keep_psi_plus_z: bool = True
    extra_loss_db: float = 0.0  # added to each side
    snapshot_interval: float = 100.0  # s, channel-state sampling in long runs
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("analytic", "monte_carlo"):
            raise ValueError("mode must be 'analytic' or 'monte_carlo'")
        if self.mode == "monte_carlo" and self.pulse_budget < 10 ** 4:
            raise ValueError("pulse_budget must be >= 1e4")
        if self.accumulation_time <= 0:
            raise ValueError("accumulation_time must be positive")
        if self.shards < 1 or self.threads < 1:
            raise ValueError("shards and threads must be >= 1")
        if len(self.detectors) != 4:
            raise ValueError("need four detectors")
        if self.extra_loss_db < 0:
            raise ValueError("extra_loss_db must be non-negative")

    @property
    def channel_label(self) -> str:
        return "CH0" if self.tooth == 0 else f"CH{self.tooth:+d}"

    @property
    def total_pulses(self) -> float:
        return self.accumulation_time * self.shape.clock_rate * 1e9

    def transmittance(self) -> tuple[float, float]:
        extra = 10 ** (-self.extra_loss_db / 10)
        return self.channel_a.transmittance * extra, self.channel_b.transmittance * extra

    def detector_arrays(self):
        eff = np.array([d.efficiency for d in self.detectors])
        dark = np.array([d.dark_prob for d in self.detectors])
        return eff, dark

    @property
    def detuning_std(self) -> float:
        return math.hypot(self.jitter_a.single_laser_std, self.jitter_b.single_laser_std)


@dataclass
class RunResult:
    tally: SiftedTally
    estimate: DecoyEstimate
    report: KeyReport
    raw_tally: SiftedTally | None = None
    hom: dict = field(default_factory=dict)
    perf: dict = field(default_factory=dict)
    caveat: str = ""
    traces: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        est = self.estimate
        return {
            "schema": SCHEMA,
            "report": self.report.to_dict(),
            "estimate": {
                "y11_lower": est.y11_lower, "e11_upper": est.e11_upper,
                "n11_lower": est.n11_lower, "phase_error_upper": est.phase_error_upper,
                "y11_joint": est.y11_joint, "e11_joint": est.e11_joint, "flag": est.flag,
            },
            "tally": self.tally.to_dict(),
            "raw_tally": self.raw_tally.to_dict() if self.raw_tally is not None else None,
            "hom": self.hom,
            "perf": self.perf,
            "caveat": self.caveat,
        }


def effective_overlap(s: Scenario, delay_rms: float | None = None) -> float:
    """RMS mode overlap over Gaussian delay and detuning jitter.

    Phase-averaged rates depend on the overlap through ``xi^2`` to leading
    order, so ``sqrt(E[xi^2])`` is the matching single value.
    """
    sig = s.shape.sigma_t * 1e-12
    d = (s.timing_jitter if delay_rms is None else delay_rms) * 1e-12
    w = 2 * math.pi * s.detuning_std * 1e3
    # E[exp(-d^2 / 4 sig^2)] and E[exp(-w^2 sig^2)] for zero-mean Gaussians
    t_fac = 1 / math.sqrt(1 + d * d / (2 * sig * sig))
    f_fac = 1 / math.sqrt(1 + 2 * (w * sig) ** 2)
    return s.static_overlap * math.sqrt(t_fac * f_fac)


def static_unitaries(s: Scenario):
    axis = np.asarray(s.misalignment_axis, float)
    axis = axis / np.linalg.norm(axis)
    return rotation_unitary(s.misalignment * axis), rotation_unitary(-s.misalignment * axis)


def _cell_probs(s: Scenario):
    """Selection probability of every ``(i, j, basis)`` cell with matched bases."""
    its = s.intensities
    p = np.asarray(its.send_probabilities)
    z = np.asarray(its.z_probabilities)
    pb = np.stack([p * z, p * (1 - z)], axis=-1)  # (k, 2)
    return pb[:, None, :] * pb[None, :, :]  # (k, k, 2)


def _bits():
    ba = np.array([0, 0, 1, 1])
    bb = np.array([0, 1, 0, 1])
    return ba, bb


def expected_tally(s: Scenario, ua=None, ub=None, xi=None, pulses: float | None = None) -> SiftedTally:
    """Expected sent/detected/error counts for fixed channel unitaries."""
    if ua is None or ub is None:
        ua, ub = static_unitaries(s)
    xi = effective_overlap(s) if xi is None else xi
    pulses = s.total_pulses if pulses is None else pulses
    ta, tb = s.transmittance()
    eff, dark = s.detector_arrays()
    mus = np.asarray(s.intensities.intensities)
    probs = _cell_probs(s)
    k = len(mus)
    N = pulses * probs
    n = np.zeros_like(N)
    m = np.zeros_like(N)
    ba, bb = _bits()
    for b, name in enumerate("ZX"):
        ja = encoded_jones(ba, b, s.extinction_ratio_db) @ ua.T
        jb = encoded_jones(bb, b, s.extinction_ratio_db) @ ub.T
        for i in range(k):
            for j in range(k):
                if probs[i, j, b] == 0:
                    continue
                pr = bell_probabilities(mus[i] * ta, mus[j] * tb, ja, jb, xi, (eff, dark))
                plus, minus = pr[:, 0], pr[:, 1]
                if name == "Z" and not s.keep_psi_plus_z:
                    plus = np.zeros_like(plus)
                equal = ba == bb
                err = np.where(equal, plus + minus, 0.0) if name == "Z" else \
                    np.where(equal, minus, plus)
                n[i, j, b] = N[i, j, b] * np.mean(plus + minus)
                m[i, j, b] = N[i, j, b] * np.mean(err)
    return SiftedTally(N, n, m, s.accumulation_time * pulses / s.total_pulses, s.shape.clock_rate)


def sample_tally(s: Scenario, budget: int, rng, ua=None, ub=None, chunk: int = 1 << 19) -> SiftedTally:
    """Monte Carlo tally of ``budget`` pulse pairs (unscaled counts).

    Mode overlap is drawn per pair from the delay and detuning jitter.
    """
    if ua is None or ub is None:
        ua, ub = static_unitaries(s)
    its = s.intensities
    k = len(its)
    mus = np.asarray(its.intensities)
    cum = np.cumsum(its.send_probabilities)
    cum[-1] = 1.0
    zp = np.asarray(its.z_probabilities)
    ta, tb = s.transmittance()
    eff, dark = s.detector_arrays()
    basis_idx, bit_idx = np.meshgrid([0, 1], [0, 1], indexing="ij")
    table_a = encoded_jones(bit_idx, basis_idx, s.extinction_ratio_db) @ ua.T  # (basis, bit, 2)
    table_b = encoded_jones(bit_idx, basis_idx, s.extinction_ratio_db) @ ub.T
    sig = s.shape.sigma_t * 1e-12
    w_std = 2 * math.pi * s.detuning_std * 1e3
    cells = k * k * 2
    N = np.zeros(cells)
    n = np.zeros(cells)
    m = np.zeros(cells)
    done = 0
    while done < budget:
        size = min(chunk, budget - done)
        ia = np.searchsorted(cum, rng.random(size), side="right")
        ib = np.searchsorted(cum, rng.random(size), side="right")
        bas_a = (rng.random(size) >= zp[ia]).astype(np.int64)
        bas_b = (rng.random(size) >= zp[ib]).astype(np.int64)
        bit_a = rng.integers(0, 2, size)
        bit_b = rng.integers(0, 2, size)
        same = bas_a == bas_b
        ia, ib, bas_a, bas_b, bit_a, bit_b = (v[same] for v in (ia, ib, bas_a, bas_b, bit_a, bit_b))
        cnt = len(ia)
        tau = rng.normal(0.0, s.timing_jitter, cnt) * 1e-12 if s.timing_jitter > 0 else 0.0
        dw = rng.normal(0.0, w_std, cnt) if w_std > 0 else 0.0
        xi = s.static_overlap * np.exp(-np.square(tau) / (8 * sig * sig) - 0.5 * np.square(dw * sig))
        xi = np.broadcast_to(xi, (cnt,))
        clicks = bsm_batch(mus[ia] * ta, mus[ib] * tb, table_a[bas_a, bit_a], table_b[bas_b, bit_b],
                           xi, rng, (eff, dark))
        outcome = classify_array(clicks)
        kept, err = sift_array(outcome, bas_a, bas_b, bit_a, bit_b, s.keep_psi_plus_z)
        cell = (ia * k + ib) * 2 + bas_a
        N += np.bincount(cell, minlength=cells)
        n += np.bincount(cell[kept], minlength=cells)
        m += np.bincount(cell[err], minlength=cells)
        done += size
    frac = budget / s.total_pulses
    return SiftedTally(N.reshape(k, k, 2), n.reshape(k, k, 2), m.reshape(k, k, 2),
                       s.accumulation_time * frac, s.shape.clock_rate)


def _hom_diagnostics(s: Scenario, xi: float) -> dict:
    mu = min(m for m in s.intensities.intensities if m > 0)
    ta, tb = s.transmittance()
    cc = coincidence_prob(mu * ta, mu * tb, xi, s.detector_arrays())
    base = coincidence_prob(mu * ta, mu * tb, 0.0, s.detector_arrays())
    return {"xi_effective": xi, "visibility": 1 - cc / base if base > 0 else 0.0,
            "probe_intensity": mu}


def _finish(s: Scenario, tally: SiftedTally, raw=None, xi=None, perf=None, caveat="") -> RunResult:
    est, report = evaluate(tally, s.intensities, s.finite_key, s.channel_label)
    xi = effective_overlap(s) if xi is None else xi
    return RunResult(tally, est, report, raw, _hom_diagnostics(s, xi), perf or {}, caveat)


def run_scenario(s: Scenario) -> RunResult:
    """One key-extraction block with loops assumed converged (static residual errors only)."""
    t0 = time.perf_counter()
    if s.mode == "analytic":
        tally = expected_tally(s)
        return _finish(s, tally, perf={"wall_s": time.perf_counter() - t0})
    children = np.random.SeedSequence(s.seed).spawn(s.shards)
    base, extra = divmod(s.pulse_budget, s.shards)
    budgets = [base + (1 if i < extra else 0) for i in range(s.shards)]
    work = lambda args: sample_tally(s, args[0], np.random.default_rng(args[1]))  # noqa: E731
    with ThreadPoolExecutor(max_workers=min(s.threads, s.shards)) as pool:
        parts = list(pool.map(work, zip(budgets, children)))
    raw = SiftedTally.merge(parts)
    raw.accumulation_time = s.accumulation_time * s.pulse_budget / s.total_pulses
    wall = time.perf_counter() - t0
    scaled = raw.scaled(s.total_pulses / s.pulse_budget, s.accumulation_time)
    perf = {"wall_s": wall, "trials": s.pulse_budget, "trials_per_s": s.pulse_budget / wall}
    caveat = (f"counts scaled by {s.total_pulses / s.pulse_budget:.3g} from a "
              f"{s.pulse_budget:.3g}-pair sample")
    return _finish(s, scaled, raw, perf=perf, caveat=caveat)


@dataclass
class LongRunResult:
    blocks: list
    compensation_a: CompensationTrace
    compensation_b: CompensationTrace
    timing: TimingTrace

    @property
    def rates(self) -> np.ndarray:
        return np.array([b.report.key_rate for b in self.blocks])

    @property
    def qber_z(self) -> np.ndarray:
        return np.array([b.report.qber_z for b in self.blocks])

    def spread(self) -> float:
        r = self.rates
        return float(np.std(r) / np.mean(r)) if np.mean(r) > 0 else 0.0

    def rows(self):
        for k, b in enumerate(self.blocks):
            yield (k, (k + 1) * b.report.accumulation_time, b.report.qber_z, b.report.qber_x,
                   b.report.key_length, b.report.key_rate)


def _concat(traces, offset):
    t = np.concatenate([tr.time + o for tr, o in zip(traces, offset)])
    return CompensationTrace(t, *(np.concatenate([getattr(tr, f) for tr in traces])
                                  for f in ("qber", "qber_x", "residual_angle")))


def run_long(s: Scenario, blocks: int, spgd_enabled: bool = True, timing_enabled: bool = True,
             sample_interval: float = 10.0) -> LongRunResult:
    """Consecutive blocks sharing drift and loop state.

    Each block averages expected tallies over channel snapshots taken every
    ``snapshot_interval`` seconds. Relative delay feeding the mode overlap is
    the timing-loop residual of the two arms.
    """
    if blocks < 1:
        raise ValueError("blocks must be >= 1")
    root = np.random.SeedSequence(s.seed)
    ra, rb, rt = (np.random.default_rng(c) for c in root.spawn(3))
    axis = np.asarray(s.misalignment_axis, float)
    axis = tuple(axis / np.linalg.norm(axis) * s.misalignment)
    link_a = PolarizationLink(s.channel_a.polarization_drift_rate, s.extinction_ratio_db, axis)
    link_b = PolarizationLink(s.channel_b.polarization_drift_rate, s.extinction_ratio_db,
                              tuple(-c for c in axis))
    T = s.accumulation_time
    tl = s.timing_loop
    n_t = int(round(blocks * T / tl.measurement_period))
    drift_a = timing_drift_series(blocks * T, tl.measurement_period, s.channel_a.timing_drift, rt)
    drift_b = timing_drift_series(blocks * T, tl.measurement_period, s.channel_b.timing_drift, rt)
    tr_a = timing_feedback(drift_a, tl, rt, timing_enabled)
    tr_b = timing_feedback(drift_b, tl, rt, timing_enabled)
    rel = tr_a.residual - tr_b.residual
    timing = TimingTrace(tr_a.time, drift_a - drift_b, rel)
    per_block = n_t // blocks

    snaps = max(1, int(round(T / s.snapshot_interval)))
    dt_snap = T / snaps
    results, comp_a, comp_b, offsets = [], [], [], []
    for blk in range(blocks):
        d = rel[blk * per_block:(blk + 1) * per_block]
        delay_rms = float(np.sqrt(np.mean(d * d))) if len(d) else 0.0
        xi = effective_overlap(s, delay_rms)
        tally = None
        for k in range(snaps):
            comp_a.append(run_compensation(link_a, dt_snap, s.spgd, ra, spgd_enabled, sample_interval))
            comp_b.append(run_compensation(link_b, dt_snap, s.spgd, rb, spgd_enabled, sample_interval))
            offsets.append(blk * T + k * dt_snap)
            part = expected_tally(s, link_a.total_unitary(), link_b.total_unitary(), xi,
                                  s.total_pulses / snaps)
            tally = part if tally is None else tally + part
        tally.accumulation_time = T
        res = _finish(s, tally, xi=xi)
        res.hom["delay_rms_ps"] = delay_rms
        results.append(res)
    return LongRunResult(results, _concat(comp_a, offsets), _concat(comp_b, offsets), timing)


def rate_vs_distance(s: Scenario, distances_km, finite: bool = True) -> np.ndarray:
    """Key rate (bit/s) against total user-to-user distance, split evenly per side."""
    out = []
    fk = s.finite_key if finite else replace(s.finite_key, finite=False)
    for L in distances_km:
        sc = replace(s, channel_a=replace(s.channel_a, length=L / 2),
                     channel_b=replace(s.channel_b, length=L / 2), finite_key=fk, mode="analytic")
        tally = expected_tally(sc)
        out.append(evaluate(tally, sc.intensities, fk, sc.channel_label)[1].key_rate)
    return np.array(out)


def detector_count_rate(s: Scenario) -> np.ndarray:
    """Mean click rate (counts/s) of each detector over the intensity mix."""
    from .interference import detector_marginals

    ua, ub = static_unitaries(s)
    ta, tb = s.transmittance()
    its = s.intensities
    p = np.asarray(its.send_probabilities)
    z = np.asarray(its.z_probabilities)
    xi = effective_overlap(s)
    total = np.zeros(4)
    for i, mi in enumerate(its.intensities):
        for j, mj in enumerate(its.intensities):
            for ba, pa in ((0, z[i]), (1, 1 - z[i])):
                for bb, pb in ((0, z[j]), (1, 1 - z[j])):
                    w = p[i] * p[j] * pa * pb
                    if w == 0:
                        continue
                    for bit_a in (0, 1):
                        for bit_b in (0, 1):
                            ja = ua @ encoded_jones(bit_a, ba, s.extinction_ratio_db)
                            jb = ub @ encoded_jones(bit_b, bb, s.extinction_ratio_db)
                            total += w / 4 * detector_marginals(mi * ta, mj * tb, ja, jb, xi,
                                                                s.detector_arrays())
    return total * s.shape.clock_rate * 1e9


DECOY_BOUNDS = [(0.05, 0.8), (0.005, 0.3), (0.02, 0.6), (0.05, 0.9), (0.02, 0.8), (0.005, 0.5)]


def optimize_decoys(s: Scenario, start, sweeps: int = 4, bounds=DECOY_BOUNDS):
    """Maximise the analytic key rate over ``(s, x, y, p_s, p_x, p_y)``.

    Returns ``(settings, rate)``. Invalid settings (``x >= y`` or
    probabilities summing to one or more) score zero.
    """
    def rate(p):
        sig, x, y, ps, px, py = p
        if x >= y or ps + px + py >= 0.999:
            return 0.0
        sc = replace(s, intensities=four_intensity_set(*p), mode="analytic")
        return evaluate(expected_tally(sc), sc.intensities, sc.finite_key)[1].key_rate

    p, best = optimize_intensities(rate, start, bounds, sweeps)
    return tuple(float(v) for v in p), float(best)
