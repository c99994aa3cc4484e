"""Sifting, tallies and finite-size key extraction for four-intensity MDI-QKD.

Tally cells are indexed ``(intensity_a, intensity_b, basis)`` with basis 0 = Z
and 1 = X. Counts may be integers (sampled runs) or expected values (analytic
runs); the estimator treats both the same way.

Single-photon bounds use the standard two-decoy construction on the
"gain times exp(mu_a + mu_b)" quantities ``S_ab``::

    Y11 >= (y^3 M_x - x^3 M_y) / (x^2 y^2 (y - x)),
    M_z  = S_zz - S_z0 - S_0z + S_00,

which is exact for yields of the form Y_nm >= 0 because every higher
photon-number term enters with a non-positive weight.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .interference import BsmOutcome
from .photonics import IntensitySet

__all__ = [
    "Z", "X",
    "SiftEvent",
    "SiftedTally",
    "FiniteKeyParams",
    "DecoyRoles",
    "DecoyEstimate",
    "KeyReport",
    "ChernoffError",
    "sift",
    "sift_array",
    "binary_entropy",
    "chernoff_bounds",
    "random_sampling_deviation",
    "decoy_roles",
    "four_intensity_set",
    "estimate_single_photon",
    "key_length",
    "evaluate",
    "asymptotic_rate",
    "optimize_intensities",
    "REPORT_COLUMNS",
]

Z, X = 0, 1
REPORT_COLUMNS = ("channel", "qber_z", "qber_x", "key_length_bits", "key_rate_bps", "accumulation_s")


class ChernoffError(ArithmeticError):
    """Root finding for a concentration bound failed."""


# ---------------------------------------------------------------- sifting

@dataclass(frozen=True)
class SiftEvent:
    kept: bool
    basis: str | None
    error: bool


def sift_array(outcome, basis_a, basis_b, bit_a, bit_b, keep_psi_plus_z: bool = True):
    """Vectorised sifting. Returns ``(kept, error)`` boolean arrays.

    Z basis: both Bell outcomes mean anti-correlated bits. X basis: Psi-
    means anti-correlated, Psi+ correlated.
    """
    outcome = np.asarray(outcome)
    basis_a = np.asarray(basis_a)
    basis_b = np.asarray(basis_b)
    same = basis_a == basis_b
    kept = (outcome != BsmOutcome.NONE) & same
    if not keep_psi_plus_z:
        kept &= ~((basis_a == Z) & (outcome == BsmOutcome.PSI_PLUS))
    equal = np.asarray(bit_a) == np.asarray(bit_b)
    flip = (basis_a == Z) | (outcome == BsmOutcome.PSI_MINUS)
    error = kept & np.where(flip, equal, ~equal)
    return kept, error


def sift(outcome: BsmOutcome, basis_a: str, basis_b: str, bit_a: int, bit_b: int,
         keep_psi_plus_z: bool = True) -> SiftEvent:
    ba = "ZX".index(basis_a)
    bb = "ZX".index(basis_b)
    kept, error = sift_array(int(outcome), ba, bb, bit_a, bit_b, keep_psi_plus_z)
    kept = bool(kept)
    return SiftEvent(kept, basis_a if kept else None, bool(error))


# ---------------------------------------------------------------- tallies

@dataclass
class SiftedTally:
    """Sent pairs ``N``, successful measurements ``n`` and errors ``m`` per cell."""

    N: np.ndarray
    n: np.ndarray
    m: np.ndarray
    accumulation_time: float = 1000.0  # s
    clock_rate: float = 2.5  # GHz

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=float)
        self.n = np.asarray(self.n, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if not (self.N.shape == self.n.shape == self.m.shape) or self.N.ndim != 3 \
                or self.N.shape[2] != 2:
            raise ValueError("tally arrays must share a (k, k, 2) shape")
        if np.any(self.m < 0) or np.any(self.m > self.n * (1 + 1e-12)) \
                or np.any(self.n > self.N * (1 + 1e-12)):
            raise ValueError("tally must satisfy 0 <= m <= n <= N")
        if self.accumulation_time <= 0:
            raise ValueError("accumulation_time must be positive")

    @classmethod
    def empty(cls, k: int = 4, accumulation_time: float = 1000.0, clock_rate: float = 2.5):
        z = np.zeros((k, k, 2))
        return cls(z, z.copy(), z.copy(), accumulation_time, clock_rate)

    def __add__(self, other: "SiftedTally") -> "SiftedTally":
        if self.N.shape != other.N.shape:
            raise ValueError("cannot merge tallies of different shape")
        return SiftedTally(self.N + other.N, self.n + other.n, self.m + other.m,
                           self.accumulation_time, self.clock_rate)

    @staticmethod
    def merge(tallies) -> "SiftedTally":
        tallies = list(tallies)
        out = tallies[0]
        for t in tallies[1:]:
            out = out + t
        return out

    def scaled(self, factor: float, accumulation_time: float | None = None) -> "SiftedTally":
        return SiftedTally(self.N * factor, self.n * factor, self.m * factor,
                           accumulation_time or self.accumulation_time * factor, self.clock_rate)

    @property
    def total_pulses(self) -> float:
        return self.accumulation_time * self.clock_rate * 1e9

    def gain(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.N > 0, self.n / np.where(self.N > 0, self.N, 1), 0.0)

    def error_rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n > 0, self.m / np.where(self.n > 0, self.n, 1), 0.0)

    def qber(self, basis: int, cells=None) -> float:
        """Pooled error rate over the given ``(i, j)`` cells of one basis."""
        if cells is None:
            cells = [(i, j) for i in range(self.N.shape[0]) for j in range(self.N.shape[1])]
        n = sum(self.n[i, j, basis] for i, j in cells)
        m = sum(self.m[i, j, basis] for i, j in cells)
        return float(m / n) if n > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "accumulation_s": self.accumulation_time,
            "clock_rate_ghz": self.clock_rate,
            "sent": self.N.tolist(),
            "detected": self.n.tolist(),
            "errors": self.m.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SiftedTally":
        return cls(np.array(d["sent"]), np.array(d["detected"]), np.array(d["errors"]),
                   d["accumulation_s"], d["clock_rate_ghz"])


# ---------------------------------------------------------------- statistics

def binary_entropy(x) -> float | np.ndarray:
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > 1) or np.any(np.isnan(xa)):
        raise ValueError("binary entropy needs x in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -xa * np.log2(xa) - (1 - xa) * np.log2(1 - xa)
    h = np.where((xa == 0) | (xa == 1), 0.0, h)
    return float(h) if h.ndim == 0 else h


def _kl_excess(k, e):
    # Poisson tail exponent: E - k + k ln(k / E)
    return e - k + (k * (math.log(k) - math.log(e)) if k > 0 else 0.0)


def chernoff_bounds(k: float, epsilon: float) -> tuple[float, float]:
    """Two-sided confidence interval for the mean behind an observed count.

    Each side solves ``E - k + k ln(k/E) = ln(2/epsilon)``, so each tail
    carries at most ``epsilon / 2``.
    """
    if k < 0:
        raise ValueError("count must be non-negative")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    t = math.log(2.0 / epsilon)
    if k == 0:
        return 0.0, t
    try:
        hi_bracket = k + 10 * t + 10 * math.sqrt(k * t) + 10
        upper = optimize.brentq(lambda e: _kl_excess(k, e) - t, k, hi_bracket, xtol=1e-12 * k + 1e-12)
        if _kl_excess(k, 1e-300) < t:
            lower = 0.0
        else:
            lower = optimize.brentq(lambda e: _kl_excess(k, e) - t, 1e-300, k, xtol=1e-12 * k + 1e-300)
    except (ValueError, RuntimeError) as exc:
        raise ChernoffError(f"bound for k={k} did not converge") from exc
    return lower, upper


def random_sampling_deviation(n: float, k: float, rate: float, epsilon: float) -> float:
    """Upper deviation of the error rate of ``n`` samples given ``rate`` observed on ``k``."""
    if n <= 0 or k <= 0 or not 0 < rate < 0.5:
        return 0.0
    v = rate * (1 - rate)
    arg = (n + k) / (2 * math.pi * n * k * v * epsilon ** 2)
    if arg <= 1:
        return 0.0
    return math.sqrt((n + k) * v / (n * k) * math.log(arg) / math.log(2))


# ---------------------------------------------------------------- parameters

@dataclass(frozen=True)
class FiniteKeyParams:
    """Failure budget and error-correction cost.

    Correctness and privacy amplification each take a fixed share of the
    budget; the rest is split equally over ``n_bounds`` concentration bounds.
    """

    epsilon_total: float = 1e-10
    f_ec: float = 1.16
    cor_share: float = 0.1
    pa_share: float = 0.1
    n_bounds: int = 10
    finite: bool = True
    scan_grid: int = 5

    def __post_init__(self):
        if not 0 < self.epsilon_total < 1:
            raise ValueError("epsilon_total must lie in (0, 1)")
        if self.f_ec < 1:
            raise ValueError("f_ec must be >= 1")
        if self.cor_share <= 0 or self.pa_share <= 0 or self.cor_share + self.pa_share >= 1:
            raise ValueError("cor_share and pa_share must be positive and sum below 1")
        if self.n_bounds < 1 or self.scan_grid < 2:
            raise ValueError("n_bounds >= 1 and scan_grid >= 2 required")

    @property
    def epsilon_cor(self) -> float:
        return self.cor_share * self.epsilon_total

    @property
    def epsilon_pa(self) -> float:
        return self.pa_share * self.epsilon_total

    @property
    def epsilon_bound(self) -> float:
        return (1 - self.cor_share - self.pa_share) * self.epsilon_total / self.n_bounds

    def partition(self) -> dict:
        return {"correctness": self.epsilon_cor, "privacy_amplification": self.epsilon_pa,
                "per_bound": self.epsilon_bound, "bounds": self.n_bounds}


@dataclass(frozen=True)
class DecoyRoles:
    signal: int
    weak: int
    strong: int
    vacuum: int


def decoy_roles(intensities: IntensitySet) -> DecoyRoles:
    """Identify signal, weak decoy, strong decoy and vacuum by their settings.

    The signal is the non-zero intensity with the largest Z probability; the
    two decoys are the remaining non-zero intensities that are ever sent in X.
    """
    mus = intensities.intensities
    vac = intensities.vacuum_index
    nonzero = [i for i in range(len(mus)) if i != vac]
    signal = max(nonzero, key=lambda i: (intensities.z_probabilities[i], mus[i]))
    decoys = sorted((i for i in nonzero if i != signal and intensities.z_probabilities[i] < 1),
                    key=lambda i: mus[i])
    if len(decoys) != 2 or intensities.z_probabilities[signal] == 0:
        raise ValueError("need one Z signal intensity and two X decoy intensities")
    return DecoyRoles(signal, decoys[0], decoys[1], vac)


def four_intensity_set(s, x, y, ps, px, py) -> IntensitySet:
    """Signal ``s`` in Z only; decoys ``x < y`` and vacuum in X only."""
    return IntensitySet(
        intensities=(float(s), float(y), float(x), 0.0),
        send_probabilities=(float(ps), float(py), float(px), float(1 - ps - px - py)),
        z_probabilities=(1.0, 0.0, 0.0, 0.0),
        names=("signal", "decoy_strong", "decoy_weak", "vacuum"),
    )


@dataclass(frozen=True)
class DecoyEstimate:
    """Single-photon bounds.

    ``y11_lower`` and ``e11_upper`` are each valid on their own. The key
    length uses ``n11_lower`` and ``phase_error_upper``, the worst pair found
    by scanning the statistical fluctuations of the shared counts jointly.
    """

    y11_lower: float
    e11_upper: float
    n11_lower: float
    phase_error_upper: float = 0.5
    y11_joint: float = 0.0
    e11_joint: float = 0.5
    flag: str = ""

    def __post_init__(self):
        if self.y11_lower < 0 or self.n11_lower < 0:
            raise ValueError("yield bounds must be non-negative")
        if not 0 <= self.e11_upper <= 0.5 or not 0 <= self.phase_error_upper <= 0.5:
            raise ValueError("error bounds must lie in [0, 0.5]")

    @property
    def feasible(self) -> bool:
        return not self.flag


@dataclass
class KeyReport:
    key_length: float
    key_rate: float
    qber_z: float
    qber_x: float
    accumulation_time: float
    channel: str = "CH0"

    def __post_init__(self):
        if self.key_length < 0:
            raise ValueError("key_length must be non-negative")

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "qber_z": self.qber_z,
            "qber_x": self.qber_x,
            "key_length_bits": self.key_length,
            "key_rate_bps": self.key_rate,
            "accumulation_s": self.accumulation_time,
        }

    def csv_row(self) -> list:
        d = self.to_dict()
        return [d[c] for c in REPORT_COLUMNS]

    @classmethod
    def from_dict(cls, d: dict) -> "KeyReport":
        return cls(d["key_length_bits"], d["key_rate_bps"], d["qber_z"], d["qber_x"],
                   d["accumulation_s"], d["channel"])

    @staticmethod
    def to_csv(reports) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.csv_row())
        return buf.getvalue()


# ---------------------------------------------------------------- estimation

@dataclass
class _Cell:
    """``S = exp(mu_a + mu_b) * gain`` with bounds for total, error and correct counts."""

    sent: float
    total: tuple[float, float]
    err: tuple[float, float]
    correct_lo: float


def _cell(tally, mus, i, j, eb, finite) -> _Cell:
    sent = tally.N[i, j, X]
    if sent <= 0:
        raise ValueError(f"tally has no X-basis pairs in cell ({i}, {j})")
    n, m = tally.n[i, j, X], tally.m[i, j, X]
    scale = math.exp(mus[i] + mus[j]) / sent
    if finite:
        lo, up = chernoff_bounds(n, eb)
        elo, eup = chernoff_bounds(m, eb)
        clo = chernoff_bounds(n - m, eb)[0]
    else:
        lo = up = n
        elo = eup = m
        clo = n - m
    return _Cell(sent, (lo * scale, up * scale), (elo * scale, eup * scale), clo * scale)


def _y11(x, y, mx, my):
    return (y ** 3 * mx - x ** 3 * my) / (x * x * y * y * (y - x))


def _z_stats(tally, roles):
    s = roles.signal
    return tally.N[s, s, Z], tally.n[s, s, Z], tally.m[s, s, Z]


def _length(n11, eph, n_z, e_z, params: FiniteKeyParams) -> float:
    ell = n11 * (1 - binary_entropy(min(max(eph, 0.0), 0.5))) - params.f_ec * n_z * binary_entropy(e_z)
    if params.finite:
        ell -= math.log2(2 / params.epsilon_cor) + 2 * math.log2(1 / (2 * params.epsilon_pa))
    return ell


def _single_photon_terms(y11, e11, tally, mus, roles, params):
    """(n11 in Z, phase error bound) for a given yield and X-basis error."""
    s, x = roles.signal, roles.weak
    n_ss = tally.N[s, s, Z]
    n11z = n_ss * mus[s] ** 2 * math.exp(-2 * mus[s]) * y11
    if not params.finite:
        return max(n11z, 0.0), min(e11, 0.5)
    eb = params.epsilon_bound
    n11z = max(n11z - math.sqrt(2 * n11z * math.log(1 / eb)), 0.0)
    n11x = tally.N[x, x, X] * mus[x] ** 2 * math.exp(-2 * mus[x]) * y11
    eph = e11 + random_sampling_deviation(n11z, n11x, e11, eb)
    return n11z, min(eph, 0.5)


def estimate_single_photon(tally: SiftedTally, intensities: IntensitySet,
                           params: FiniteKeyParams = FiniteKeyParams(), joint: bool = True) -> DecoyEstimate:
    """Lower-bound the two-single-photon yield and upper-bound its phase error.

    With ``joint`` the fluctuations of the X-basis counts shared by the yield
    and error bounds (``S_x0``, ``S_0x`` and the erroneous ``S_xx``) are
    scanned together, and the pair that minimises the key length is kept.
    """
    roles = decoy_roles(intensities)
    mus = intensities.intensities
    x, y = mus[roles.weak], mus[roles.strong]
    w, v, o = roles.weak, roles.strong, roles.vacuum
    eb = params.epsilon_bound
    fin = params.finite
    try:
        c = {key: _cell(tally, mus, *key, eb, fin)
             for key in [(w, w), (w, o), (o, w), (o, o), (v, v), (v, o), (o, v)]}
    except ChernoffError:
        return DecoyEstimate(0.0, 0.5, 0.0, flag="numeric_failure")

    my_up = c[v, v].total[1] - c[v, o].total[0] - c[o, v].total[0] + c[o, o].total[1]
    mx_lo = c[w, w].total[0] - c[w, o].total[1] - c[o, w].total[1] + c[o, o].total[0]
    y11 = max(_y11(x, y, mx_lo, my_up), 0.0)
    if y11 <= 0:
        return DecoyEstimate(0.0, 0.5, 0.0, flag="no_single_photon_yield")
    me_up = c[w, w].err[1] - (c[w, o].total[0] + c[o, w].total[0]) / 2 + c[o, o].total[1] / 2
    e11 = min(max(me_up, 0.0) / (x * x * y11), 0.5)

    n_sent, n_z, m_z = _z_stats(tally, roles)
    e_z = m_z / n_z if n_z > 0 else 0.0

    if not joint or not fin:
        n11, eph = _single_photon_terms(y11, e11, tally, mus, roles, params)
        return DecoyEstimate(y11, e11, n11, eph, y11, e11)

    box = np.array([c[w, o].total, c[o, w].total, c[w, w].err])

    def point(u):
        a, b, e = box[:, 0] + np.clip(u, 0, 1) * (box[:, 1] - box[:, 0])
        mx = c[w, w].correct_lo + e - a - b + c[o, o].total[0]
        yj = _y11(x, y, mx, my_up)
        if yj <= 0:
            return -math.inf, 0.0, 0.5, 0.0, 0.5
        me = e - (a + b) / 2 + c[o, o].total[1] / 2
        ej = min(max(me, 0.0) / (x * x * yj), 0.5)
        n11, eph = _single_photon_terms(yj, ej, tally, mus, roles, params)
        return _length(n11, eph, n_z, e_z, params), yj, ej, n11, eph

    # smallest possible yield sits at the (a_up, b_up, e_lo) corner
    if point(np.array([1.0, 1.0, 0.0]))[0] == -math.inf:
        return DecoyEstimate(y11, e11, 0.0, 0.5, 0.0, 0.5, flag="no_single_photon_yield")
    grid = np.linspace(0, 1, params.scan_grid)
    best_u, best = None, math.inf
    for u in np.array(np.meshgrid(grid, grid, grid, indexing="ij")).reshape(3, -1).T:
        val = point(u)[0]
        if val < best:
            best, best_u = val, u
    res = optimize.minimize(lambda u: point(u)[0], best_u, method="Powell",
                            bounds=[(0, 1)] * 3, options={"xtol": 1e-4, "ftol": 1e-9})
    u = res.x if res.fun < best else best_u
    _, yj, ej, n11, eph = point(u)
    return DecoyEstimate(y11, e11, n11, eph, yj, ej)


def key_length(estimate: DecoyEstimate, tally: SiftedTally, params: FiniteKeyParams = FiniteKeyParams(),
               intensities: IntensitySet | None = None, channel: str = "CH0") -> KeyReport:
    """Secure key length of one block, clamped at zero."""
    roles = decoy_roles(intensities) if intensities is not None else DecoyRoles(0, 2, 1, 3)
    _, n_z, m_z = _z_stats(tally, roles)
    e_z = float(m_z / n_z) if n_z > 0 else 0.0
    # X error over equal-intensity decoy pairs
    e_x = tally.qber(X, [(i, i) for i in range(tally.N.shape[0]) if i != roles.vacuum])
    if not estimate.feasible or estimate.phase_error_upper >= 0.5 or n_z <= 0:
        ell = 0.0
    else:
        ell = max(_length(estimate.n11_lower, estimate.phase_error_upper, n_z, e_z, params), 0.0)
    return KeyReport(ell, ell / tally.accumulation_time, e_z, e_x, tally.accumulation_time, channel)


def evaluate(tally: SiftedTally, intensities: IntensitySet, params: FiniteKeyParams = FiniteKeyParams(),
             channel: str = "CH0") -> tuple[DecoyEstimate, KeyReport]:
    est = estimate_single_photon(tally, intensities, params)
    return est, key_length(est, tally, params, intensities, channel)


def asymptotic_rate(tally: SiftedTally, intensities: IntensitySet, params: FiniteKeyParams = FiniteKeyParams()) -> float:
    """Key rate (bit/s) of an expected tally with every finite-size term dropped."""
    asym = FiniteKeyParams(params.epsilon_total, params.f_ec, params.cor_share, params.pa_share,
                           params.n_bounds, finite=False)
    return evaluate(tally, intensities, asym)[1].key_rate


# ---------------------------------------------------------------- optimisation

def optimize_intensities(rate_fn, start, bounds, sweeps: int = 4, tol: float = 1e-3):
    """Coordinate descent maximising ``rate_fn(params)`` one coordinate at a time.

    ``rate_fn`` returns 0 for invalid settings. Each sweep runs a bounded
    scalar search per coordinate; stops when a sweep improves by less than
    ``tol`` relative.
    """
    p = np.array(start, dtype=float)
    best = rate_fn(p)
    for _ in range(sweeps):
        before = best
        for k, (lo, hi) in enumerate(bounds):
            def neg(v, k=k):
                q = p.copy()
                q[k] = v
                return -rate_fn(q)

            r = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-4 * (hi - lo)})
            if -r.fun > best:
                best = -r.fun
                p[k] = r.x
        if best - before <= tol * max(best, 1e-300):
            break
    return p, best
