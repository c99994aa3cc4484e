"""INI scenario files: schema, validation, overrides and builders.

Every physical quantity carries its unit in the key name. All sections are
required; keys inside a section fall back to the calibrated defaults.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .comb import CombPlan, LockLoopConfig, SeedJitterModel
from .control import SpgdConfig, TimingLoopConfig
from .engine import Scenario
from .interference import HomConfig
from .netplan import NetworkSpec
from .photonics import FiberChannel, PulseShape, default_detectors
from .profiles import DECOY_1000S, DECOY_10000S
from .protocol import FiniteKeyParams, four_intensity_set

__all__ = ["ConfigError", "Config", "SCHEMA", "load_config", "bundled_config_path",
           "build_scenario", "build_lock", "build_network", "build_hom", "decoy_settings",
           "with_decoy", "PRESETS"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _bool(v: str) -> bool:
    t = v.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.replace(",", " ").split())


def _int(v: str) -> int:
    f = float(v)
    if f != int(f):
        raise ValueError(f"not an integer: {v!r}")
    return int(f)


s0, x0, y0, ps0, px0, py0 = DECOY_1000S

# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "mode": (str, "analytic"),
        "accumulation_s": (float, 1000.0),
        "blocks": (_int, 1),
        "pulse_budget": (_int, 10 ** 7),
        "shards": (_int, 1),
        "seed": (_int, 0),
        "distances_km": (_floats, tuple(float(d) for d in range(0, 401, 20))),
        "snapshot_interval_s": (float, 100.0),
        "duration_s": (float, 3 * 3600.0),
    },
    "comb": {
        "center_thz": (float, 192.1175),
        "repetition_ghz": (float, 49.0),
        "tooth_min": (_int, -100),
        "tooth_max": (_int, 100),
        "tooth": (_int, 0),
        "seed_jitter_khz": (float, 21.7),
        "lock_kappa_hz_per_mk": (float, 1000.0),
        "lock_kp": (float, 1.0),
        "lock_ki": (float, 0.2),
        "lock_ambient_walk_mk_per_sqrt_s": (float, 0.4),
        "lock_noise_hz": (float, 154.5),
        "lock_step_s": (float, 0.1),
        "lock_thermal_tau_s": (float, 1.0),
        "lock_record_s": (float, 1.0),
        "lock_initial_offset_hz": (float, 0.0),
    },
    "source": {
        "pulse_fwhm_ps": (float, 95.0),
        "clock_ghz": (float, 2.5),
        "extinction_ratio_db": (float, 30.0),
        "static_overlap": (float, 0.985),
        "timing_jitter_ps": (float, 2.0),
        "misalignment_rad": (float, 0.14),
        "hom_mean_photons": (float, 0.01),
        "hom_delay_span_ps": (float, 600.0),
        "hom_delay_step_ps": (float, 10.0),
    },
    "channel": {
        "length_a_km": (float, 100.0),
        "length_b_km": (float, 100.0),
        "attenuation_db_per_km": (float, 0.2),
        "ull_attenuation_db_per_km": (float, 0.16),
        "extra_loss_db": (float, 0.0),
        "polarization_drift_rad2_per_s": (float, 1e-4),
        "timing_drift_ps_per_sqrt_s": (float, 5.0),
    },
    "detectors": {
        "efficiency": (float, 0.8),
        "dark_prob": (float, 1e-7),
        "jitter_ps": (float, 30.0),
    },
    "decoy": {
        "preset": (str, "auto"),
        "signal": (float, s0),
        "weak": (float, x0),
        "strong": (float, y0),
        "p_signal": (float, ps0),
        "p_weak": (float, px0),
        "p_strong": (float, py0),
        "optimize": (_bool, False),
    },
    "finite_key": {
        "epsilon_total": (float, 1e-10),
        "f_ec": (float, 1.16),
        "n_bounds": (_int, 10),
        "finite": (_bool, True),
        "keep_psi_plus_z": (_bool, True),
    },
    "control": {
        "spgd_enabled": (_bool, True),
        "spgd_gain": (float, 5.0),
        "spgd_perturbation_rad": (float, 0.05),
        "spgd_period_s": (float, 0.1),
        "spgd_reference_counts": (float, 1e5),
        "spgd_objective": (str, "rejected_zx"),
        "timing_enabled": (_bool, True),
        "timing_period_s": (float, 0.1),
        "timing_smoothing": (float, 0.5),
        "timing_resolution_ps": (float, 0.5),
        "timing_noise_ps": (float, 1.5),
    },
    "network": {
        "users": (_int, 200),
        "channels": (_int, 200),
        "tdm_slots": (_int, 100),
        "raw_rate_bps": (float, 0.0),
    },
}


@dataclass
class Config:
    values: dict
    source: str = "<memory>"

    def __getitem__(self, key):
        return self.values[key]

    def get(self, dotted: str):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]


def bundled_config_path(name: str = "paper-200km") -> Path:
    return Path(str(resources.files("mdimesh") / "data" / f"{name}.ini"))


def _parse_value(sec, key, raw):
    parser = SCHEMA[sec][key][0]
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{sec}] {key}: {exc}") from None


def load_config(path=None, overrides=(), text: str | None = None) -> Config:
    """Parse an INI file (or ``text``) and apply ``section.key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    source = "<text>" if text is not None else str(path)
    try:
        if text is not None:
            cp.read_string(text, source)
        else:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh, source)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {source}: {exc}") from None

    unknown = [s for s in cp.sections() if s not in SCHEMA]
    if unknown:
        raise ConfigError(f"unknown section [{unknown[0]}]")
    for sec in SCHEMA:
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]")
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {k: d for k, (_, d) in keys.items()}
        for key, raw in cp.items(sec):
            if key not in keys:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
            values[sec][key] = _parse_value(sec, key, raw)
    explicit = {k for k in _DECOY_KEYS if cp.has_option("decoy", k)}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        sec, key = lhs.strip().split(".", 1)
        if sec not in SCHEMA:
            raise ConfigError(f"override names unknown section [{sec}]")
        if key not in SCHEMA[sec]:
            raise ConfigError(f"override names unknown key [{sec}] {key!r}")
        values[sec][key] = _parse_value(sec, key, raw.strip())
        if sec == "decoy" and key in _DECOY_KEYS:
            explicit.add(key)
    preset = values["decoy"]["preset"]
    if preset not in PRESETS:
        raise ConfigError(f"[decoy] preset must be one of {sorted(PRESETS)}, got {preset!r}")
    if explicit and preset != "manual":
        raise ConfigError(f"[decoy] {sorted(explicit)[0]} is set but preset is {preset!r}; "
                          "use preset = manual")
    cfg = Config(values, source)
    build_scenario(cfg)  # cross-field validation
    return cfg


_DECOY_KEYS = ("signal", "weak", "strong", "p_signal", "p_weak", "p_strong")
PRESETS = {"auto": None, "1000s": DECOY_1000S, "10000s": DECOY_10000S, "manual": None}


def decoy_settings(cfg: Config) -> tuple[float, ...]:
    """Decoy intensities and probabilities ``(s, x, y, p_s, p_x, p_y)`` in effect."""
    dc = cfg["decoy"]
    if dc["preset"] == "manual":
        return tuple(dc[k] for k in _DECOY_KEYS)
    if dc["preset"] == "auto":
        return DECOY_10000S if cfg["run"]["accumulation_s"] >= 1e4 else DECOY_1000S
    return PRESETS[dc["preset"]]


def _wrap(fn, what):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid {what}: {exc}") from None


def build_scenario(cfg: Config, threads: int = 1) -> Scenario:
    r, c, so, ch, de, fk, co = (cfg[k] for k in
                                ("run", "comb", "source", "channel", "detectors",
                                 "finite_key", "control"))

    def make():
        fiber = dict(attenuation=ch["attenuation_db_per_km"],
                     polarization_drift_rate=ch["polarization_drift_rad2_per_s"],
                     timing_drift=ch["timing_drift_ps_per_sqrt_s"])
        jitter = SeedJitterModel(c["seed_jitter_khz"])
        return Scenario(
            intensities=four_intensity_set(*decoy_settings(cfg)),
            shape=PulseShape(so["pulse_fwhm_ps"], so["clock_ghz"]),
            channel_a=FiberChannel(ch["length_a_km"], **fiber),
            channel_b=FiberChannel(ch["length_b_km"], **fiber),
            detectors=default_detectors(de["efficiency"], de["dark_prob"], de["jitter_ps"]),
            extinction_ratio_db=so["extinction_ratio_db"],
            misalignment=so["misalignment_rad"],
            static_overlap=so["static_overlap"],
            timing_jitter=so["timing_jitter_ps"],
            jitter_a=jitter,
            jitter_b=jitter,
            comb=CombPlan(c["center_thz"], c["repetition_ghz"], (c["tooth_min"], c["tooth_max"])),
            tooth=c["tooth"],
            spgd=SpgdConfig(co["spgd_gain"], co["spgd_perturbation_rad"], co["spgd_period_s"],
                            co["spgd_objective"], co["spgd_reference_counts"]),
            timing_loop=TimingLoopConfig(co["timing_period_s"], co["timing_smoothing"],
                                         co["timing_resolution_ps"], co["timing_noise_ps"]),
            accumulation_time=r["accumulation_s"],
            mode=r["mode"],
            pulse_budget=r["pulse_budget"],
            shards=r["shards"],
            threads=threads,
            finite_key=FiniteKeyParams(fk["epsilon_total"], fk["f_ec"], n_bounds=fk["n_bounds"],
                                       finite=fk["finite"]),
            keep_psi_plus_z=fk["keep_psi_plus_z"],
            extra_loss_db=ch["extra_loss_db"],
            snapshot_interval=r["snapshot_interval_s"],
            seed=r["seed"],
        )

    sc = _wrap(make, "scenario")
    if not sc.comb.tooth_range[0] <= sc.tooth <= sc.comb.tooth_range[1]:
        raise ConfigError(f"[comb] tooth {sc.tooth} outside the tooth range")
    if r["blocks"] < 1:
        raise ConfigError("[run] blocks must be >= 1")
    return sc


def build_lock(cfg: Config) -> LockLoopConfig:
    c = cfg["comb"]
    return _wrap(lambda: LockLoopConfig(
        thermal_coefficient=c["lock_kappa_hz_per_mk"], kp=c["lock_kp"], ki=c["lock_ki"],
        ambient_walk=c["lock_ambient_walk_mk_per_sqrt_s"], measurement_noise=c["lock_noise_hz"],
        step_interval=c["lock_step_s"], thermal_time_constant=c["lock_thermal_tau_s"],
        record_interval=c["lock_record_s"], rf_reference=c["repetition_ghz"],
        initial_offset=c["lock_initial_offset_hz"]), "[comb] lock settings")


def build_network(cfg: Config) -> NetworkSpec:
    n = cfg["network"]
    return _wrap(lambda: NetworkSpec(n["users"], n["channels"], n["tdm_slots"]), "[network]")


def build_hom(cfg: Config) -> HomConfig:
    so, de, c = cfg["source"], cfg["detectors"], cfg["comb"]
    sc = build_scenario(cfg)
    return _wrap(lambda: HomConfig(
        shape=sc.shape, mean_photons=so["hom_mean_photons"], timing_jitter=so["timing_jitter_ps"],
        detuning_jitter=sc.detuning_std, static_overlap=so["static_overlap"],
        extinction_ratio_db=so["extinction_ratio_db"], efficiency=de["efficiency"],
        dark_prob=de["dark_prob"]), "[source] HOM settings")


def with_decoy(cfg: Config, settings) -> Config:
    vals = {k: dict(v) for k, v in cfg.values.items()}
    for key, v in zip(_DECOY_KEYS, settings):
        vals["decoy"][key] = float(v)
    vals["decoy"]["preset"] = "manual"
    return replace(cfg, values=vals)
