"""Command line for mdimesh: one subcommand per simulation output.

Exit codes: 0 success, 2 config error, 3 infeasible scenario, 4 numeric failure.
Files written under ``--out`` hold no wall-clock data, so a fixed ``--seed``
gives byte-identical outputs; timings go to stderr.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .comb import LockInstabilityError, itu_label, simulate_lock, tooth_frequency
from .config import (ConfigError, build_hom, build_lock, build_network, build_scenario,
                     bundled_config_path, decoy_settings, load_config, with_decoy)
from .control import PolarizationLink, run_compensation, timing_drift_series, timing_feedback
from .engine import optimize_decoys, rate_vs_distance, run_long, run_scenario
from .interference import QuadratureError, hom_scan
from .io import OUT_ENV, default_out_dir, write_csv, write_json
from .netplan import InfeasibleError, allocate, network_report
from .protocol import REPORT_COLUMNS, ChernoffError

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_CONFIG", "EXIT_INFEASIBLE", "EXIT_NUMERIC"]

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4

TALLY_COLUMNS = ("intensity_a", "intensity_b", "basis", "sent", "detected", "errors")
BLOCK_COLUMNS = ("block", "end_time_s", "qber_z", "qber_x", "key_length_bits", "key_rate_bps")
COMPENSATION_COLUMNS = ("time_s", "qber_z", "qber_x", "residual_angle_rad")
TIMING_COLUMNS = ("time_s", "drift_ps", "residual_ps")
HOM_COLUMNS = ("delay_ps", "coincidence_prob", "visibility")
TEETH_COLUMNS = ("tooth", "frequency_thz", "itu_label", "visibility")
DISTANCE_COLUMNS = ("distance_km", "rate_standard_bps", "rate_ull_bps")
LOCK_COLUMNS = ("time_s", "delta_omega_r_hz", "temperature_offset_mk")
ALLOCATION_COLUMNS = ("user_i", "user_j", "channel", "slot", "duty_cycle")


class Infeasible(Exception):
    """Scenario ran but cannot yield what was asked for."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _config(args):
    path = args.config or bundled_config_path()
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    return load_config(path, overrides)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args, cfg, out: Path) -> None:
    s = build_scenario(cfg, args.threads)
    blocks = cfg["run"]["blocks"]
    if cfg["decoy"]["optimize"]:
        t0 = time.perf_counter()
        settings, best = optimize_decoys(s, decoy_settings(cfg))
        cfg = with_decoy(cfg, settings)
        s = build_scenario(cfg, args.threads)
        _log(f"decoy re-optimised in {time.perf_counter() - t0:.1f} s: "
             f"{', '.join(f'{v:.4g}' for v in settings)} -> {best:.4g} bps")
    if args.dry_run:
        return
    settings = dict(zip(("signal", "weak", "strong", "p_signal", "p_weak", "p_strong"),
                        decoy_settings(cfg)))
    co = cfg["control"]
    if blocks == 1:
        res = run_scenario(s)
        if res.perf:
            _log(" ".join(f"{k}={v:.4g}" for k, v in res.perf.items()))
        doc = res.to_dict()
        doc.pop("perf")
        doc["decoy"] = settings
        write_json(out / "result.json", doc.pop("schema"), doc)
        write_csv(out / "key_report.csv", REPORT_COLUMNS, [res.report.csv_row()])
        write_csv(out / "tally.csv", TALLY_COLUMNS, _tally_rows(res.tally))
        results = [res]
    else:
        t0 = time.perf_counter()
        lr = run_long(s, blocks, co["spgd_enabled"], co["timing_enabled"])
        _log(f"wall_s={time.perf_counter() - t0:.4g}")
        results = lr.blocks
        write_json(out / "result.json", "mdimesh.long_run/1", {
            "decoy": settings,
            "blocks": [{k: v for k, v in b.to_dict().items() if k not in ("schema", "perf")}
                       for b in lr.blocks],
            "rate_spread": lr.spread(),
            "timing_residual_std_ps": lr.timing.residual_std,
        })
        write_csv(out / "key_report.csv", REPORT_COLUMNS, [b.report.csv_row() for b in lr.blocks])
        write_csv(out / "blocks.csv", BLOCK_COLUMNS, lr.rows())
        write_csv(out / "compensation.csv", COMPENSATION_COLUMNS, lr.compensation_a.rows())
        write_csv(out / "timing.csv", TIMING_COLUMNS, lr.timing.rows())
    for r in results:
        if r.estimate.flag == "numeric_failure":
            raise ArithmeticError("decoy estimation failed numerically")
    flagged = [r.estimate.flag for r in results if r.estimate.flag]
    if flagged:
        raise Infeasible(f"no single-photon yield can be certified ({flagged[0]}); "
                         "key length is zero")


def _tally_rows(t):
    k = t.N.shape[0]
    for i in range(k):
        for j in range(k):
            for b, name in enumerate("ZX"):
                yield i, j, name, float(t.N[i, j, b]), float(t.n[i, j, b]), float(t.m[i, j, b])


def cmd_hom_scan(args, cfg, out: Path) -> None:
    hc = build_hom(cfg)
    so, c = cfg["source"], cfg["comb"]
    span, step = so["hom_delay_span_ps"], so["hom_delay_step_ps"]
    if step <= 0 or span <= 0:
        raise ConfigError("[source] hom_delay_span_ps and hom_delay_step_ps must be positive")
    n = int(math.floor(span / step + 1e-9))
    delays = np.arange(-n, n + 1) * step
    far = 5 * hc.shape.fwhm
    if span < far:
        delays = np.concatenate([[-far], delays, [far]])
    if args.dry_run:
        return
    scan = hom_scan(hc, delays)
    write_csv(out / "hom_scan.csv", HOM_COLUMNS, scan.rows())
    # every tooth sees the same jitter statistics, so the visibility is shared
    plan = build_scenario(cfg).comb
    rows = []
    for tooth in range(c["tooth_min"], c["tooth_max"] + 1):
        try:
            label = itu_label(plan, tooth)
        except ValueError:
            label = ""
        rows.append((tooth, tooth_frequency(plan, tooth), label, scan.visibility))
    write_csv(out / "hom_teeth.csv", TEETH_COLUMNS, rows)
    write_json(out / "hom_summary.json", "mdimesh.hom_scan/1", {
        "visibility": scan.visibility, "baseline": scan.baseline,
        "mean_photons": hc.mean_photons, "timing_jitter_ps": hc.timing_jitter,
        "detuning_jitter_khz": hc.detuning_jitter, "static_overlap": hc.static_overlap})
    _log(f"visibility={scan.visibility:.4f}")


def cmd_keyrate_vs_distance(args, cfg, out: Path) -> None:
    s = build_scenario(cfg, args.threads)
    ch = cfg["channel"]
    distances = np.asarray(cfg["run"]["distances_km"], float)
    if len(distances) == 0 or np.any(distances < 0):
        raise ConfigError("[run] distances_km must be a non-empty list of non-negative values")
    ull = replace(s, channel_a=replace(s.channel_a, attenuation=ch["ull_attenuation_db_per_km"]),
                  channel_b=replace(s.channel_b, attenuation=ch["ull_attenuation_db_per_km"]))
    if args.dry_run:
        return
    finite = cfg["finite_key"]["finite"]
    std = rate_vs_distance(s, distances, finite)
    low = rate_vs_distance(ull, distances, finite)
    write_csv(out / "keyrate_distance.csv", DISTANCE_COLUMNS, zip(distances, std, low))


def cmd_lock_sim(args, cfg, out: Path) -> None:
    lc = build_lock(cfg)
    duration = cfg["run"]["duration_s"]
    if duration <= 0:
        raise ConfigError("[run] duration_s must be positive")
    if args.dry_run:
        return
    seed = cfg["run"]["seed"]
    trace = simulate_lock(lc, duration, seed)
    open_loop = simulate_lock(replace(lc, kp=0.0, ki=0.0, survival_range=math.inf,
                                      divergence_bound=math.inf), duration, seed)
    write_csv(out / "lock_trace.csv", LOCK_COLUMNS, trace.rows())
    write_json(out / "lock_summary.json", "mdimesh.lock_summary/1", {
        "duration_s": duration, "std_hz": trace.std, "peak_to_peak_hz": trace.peak_to_peak,
        "temperature_excursion_mk": trace.temperature_excursion,
        "open_loop_std_hz": open_loop.std})
    _log(f"std={trace.std:.1f} Hz p2p={trace.peak_to_peak:.0f} Hz "
         f"excursion={trace.temperature_excursion:.1f} mK open_loop_std={open_loop.std:.0f} Hz")


def cmd_compensate(args, cfg, out: Path) -> None:
    s = build_scenario(cfg, args.threads)
    co, duration = cfg["control"], cfg["run"]["duration_s"]
    if duration <= 0:
        raise ConfigError("[run] duration_s must be positive")
    if args.dry_run:
        return
    rp, rt = (np.random.default_rng(c) for c in np.random.SeedSequence(s.seed).spawn(2))
    axis = np.asarray(s.misalignment_axis, float)
    static = tuple(axis / np.linalg.norm(axis) * s.misalignment)
    link = PolarizationLink(s.channel_a.polarization_drift_rate, s.extinction_ratio_db, static)
    comp = run_compensation(link, duration, s.spgd, rp, co["spgd_enabled"], sample_interval=1.0)
    drift = timing_drift_series(duration, s.timing_loop.measurement_period,
                                s.channel_a.timing_drift, rt)
    timing = timing_feedback(drift, s.timing_loop, rt, co["timing_enabled"])
    write_csv(out / "compensation.csv", COMPENSATION_COLUMNS, comp.rows())
    write_csv(out / "timing.csv", TIMING_COLUMNS, timing.rows())
    write_json(out / "compensation_summary.json", "mdimesh.compensation/1", {
        "duration_s": duration, "spgd_enabled": co["spgd_enabled"],
        "timing_enabled": co["timing_enabled"], "steady_qber_z": comp.steady_state(),
        "final_qber_z": float(comp.qber[-1]) if len(comp.qber) else None,
        "timing_residual_std_ps": timing.residual_std,
        "timing_residual_rms_ps": timing.residual_rms, "timing_drift_rms_ps": timing.drift_rms})


def cmd_netplan(args, cfg, out: Path) -> None:
    spec = build_network(cfg)
    if args.dry_run:
        return
    alloc = allocate(spec)
    (out).mkdir(parents=True, exist_ok=True)
    (out / "allocation.json").write_text(alloc.to_json() + "\n", encoding="utf-8")
    rows = ((i, j, c, sl, float(alloc.duty_cycle[(i, j)]))
            for (i, j), (c, sl) in alloc.assignments.items())
    write_csv(out / "allocation.csv", ALLOCATION_COLUMNS, rows)
    raw = cfg["network"]["raw_rate_bps"]
    rep = network_report(alloc, raw)
    doc = rep.to_dict()
    write_json(out / "network_report.json", doc.pop("schema"), doc)
    _log(alloc.table(limit=5))


COMMANDS = {
    "simulate": (cmd_simulate, "run key extraction blocks for a scenario"),
    "hom-scan": (cmd_hom_scan, "HOM dip versus delay and per-tooth visibility"),
    "keyrate-vs-distance": (cmd_keyrate_vs_distance, "key rate against distance, standard and ULL fiber"),
    "lock-sim": (cmd_lock_sim, "repetition-rate lock trajectory"),
    "compensate": (cmd_compensate, "polarization and timing control traces"),
    "netplan": (cmd_netplan, "channel and TDM allocation for a full mesh"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdimesh", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"mdimesh {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="INI scenario file (default: bundled paper-200km)")
        sp.add_argument("--override", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable")
        sp.add_argument("--seed", type=int, help="shorthand for --override run.seed=N")
        sp.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or ./mdimesh-out)")
        sp.add_argument("--dry-run", action="store_true", help="validate the configuration only")
        sp.add_argument("--threads", type=int, default=1, help="worker thread cap")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = _config(args)
        out = args.out or default_out_dir()
        func(args, cfg, out)
    except ConfigError as exc:
        _log(f"mdimesh: config error: {exc}")
        return EXIT_CONFIG
    except InfeasibleError as exc:
        _log(f"mdimesh: infeasible: {exc} (slots needed: {exc.slots_needed})")
        return EXIT_INFEASIBLE
    except Infeasible as exc:
        _log(f"mdimesh: infeasible: {exc}")
        return EXIT_INFEASIBLE
    except (QuadratureError, ChernoffError, LockInstabilityError, ArithmeticError) as exc:
        _log(f"mdimesh: numeric failure: {exc}")
        return EXIT_NUMERIC
    if args.dry_run:
        _log(f"mdimesh: {cfg.source}: configuration valid")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
