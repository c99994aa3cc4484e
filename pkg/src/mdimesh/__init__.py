"""Simulation and analysis toolkit for comb-based fully connected MDI-QKD networks.

Modules
-------
comb          frequency comb teeth, ITU labels and the repetition-rate lock
photonics     pulse encoding, fiber drift and threshold detectors
interference  mode overlap, two-photon interference and Bell-state measurement
protocol      sifting, decoy-state estimation and finite-size key length
control       SPGD polarization compensation and the timing feedback loop
netplan       wavelength and TDM allocation for a full mesh
engine        scenario runs in analytic and Monte Carlo modes
"""
from __future__ import annotations

__version__ = "0.1.0"

from .comb import (CombPlan, LockInstabilityError, LockLoopConfig, LockTrace, SeedJitterModel,
                   itu_label, simulate_lock, tooth_frequency)
from .control import (PolarizationLink, SpgdConfig, TimingLoopConfig, run_compensation,
                      timing_feedback)
from .engine import RunResult, Scenario, run_long, run_scenario
from .interference import (BsmOutcome, ClickPattern, HomConfig, QuadratureError, bsm_trial,
                           classify, hom_scan, mode_overlap)
from .netplan import Allocation, InfeasibleError, NetworkSpec, allocate, network_report
from .photonics import DetectorModel, FiberChannel, IntensitySet, PulseShape
from .profiles import get_profile
from .protocol import (ChernoffError, DecoyEstimate, FiniteKeyParams, KeyReport, SiftedTally,
                       estimate_single_photon, key_length)

__all__ = [
    "__version__",
    "Allocation", "BsmOutcome", "ChernoffError", "ClickPattern", "CombPlan", "DecoyEstimate",
    "DetectorModel", "FiberChannel", "FiniteKeyParams", "HomConfig", "InfeasibleError",
    "IntensitySet", "KeyReport", "LockInstabilityError", "LockLoopConfig", "LockTrace",
    "NetworkSpec", "PolarizationLink", "PulseShape", "QuadratureError", "RunResult", "Scenario",
    "SeedJitterModel", "SiftedTally", "SpgdConfig", "TimingLoopConfig",
    "allocate", "bsm_trial", "classify", "estimate_single_photon", "get_profile", "hom_scan",
    "itu_label", "key_length", "mode_overlap", "network_report", "run_compensation", "run_long",
    "run_scenario", "simulate_lock", "timing_feedback", "tooth_frequency",
]
