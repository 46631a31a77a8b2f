"""Fock-state Metropolis sampling of interacting bosons in periodic boxes.

Condensate-number fluctuations in the canonical and microcanonical ensembles,
the temperature of maximal fluctuations and its interaction-induced shift.
"""

from .analysis import (
    LinearShiftRegressor,
    PeakFinder,
    PowerLawShiftRegressor,
    SweepResult,
    find_peak,
    fit_linear_shift_3d,
    fit_power_law_2d,
    gas_parameter_to_coupling,
    normalize_sweep,
    relative_shift,
)
from .ensembles import canonical_stats, merge_series, microcanonical_filter, microcanonical_stats
from .fock import FockState, apply_move, interaction_energy, kinetic_energy, move_delta_energy
from .modes import ModeSet, build_mode_set, mode_energy
from .oracle import (
    canonical_partition_functions,
    enumerate_exact,
    ground_occupation_distribution,
    ideal_fluctuation_curve,
    ideal_peak,
)
from .sampler import Chain, ChainConfig, SampleSeries, run_chain

__version__ = "0.1.0"
