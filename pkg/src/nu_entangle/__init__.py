"""Flavor-entangled neutrino pairs: oscillation, Bell tests and key distribution."""

from nu_entangle.oscillation import (
    CoincidenceTable,
    Flavor,
    MixingMatrix,
    OscillationParams,
    PairState,
    coincidence_probability,
    coincidence_table,
    coincidence_tables,
    evolve_pair,
    initial_pair_state,
    marginal_probability,
    osc_probability,
    tribimaximal_matrix,
)
from nu_entangle.bell import (
    BellResult,
    BellTimes,
    EmptyRange,
    GridScanSpec,
    NonPositiveDenominator,
    REFERENCE_TIMES,
    ch_value,
    find_contamination_minimum,
    h_value,
    scan_h,
    tau_contamination,
)
from nu_entangle.optimizer import (
    NoFeasiblePoint,
    OptimizerConfig,
    OptimizerResult,
    maximize_h,
    refine_local,
)
from nu_entangle.source import (
    EnergySample,
    SourceConfig,
    distance_to_s,
    s_to_distance,
    sample_pair_energy,
    smeared_bell,
    spectral_density,
)
from nu_entangle.qkd import (
    EveConfig,
    QkdConfig,
    QkdReport,
    eve_detectability,
    product_same_flavor_prob,
    run_protocol,
    same_flavor_zero_period,
)

__version__ = "0.1.0"
