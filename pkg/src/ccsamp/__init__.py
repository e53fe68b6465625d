"""Coded compressed sensing with AMP decoding for unsourced multiple access.

The outer code spreads a payload over ring-valued parity sections; the
inner code maps sections to a sparse superposition pushed through a sampled
Hadamard operator and recovered by approximate message passing, optionally
with outer-code priors refreshed every iteration.  See the README for the
CLI and the simulation entry points.
"""

from .errors import (
    BadDimensions,
    CcsAmpError,
    ConfigError,
    DanglingEdge,
    EmptyResult,
    InconsistentLengths,
    LengthMismatch,
    NoBracket,
    NonFiniteState,
    ZeroMass,
)
from .tree import (
    CodedMessage,
    GeneratorSet,
    PartitionTable,
    PathList,
    TreeCodeConfig,
    build_config,
    build_partition_table,
    cyclic_convolve_direct,
    encode,
    fold_likelihoods,
    info_prior,
    parity_consistent,
    parity_prior,
    payload_from_values,
    preset,
    prune_and_stitch,
    sample_generators,
)
from .mapping import assemble, disassemble, index_map, superpose, top_k_sections
from .sensing import (
    PowerAllocation,
    SensingOperator,
    build_operator,
    build_power,
    ebn0_to_power,
    fwht,
)
from .amp import (
    AmpState,
    PriorField,
    denoise,
    pme,
    residual_step,
    run_amp,
    tau_update,
    uninformative_priors,
)
from .pipeline import (
    DecoderConfig,
    MessageList,
    decode,
    dynamic_priors,
    likelihoods_from_state,
    section_likelihoods,
)
from .sim import (
    PupeEstimate,
    RunConfig,
    SweepRow,
    TrialConfig,
    TrialResult,
    estimate_pupe,
    load_run_config,
    min_ebn0_search,
    reference_curves,
    simulate_trial,
)

__version__ = "0.1.0"
