"""Rateless codes over arbitrarily varying channels: stopping times, competitive ratio, regret."""

from .adversary import AdversarySpec, Mode, worst_case, worst_case_case_split, worst_regret
from .channel import (
    ChannelFamily,
    Distribution,
    Dmc,
    capacity,
    example_family,
    load_family,
    mutual_information,
    symmetric_input,
)
from .competitive import (
    PolicySearchSpace,
    optimize_cr,
    optimize_regret,
    reproduce_paper,
    upper_bound_fixed_sets,
)
from .sim import DecoderConfig, check_delta_close, dsi_decode, generate_codebook, run_sim
from .stopping import (
    Policy,
    StateProfile,
    optimal_stopping_time,
    stopping_time_fluid,
    stopping_time_integer,
)

__version__ = "0.1.0"

__all__ = [
    "AdversarySpec",
    "ChannelFamily",
    "DecoderConfig",
    "Distribution",
    "Dmc",
    "Mode",
    "Policy",
    "PolicySearchSpace",
    "StateProfile",
    "capacity",
    "check_delta_close",
    "dsi_decode",
    "example_family",
    "generate_codebook",
    "load_family",
    "mutual_information",
    "optimal_stopping_time",
    "optimize_cr",
    "optimize_regret",
    "reproduce_paper",
    "run_sim",
    "stopping_time_fluid",
    "stopping_time_integer",
    "symmetric_input",
    "upper_bound_fixed_sets",
    "worst_case",
    "worst_case_case_split",
    "worst_regret",
]
