"""Multi-channel moving window codes for multicast over erasure channels."""
from ._accel import BACKEND
from .analysis import (MGFSpec, RateFunctionResult, asymptotic_rate, bottleneck_probability,
                       capacity_membership, estimate_decay_rate, phi_const, rate_function,
                       sufficient_channels)
from .metrics import MetricsReport, collect, op_counter_snapshot
from .schemes import (Allocation, SchemeConfig, SchemeRun, mc_mwc_capacity,
                      optimal_static_allocation, run_scheme, static_capacity_upper)
from .topology import (ArrivalProcess, ChannelStats, GammaDist, SessionLayout, SessionSizeDist,
                       load_trace, sample_instance)

__version__ = "0.1.0"
