"""mmWave multi-array HMD channel synthesis and channel performance metrics."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DataError, DegenerateError, HmdChanError  # noqa: E402
from .geometry import (ArrayLayout, HmdConfiguration, MobilityPattern, Orientation,  # noqa: E402
                       compound_gain_analytical, patch_element_gain, port_index_map,
                       standard_configuration)
from .channel import (ChannelTensor, Mpc, SounderModel, ctf_to_cir, extract_subchannel,  # noqa: E402
                      normalize_channel, synthesize_ctf)
from .propagation import (Blocker, PathLossModel, Room, Scenario, fit_ple, generate_mpcs,  # noqa: E402
                          gtd_blockage_attenuation, path_loss)
from .metrics import (CapacityConfig, GainSeries, MetricReport, azimuth_spread,  # noqa: E402
                      eigenmodes, gain_ratio, gain_std_db, mean_gain, minimal_service,
                      rms_delay_spread, waterfilling_capacity)

__all__ = [name for name in dir() if not name.startswith("_")]
