"""Movable-antenna OTFS simulation lab.

Delay-Doppler framing, multipath channel simulation, embedded-pilot
channel estimation (variational sparse Bayesian, linear MMSE, threshold
detection), and deep Q-learning for receive-antenna positioning on a
wavelength-scale grid.
"""

__version__ = "0.1.0"

from .channel import (
    AntennaGrid,
    ChannelPath,
    ChannelRealization,
    apply_channel,
    channel_gain,
    field_response,
    gain_heatmap,
    sample_environment,
)
from .config import (
    AgentConfig,
    ChannelConfig,
    ExperimentConfig,
    FrameConfig,
    PilotSettings,
    default_config,
)
from .estimation import (
    EstimateResult,
    NumericalFailure,
    PilotConfig,
    SblviState,
    delay_basis,
    doppler_basis,
    basis_gradients,
    embed_pilot,
    ep_threshold_estimate,
    initial_peak_search,
    lmmse_estimate,
    nmse,
    nmse_db,
    sblvi_estimate,
    true_dd_response,
)
from .mdp import Action, AntennaPositioningEnv, MdpState, Transition
from .dqn import (
    AdamOptimizer,
    DivergenceError,
    QNetwork,
    ReplayBuffer,
    epsilon_greedy,
    evaluate,
    td_target,
    train,
    train_step,
)
from .otfs import dft_matrix, otfs_demodulate, otfs_modulate
