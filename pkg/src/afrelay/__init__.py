"""Joint channel, CFO and phase-noise estimation for amplify-and-forward OFDM relay links."""

from __future__ import annotations

from .estimator import EstimatorConfig, EstimatorOutput, JointEstimator, run_joint_estimation
from .hcrlb import BoundProblem, BoundReport, bim, bound_for_state, fim_at, transform_and_extract
from .metrics import ber, mse_cfo_pn, mse_channel
from .pn_subspace import PnBasis, basis_for, build_basis, pn_covariance
from .receiver import ChannelKnowledge, CombReceiver, CombSymbol, qpsk_demap, qpsk_map, run_detection
from .signal_model import (
    LinkState,
    Observation,
    SimConfig,
    draw_link_state,
    qpsk_training,
    synthesize_data_symbol,
    synthesize_training,
)

__version__ = "0.1.0"
