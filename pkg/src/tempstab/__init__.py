"""Temporal stabilization adapters for frame-wise predictors."""
from ._backend import BACKEND
from .bounds import BoundInstance, evaluate_u, landscape_grid, minimize_u, verify_collapse_bound, \
    verify_convexity, verify_oracle_bound
from .metrics import Metric, UnifiedLossReport, corruption_instability, corruption_robustness_error, \
    instability, psnr, unified_loss
from .models import ToyDenoiser, ToyEnhancer, build_model, freeze, parameter_hash
from .signals import CorruptionSpec, VideoSequence, corrupt, generate_sequence
from .stabilizers import ComposedStabilizer, Controller, ControlledStabilizer, EmaStabilizer, \
    SpatialFusionStabilizer, StabilizedModel, StabilizerState, attach, compose, controller_step, \
    ema_step, spatial_fusion_step
from .trainer import Dataset, DataConfig, ExperimentConfig, TrainConfig, TrainLog, evaluate, sweep, \
    train_base, train_stabilizer
from .transport import prune_edges, transport_distance, transport_metric

__version__ = "0.1.0"
