"""Active-learning acquisition for hybrid screens with a statistical stop rule."""

from .acquisition import ScoredCandidates, select_batch
from .config import DataSpec, RunConfig, build_datasets, load_run_config, parse_run_config
from .core import (
    CampaignConfig,
    ConfigError,
    Dataset,
    DatasetError,
    EmptyTargetError,
    InvalidTransferError,
    PartitionState,
    PolicyMismatchError,
    Predictions,
    ScreenloopError,
    StepRecord,
    partition_init,
    transfer_batch,
)
from .engine import CampaignLog, LabelOracle, run_campaign, run_comparison
from .predictor import PROFILES, Model, ModelConfig, predict_ensemble, train, train_ensemble
from .stopping import chernoff_lower_bound, kl_bernoulli, should_stop_chernoff

__version__ = "0.1.0"
