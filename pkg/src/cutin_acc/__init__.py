"""Aggressive cut-in screening and SV acceleration prediction for ACC."""

from .dataset import DatasetSplit, FeatureRow, SequenceSample, extract_rows, split_dataset, window_rows
from .detector import CutInEvent, DetectorConfig, count_lane_changes, detect_cut_ins
from .evaluation import EvalReport, SimResult, accuracy_pct, evaluate_models, rmse, simulate_cut_in
from .ingest import Recording, Track, TrackSample, load_recording, normalize_direction, parse_tracks
from .predictors import (
    AnnConfig,
    AnnPredictor,
    LstmNetConfig,
    LstmPredictor,
    MpcConfig,
    MpcPredictor,
    TrainConfig,
    TrainTrace,
    mpc_predict,
    train,
)

__version__ = "0.1.0"
