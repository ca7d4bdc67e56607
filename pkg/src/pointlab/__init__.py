"""Composable marked temporal point process models, training and benchmark statistics."""

from .data import DataError, Event, EventSequence, MarkedDataset, load_dataset, preprocess, save_dataset, split
from .decoders import (cumulative, intensity, log_density_and_mark, make_decoder, predict_mark,
                       time_cdf)
from .diffcore import ParamStore, adam_step, finite_difference_check, grad
from .encoders import EventEncoder, HistoryEncoder, encode_events, encode_history
from .harness import ExperimentConfig, compare, gradcheck, run_experiment
from .likelihood import Schedule, TrainReport, random_search, train
from .metrics import MetricsReport, aggregate_ranks, ece, evaluate, f1, pce, standardize_nll
from .model import ModelSpec, TPPModel, sequence_nll
from .simulate import HawkesParams, hawkes_exact_nll, paper_hawkes_params, simulate_hawkes
from .stats import RankTable, cd_diagram_data, friedman, holm

__version__ = "0.1.0"
