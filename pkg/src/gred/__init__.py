"""Graph representation learning by shortest-distance hop aggregation fed
through a stable diagonal linear recurrence."""

import os

# The workload is many small dense kernels; BLAS thread fan-out costs more
# than it buys at these sizes and makes reduction order runtime-dependent.
# Must happen before the first numpy import; explicit user settings win.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

from .graphs import (Graph, HopPartition, UNREACHABLE,
                     all_pairs_shortest_distances, gen_tree_neighbors_match,
                     gen_wl_counterexample_pair, graph_diameter, hop_partition)
from .lru import (LruParams, eigen_spectrum, init_lru, scan_parallel,
                  scan_sequential, unroll_closed_form)
from .model import ModelConfig, build_model, forward_model, param_count, presets
from .optim import Adam, ParamStore, load_checkpoint, lr_at, save_checkpoint
from .tensor import Tensor
from .training import TrainRun, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "Graph", "HopPartition", "LruParams", "ModelConfig", "ParamStore",
    "Tensor", "TrainRun", "UNREACHABLE", "all_pairs_shortest_distances",
    "build_model", "eigen_spectrum", "evaluate", "forward_model",
    "gen_tree_neighbors_match", "gen_wl_counterexample_pair", "graph_diameter",
    "hop_partition", "init_lru", "load_checkpoint", "lr_at", "param_count",
    "presets", "save_checkpoint", "scan_parallel", "scan_sequential", "train",
    "unroll_closed_form",
]
