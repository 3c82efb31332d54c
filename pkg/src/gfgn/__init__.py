"""Feature-dimension gating graph networks built on a small numpy autodiff core."""

from .data import Dataset, Split, SynthSpec, generate_synthetic, load_dataset, random_split, write_dataset
from .graph import Graph, SparseOperator, add_random_edges, edge_homophily, load_edges
from .graph import normalized_adjacency, normalized_laplacian
from .layers import ModelConfig, build_model
from .tensor import Tape, Tensor
from .training import TrainConfig, run_experiment, train_one

__version__ = "0.1.0"
