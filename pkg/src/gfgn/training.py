"""Full-batch transductive training: Adam, L2, early stopping, multi-run aggregation."""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import Dataset, Split, random_split
from .graph import add_random_edges
from .layers import MODELS, Model, ModelConfig, build_model
from .tensor import ConfigError, Tape, Tensor


class NumericalError(RuntimeError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite training loss at epoch {epoch}")


@dataclass
class TrainConfig:
    model: str = "gfgn-graph"
    lam: float = 1.0
    lr: float = 0.005
    dropout: float = 0.5
    weight_decay: float = 5e-4
    epochs: int = 1000
    patience: int = 100
    heads: int = 8
    units_per_head: int = 8
    seed: int = 0
    splits: int = 10
    repeats: int = 10
    bias: bool = False

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        for name in ("lr", "epochs", "patience", "heads", "units_per_head", "splits", "repeats"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lam < 0 or self.weight_decay < 0:
            raise ConfigError("lambda and weight_decay must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.patience > self.epochs:
            raise ConfigError(f"patience {self.patience} exceeds epochs {self.epochs}")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        return self

    def model_config(self, in_dim: int, num_classes: int, seed: int) -> ModelConfig:
        return ModelConfig(self.model, in_dim, num_classes, self.heads, self.units_per_head,
                           self.lam, self.dropout, self.bias, seed)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], state: AdamState,
              lr: float, weight_decay: float = 0.0) -> None:
    """One Adam update in place, with the L2 term ``weight_decay * p`` folded into the gradient."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise T.DimensionError("optimizer state does not match the parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, (p, g) in enumerate(zip(params, grads)):
        if state.m[k].shape != p.data.shape:
            raise T.DimensionError(f"optimizer slot {k} is {state.m[k].shape}, parameter is {p.data.shape}")
        g = np.zeros_like(p.data) if g is None else g
        if weight_decay:
            g = g + weight_decay * p.data
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        p.data = p.data - lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)


def accuracy(logits: np.ndarray, labels, indices) -> float:
    """argmax accuracy; ties go to the smaller class index."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cannot evaluate on an empty index set")
    pred = np.argmax(logits[idx], axis=1)
    return float(np.mean(pred == np.asarray(labels)[idx]))


def evaluate(model: Model, dataset: Dataset, indices, graph=None) -> float:
    with Tape():
        logits, _ = model.forward(graph or dataset.graph, Tensor(dataset.features), training=False)
    return accuracy(logits.data, dataset.labels, indices)


def _xent(logits: np.ndarray, labels, idx) -> float:
    z = logits[idx]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(idx)), labels[idx]].mean())


@dataclass
class RunEntry:
    split: int
    repeat: int
    seed: int
    test_acc: float
    val_acc: float
    best_epoch: int
    epochs_run: int
    train_losses: list = field(default_factory=list, repr=False)


def train_one(dataset: Dataset, split: Split, config: TrainConfig, seed: Optional[int] = None,
              graph=None, split_index: int = 0, repeat: int = 0, keep_model: bool = False):
    """Train one model and report test accuracy at the best-validation epoch.

    Improvement means higher validation accuracy, or equal accuracy with
    lower validation loss. Parameters are restored to the best epoch.
    """
    config.validate()
    seed = config.seed if seed is None else seed
    g = graph if graph is not None else dataset.graph
    model = build_model(config.model_config(dataset.num_features, dataset.num_classes, seed))
    params = model.parameters()
    state = AdamState.for_params(params)
    X = Tensor(dataset.features)
    y = dataset.labels
    best = (-1.0, np.inf)
    best_epoch, best_state = -1, model.state()
    stale = 0
    losses = []
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        for p in params:
            p.zero_grad()
        with Tape():
            logits, _ = model.forward(g, X, training=True)
            loss = T.softmax_cross_entropy(logits, y, split.train)
            T.backward(loss)
        lv = loss.item()
        if not np.isfinite(lv):
            raise NumericalError(epoch)
        losses.append(lv)
        adam_step(params, [p.grad for p in params], state, config.lr, config.weight_decay)
        with Tape():
            out, _ = model.forward(g, X, training=False)
        if not np.all(np.isfinite(out.data)):
            raise NumericalError(epoch, f"non-finite logits at epoch {epoch}")
        score = (accuracy(out.data, y, split.val), _xent(out.data, y, split.val))
        if score[0] > best[0] or (score[0] == best[0] and score[1] < best[1]):
            best, best_epoch, best_state, stale = score, epoch, model.state(), 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state(best_state)
    with Tape():
        out, _ = model.forward(g, X, training=False)
    entry = RunEntry(split_index, repeat, seed, accuracy(out.data, y, split.test),
                     accuracy(out.data, y, split.val), best_epoch, epoch, losses)
    return (entry, model) if keep_model else entry


def run_seed(base_seed: int, split: int, repeat: int) -> int:
    return int(np.random.SeedSequence([base_seed, split, repeat]).generate_state(1)[0])


def split_seed(base_seed: int, split: int) -> int:
    return int(np.random.SeedSequence([base_seed, split]).generate_state(1)[0])


def dataset_splits(dataset: Dataset, config: TrainConfig) -> list:
    """The dataset's own splits when it carries enough, else seeded 48/32/20 splits."""
    if len(dataset.splits) >= config.splits:
        return list(dataset.splits[: config.splits])
    return [random_split(dataset.n, seed=split_seed(config.seed, i)) for i in range(config.splits)]


def num_threads() -> int:
    raw = os.environ.get("GFGN_THREADS")
    if raw:
        try:
            k = int(raw)
        except ValueError:
            raise ConfigError(f"GFGN_THREADS must be an integer, got {raw!r}") from None
        if k < 1:
            raise ConfigError("GFGN_THREADS must be >= 1")
        return k
    return os.cpu_count() or 1


def _parallel_map(fn, jobs: list, threads: Optional[int] = None) -> list:
    threads = num_threads() if threads is None else threads
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map keeps submission order whatever the completion order
        return list(pool.map(fn, jobs))


@dataclass
class RunResult:
    config: TrainConfig
    entries: list

    @property
    def test_accs(self) -> np.ndarray:
        return np.array([e.test_acc for e in self.entries])

    @property
    def mean(self) -> float:
        return float(self.test_accs.mean())

    @property
    def std(self) -> float:
        return float(self.test_accs.std())

    @property
    def val_mean(self) -> float:
        return float(np.mean([e.val_acc for e in self.entries]))

    def to_json(self, dataset: Optional[Dataset] = None, extra: Optional[dict] = None) -> dict:
        out = {"config": asdict(self.config)}
        out["optimizer"] = {"name": "adam", "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
                            "l2": "weight_decay * param added to the gradient of every weight"}
        if dataset is not None:
            out["dataset"] = {"name": dataset.name, "n": dataset.n, "edges": dataset.graph.num_edges,
                              "features": dataset.num_features, "classes": dataset.num_classes,
                              "row_normalized": dataset.row_normalized, "content_hash": dataset.content_hash}
        out["runs"] = [
            {"split": e.split, "repeat": e.repeat, "seed": e.seed, "test_acc": e.test_acc,
             "val_acc": e.val_acc, "best_epoch": e.best_epoch, "epochs_run": e.epochs_run}
            for e in self.entries
        ]
        out["mean"] = self.mean
        out["std"] = self.std
        out["val_mean"] = self.val_mean
        if extra:
            out.update(extra)
        return out


def run_experiment(dataset: Dataset, config: TrainConfig, noise_ratio: float = 0.0,
                   threads: Optional[int] = None) -> RunResult:
    """All splits x repeats of one configuration, in (split, repeat) order.

    With ``noise_ratio > 0`` every run trains on its own noisy copy of the
    graph, seeded by the run seed.
    """
    config.validate()
    splits = dataset_splits(dataset, config)

    def job(args):
        si, r = args
        seed = run_seed(config.seed, si, r)
        g = add_random_edges(dataset.graph, noise_ratio, seed) if noise_ratio else None
        return train_one(dataset, splits[si], config, seed, g, si, r)

    jobs = [(si, r) for si in range(len(splits)) for r in range(config.repeats)]
    return RunResult(config, _parallel_map(job, jobs, threads))


DEFAULT_GRID = {"lam": [0.5, 1.0, 2.0], "lr": [0.005, 0.05], "dropout": [0.5, 0.8],
                "weight_decay": [5e-4, 5e-5]}


def grid_configs(base: TrainConfig, grid: dict) -> list:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid must be nonempty in every axis")
    unknown = set(grid) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}")
    keys = sorted(grid)
    return [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]


def sweep(dataset: Dataset, base: TrainConfig, grid: dict, noise_ratio: float = 0.0,
          threads: Optional[int] = None) -> tuple[list, int]:
    """Run the Cartesian grid; returns (results, index of the best config by validation accuracy)."""
    results = [run_experiment(dataset, c, noise_ratio, threads) for c in grid_configs(base, grid)]
    best = max(range(len(results)), key=lambda i: (results[i].val_mean, -i))
    return results, best


def noise_sweep(dataset: Dataset, base: TrainConfig, ratios: Sequence[float], models: Sequence[str],
                grid: Optional[dict] = None, threads: Optional[int] = None) -> list:
    """Rows of (ratio, model, RunResult), ratio-major. A grid selects per (ratio, model) by validation."""
    rows = []
    for ratio in ratios:
        if ratio < 0:
            raise ConfigError(f"noise ratio must be >= 0, got {ratio}")
        for m in models:
            cfg = replace(base, model=m)
            if grid:
                results, best = sweep(dataset, cfg, grid, ratio, threads)
                rows.append((ratio, m, results[best]))
            else:
                rows.append((ratio, m, run_experiment(dataset, cfg, ratio, threads)))
    return rows
