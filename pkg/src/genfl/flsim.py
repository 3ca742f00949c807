"""Deterministic simulated federated training.

The task is a small 4-class Gaussian-mixture classification problem in 16
dimensions with a linear-softmax model, which keeps a full multi-round
session in the seconds range while preserving the IID / non-IID contrast.
Local training is plain mini-batch SGD with an optional proximal pull
toward the global model (mu = 0 disables it).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .core import Budget, ClientSelection, DevicePool, ScoreBreakdown, comprehensive_score, round_energy, round_latency
from .errors import DataError, EmptyShardError, InfeasiblePartitionError, ShapeError

N_CLASSES = 4
N_FEATURES = 16
TRAIN_SIZE = 4000
VAL_SIZE = 1000
BATCH_SIZE = 32


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray  # (n, 16) float64
    y: np.ndarray  # (n,) int

    def __post_init__(self):
        if len(self.x) == 0 or len(self.x) != len(self.y):
            raise DataError("dataset must be non-empty with matching features/labels")

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class TaskModel:
    """Linear softmax classifier; params live in a flat vector."""

    params: np.ndarray  # (16*4 + 4,) float64

    @property
    def weights(self) -> np.ndarray:
        return self.params[: N_FEATURES * N_CLASSES].reshape(N_FEATURES, N_CLASSES)

    @property
    def bias(self) -> np.ndarray:
        return self.params[N_FEATURES * N_CLASSES:]

    @staticmethod
    def zeros() -> "TaskModel":
        return TaskModel(np.zeros(N_FEATURES * N_CLASSES + N_CLASSES))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias


@dataclass(frozen=True)
class PartitionConfig:
    mode: str = "iid"  # "iid" | "dirichlet"
    beta: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("iid", "dirichlet"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.mode == "dirichlet" and not self.beta > 0:
            raise ValueError("dirichlet beta must be > 0")


@dataclass(frozen=True)
class SimConfig:
    clients: int
    participants: int
    rounds: int
    local_epochs: int = 5
    local_lr: float = 0.1
    prox_mu: float = 0.0

    def __post_init__(self):
        if not 1 <= self.participants <= self.clients:
            raise ValueError("need 1 <= participants <= clients")
        if self.rounds < 1 or self.local_epochs < 1 or self.prox_mu < 0:
            raise ValueError("invalid sim config")


@dataclass(frozen=True)
class RoundOutcome:
    round_index: int
    selection: ClientSelection
    accuracy: float
    breakdown: ScoreBreakdown


def make_dataset(seed: int, n: int = TRAIN_SIZE + VAL_SIZE) -> tuple[Dataset, Dataset]:
    """Generate the synthetic classification task; returns (train, val)."""
    gen = rngmod.stream(seed, "dataset")
    means = gen.normal(0.0, 1.0, size=(N_CLASSES, N_FEATURES))
    y = gen.integers(0, N_CLASSES, size=n)
    x = means[y] + gen.normal(0.0, 1.0, size=(n, N_FEATURES))
    n_train = n - VAL_SIZE if n > VAL_SIZE else max(1, n // 2)
    return Dataset(x[:n_train], y[:n_train]), Dataset(x[n_train:], y[n_train:])


def load_dataset_csv(path) -> Dataset:
    """Load a feature/label table (header f0..f15,label)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = [f"f{i}" for i in range(N_FEATURES)] + ["label"]
        if header != expected:
            raise DataError(f"bad dataset header, expected {','.join(expected)}")
        rows = [[float(v) for v in row] for row in reader]
    if not rows:
        raise DataError("empty dataset file")
    arr = np.asarray(rows, dtype=np.float64)
    return Dataset(arr[:, :N_FEATURES], arr[:, N_FEATURES].astype(int))


def partition_dataset(dataset: Dataset, n_clients: int, cfg: PartitionConfig) -> list[np.ndarray]:
    """Split sample indices into disjoint shards covering the dataset."""
    n = len(dataset)
    if n_clients < 1 or n_clients > n:
        raise InfeasiblePartitionError(f"cannot split {n} samples across {n_clients} clients")
    gen = rngmod.stream(cfg.seed, "partition", cfg.mode)

    if cfg.mode == "iid":
        order = gen.permutation(n)
        shards = [np.sort(part) for part in np.array_split(order, n_clients)]
    else:
        shards_lists: list[list[int]] = [[] for _ in range(n_clients)]
        for cls in range(N_CLASSES):
            idx = np.flatnonzero(dataset.y == cls)
            idx = gen.permutation(idx)
            props = gen.dirichlet(np.full(n_clients, cfg.beta))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
            for shard, part in zip(shards_lists, np.split(idx, cuts)):
                shard.extend(part.tolist())
        # low beta can leave shards empty; steal one sample from the largest
        for k in range(n_clients):
            while not shards_lists[k]:
                donor = max(range(n_clients), key=lambda j: len(shards_lists[j]))
                if len(shards_lists[donor]) <= 1:
                    raise InfeasiblePartitionError("not enough samples to give every client one")
                shards_lists[k].append(shards_lists[donor].pop())
        shards = [np.sort(np.asarray(s, dtype=int)) for s in shards_lists]

    assert sum(len(s) for s in shards) == n
    return shards


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def model_grad(model: TaskModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Mean cross-entropy gradient as a flat vector."""
    probs = _softmax(model.logits(x))
    probs[np.arange(len(y)), y] -= 1.0
    probs /= len(y)
    gw = x.T @ probs
    gb = probs.sum(axis=0)
    return np.concatenate([gw.ravel(), gb])


def per_example_losses(model: TaskModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    probs = _softmax(model.logits(x))
    return -np.log(np.maximum(probs[np.arange(len(y)), y], 1e-300))


def local_train(global_model: TaskModel, dataset: Dataset, shard: np.ndarray,
                epochs: int, lr: float, mu: float, rng: np.random.Generator) -> TaskModel:
    """Mini-batch SGD on the shard; mu > 0 adds a proximal pull to the global."""
    if len(shard) == 0:
        raise EmptyShardError("cannot train on an empty shard")
    w = global_model.params.copy()
    w0 = global_model.params
    x_all, y_all = dataset.x[shard], dataset.y[shard]
    for _ in range(epochs):
        order = rng.permutation(len(shard))
        for start in range(0, len(shard), BATCH_SIZE):
            batch = order[start:start + BATCH_SIZE]
            g = model_grad(TaskModel(w), x_all[batch], y_all[batch])
            if mu > 0:
                g = g + mu * (w - w0)
            w = w - lr * g
    return TaskModel(w)


def aggregate(local_models: list[TaskModel]) -> TaskModel:
    if not local_models:
        raise DataError("nothing to aggregate")
    shape = local_models[0].params.shape
    for m in local_models[1:]:
        if m.params.shape != shape:
            raise ShapeError("mismatched parameter shapes")
    return TaskModel(np.mean([m.params for m in local_models], axis=0))


def evaluate_model(model: TaskModel, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise DataError("empty evaluation set")
    preds = model.logits(dataset.x).argmax(axis=-1)
    return float(np.mean(preds == dataset.y))


@dataclass
class FLState:
    """One simulated FL session: dataset, shards, model, and round counter."""

    train: Dataset
    val: Dataset
    shards: list[np.ndarray]
    pool: DevicePool
    sim: SimConfig
    model: TaskModel
    round_index: int
    seed: int

    @staticmethod
    def initialize(pool: DevicePool, sim: SimConfig, partition: PartitionConfig,
                   seed: int, dataset: tuple[Dataset, Dataset] | None = None) -> "FLState":
        if sim.clients != pool.size:
            raise DataError("sim.clients must match pool size")
        train, val = dataset if dataset is not None else make_dataset(seed)
        shards = partition_dataset(train, sim.clients, replace(partition, seed=seed))
        return FLState(train=train, val=val, shards=shards, pool=pool, sim=sim,
                       model=TaskModel.zeros(), round_index=0, seed=seed)


def run_round(state: FLState, selection: ClientSelection, budget: Budget) -> RoundOutcome:
    """Advance the global model one round using only the selected clients."""
    selection.validate_against(state.pool)
    locals_ = []
    for cid in selection.tokens:
        client_rng = rngmod.stream(state.seed, "local", str(state.round_index), str(cid))
        locals_.append(local_train(state.model, state.train, state.shards[cid],
                                   state.sim.local_epochs, state.sim.local_lr,
                                   state.sim.prox_mu, client_rng))
    state.model = aggregate(locals_)
    acc = evaluate_model(state.model, state.val)
    lat = round_latency(selection, state.pool, state.round_index, state.sim.local_epochs)
    en = round_energy(selection, state.pool, state.round_index, state.sim.local_epochs)
    breakdown = comprehensive_score(acc, lat, en, budget)
    outcome = RoundOutcome(round_index=state.round_index, selection=selection,
                           accuracy=acc, breakdown=breakdown)
    state.round_index += 1
    return outcome
