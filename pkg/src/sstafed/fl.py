"""Federated training loop with gradient-similarity aggregation (GSC), FedAvg and FedProx.

One round: every operator starts from the broadcast global weights and runs
``epochs`` passes of mini-batch SGD on its private data. The server turns each
returned weight vector into an update direction ``(w_t - w_global) / lr``,
scores operators by their mean cosine similarity to all operators (self
included), drops those under ``theta``, softmax-weights the rest at temperature
``tau`` and averages their weights. FedAvg and FedProx average uniformly (or by
sample count); FedProx also pins local training to the global weights with a
proximal penalty.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .errors import ConfigError, DimensionError, NumericError, ParameterError, ProtocolError
from .model import SstaConfig, SstaParams, backward, forward, init_params, loss, predict
from .numerics import cosine_matrix, make_rng, softmax
from .synthdata import Partition, SequenceSet

STRATEGIES = ("gsc", "fedavg", "fedprox")


@dataclass(frozen=True)
class AggregationStrategy:
    kind: str = "gsc"
    theta: float = 0.0
    tau: float = 1.0
    proximal: float = 0.01
    weighting: str = "uniform"  # fedavg/fedprox: "uniform" or "samples"

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not -1.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must be in [-1, 1], got {self.theta}")
        if self.proximal < 0:
            raise ConfigError(f"proximal coefficient must be non-negative, got {self.proximal}")
        if self.weighting not in ("uniform", "samples"):
            raise ConfigError(f"unknown weighting {self.weighting!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "AggregationStrategy":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown strategy option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class Operator:
    oid: int
    data: SequenceSet
    participants: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.data) == 0:
            raise ConfigError(f"operator {self.oid} has no training data")


@dataclass(frozen=True)
class ModelUpdate:
    operator: int
    round: int
    weights: np.ndarray
    samples: int
    loss: float = float("nan")
    accuracy: float = float("nan")


@dataclass(frozen=True)
class SimilarityReport:
    round: int
    matrix: np.ndarray
    mean_similarity: np.ndarray
    valid: tuple[int, ...]
    weights: np.ndarray
    theta: float
    tau: float

    @property
    def stalled(self) -> bool:
        return len(self.valid) == 0


# -- operator side -----------------------------------------------------------

def local_train(
    op: Operator,
    config: SstaConfig,
    global_weights: np.ndarray,
    epochs: int,
    lr: float,
    batch_size: int,
    strategy: AggregationStrategy,
    rng: np.random.Generator,
    round_index: int = 0,
    clip_norm: Optional[float] = None,
) -> ModelUpdate:
    """Run ``epochs`` of shuffled mini-batch SGD from the global weights.

    Under FedProx each step is the proximal (implicit) update
    ``w <- (w - lr*g + lr*rho*w_global) / (1 + lr*rho)``, which minimises the
    linearised loss plus ``rho/2 * |w - w_global|^2`` and stays stable for any rho.
    With ``clip_norm`` set, each batch gradient is rescaled to at most that L2 norm
    before the step. ``lr == 0`` leaves the weights untouched.
    """
    w0 = np.asarray(global_weights, dtype=np.float64)
    if w0.shape != (config.param_count(),):
        raise DimensionError(f"global weights have shape {w0.shape}, model needs {config.param_count()}")
    if epochs < 1:
        raise ParameterError("local epochs must be >= 1")
    if lr < 0:
        raise ParameterError("learning rate must be non-negative")
    if clip_norm is not None and not clip_norm > 0:
        raise ParameterError(f"clip_norm must be positive, got {clip_norm}")
    rho = strategy.proximal if strategy.kind == "fedprox" else 0.0
    w = w0.copy()
    n = len(op.data)
    bs = max(1, min(batch_size, n))
    y_all = op.data.onehot()
    tot_loss, correct, seen = 0.0, 0, 0
    for _ in range(epochs):
        order = rng.permutation(n)
        tot_loss, correct, seen = 0.0, 0, 0
        for bi, start in enumerate(range(0, n, bs)):
            idx = np.sort(order[start:start + bs])
            params = SstaParams(config, w)
            probs, acts = forward(params, op.data.frames[idx])
            y = y_all[idx]
            batch_loss = loss(probs, y)
            if not np.isfinite(batch_loss):
                raise NumericError(f"operator {op.oid}: non-finite loss in batch {bi} of round {round_index}")
            g = backward(params, acts, y)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"operator {op.oid}: non-finite gradient in batch {bi} of round {round_index}")
            if clip_norm is not None:
                gn = float(np.linalg.norm(g))
                if gn > clip_norm:
                    g = g * (clip_norm / gn)
            if lr > 0:
                w = (w - lr * g + (lr * rho) * w0) / (1.0 + lr * rho) if rho > 0 else w - lr * g
            tot_loss += batch_loss
            correct += int(np.sum(np.argmax(probs, axis=1) == op.data.labels[idx]))
            seen += len(idx)
    return ModelUpdate(op.oid, round_index, w, n, tot_loss / seen, correct / seen)


# -- server side -------------------------------------------------------------

def recover_gradient(update: ModelUpdate, previous_weights, lr: float) -> np.ndarray:
    """(w_t - w_prev) / lr: the net step the operator took, scaled by the step size."""
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    prev = np.asarray(previous_weights, dtype=np.float64)
    if update.weights.shape != prev.shape:
        raise DimensionError(f"update has {update.weights.shape} weights, previous model {prev.shape}")
    return (update.weights - prev) / lr


def gsc_weights(grads: Sequence[np.ndarray], theta: float, tau: float, round_index: int = 0) -> SimilarityReport:
    """Similarity matrix, per-operator mean similarity, valid set and aggregation weights.

    An empty valid set yields all-zero weights; the caller decides how to stall.
    """
    if len(grads) < 1:
        raise ProtocolError("gsc_weights needs at least one gradient")
    if len({np.shape(g) for g in grads}) != 1:
        raise DimensionError("all gradients must have the same length")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    sim = cosine_matrix(np.stack([np.ravel(g) for g in grads]))
    mean = sim.mean(axis=1)
    valid = tuple(int(t) for t in np.flatnonzero(mean >= theta))
    delta = np.zeros(len(grads))
    if valid:
        delta[list(valid)] = softmax(mean[list(valid)], temperature=tau)
    return SimilarityReport(round_index, sim, mean, valid, delta, theta, tau)


def aggregate(updates: Sequence[ModelUpdate], weights) -> np.ndarray:
    """Weighted sum of operator weights, accumulated in ascending operator id."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(updates) != len(weights):
        raise ProtocolError(f"{len(updates)} updates but {len(weights)} aggregation weights")
    if not updates:
        raise ProtocolError("nothing to aggregate")
    order = sorted(range(len(updates)), key=lambda i: updates[i].operator)
    out = np.zeros_like(updates[order[0]].weights)
    for i in order:
        if weights[i] != 0.0:
            out += weights[i] * updates[i].weights
    return out


def baseline_weights(updates: Sequence[ModelUpdate], weighting: str) -> np.ndarray:
    if weighting == "samples":
        n = np.array([u.samples for u in updates], dtype=np.float64)
        return n / n.sum()
    return np.full(len(updates), 1.0 / len(updates))


# -- evaluation --------------------------------------------------------------

def evaluate(params: SstaParams, data: Optional[SequenceSet], average: str = "macro") -> dict:
    if data is None or len(data) == 0:
        return metrics.summary(metrics.ConfusionMatrix(np.zeros((params.config.classes,) * 2)))
    pred = np.argmax(predict(params, data.frames), axis=1)
    cm = metrics.ConfusionMatrix.from_labels(data.labels, pred, params.config.classes)
    return metrics.summary(cm, average)


def participant_report(params: SstaParams, part: Partition, average: str = "macro") -> list[dict]:
    rows = []
    for group, data in (("trained", part.test_trained), ("untrained", part.test_untrained)):
        if data is None:
            continue
        pred = np.argmax(predict(params, data.frames), axis=1)
        for pid in sorted(set(data.participants.tolist())):
            m = data.participants == pid
            cm = metrics.ConfusionMatrix.from_labels(data.labels[m], pred[m], params.config.classes)
            rows.append({"participant": pid, "group": group, **metrics.summary(cm, average)})
    return rows


# -- rounds ------------------------------------------------------------------

@dataclass
class RoundRecord:
    round: int
    strategy: str
    operator_loss: list[float]
    operator_accuracy: list[float]
    report: SimilarityReport
    weights: np.ndarray
    stalled: bool
    evaluation: dict
    wall_time: float = 0.0


EVAL_SETS = ("train", "validation", "test_trained", "test_untrained")


class Server:
    """Central aggregator holding the global model, the operators and the round log."""

    def __init__(
        self,
        model_config: SstaConfig,
        partition: Partition,
        strategy: AggregationStrategy,
        *,
        seed: int,
        local_epochs: int = 5,
        lr: float = 0.01,
        batch_size: int = 16,
        clip_norm: Optional[float] = None,
        workers: int = 1,
        eval_sets: Sequence[str] = EVAL_SETS,
        average: str = "macro",
        initial: Optional[SstaParams] = None,
    ):
        unknown = set(eval_sets) - set(EVAL_SETS)
        if unknown:
            raise ConfigError(f"unknown evaluation set(s): {sorted(unknown)}")
        self.config = model_config
        self.partition = partition
        self.strategy = strategy
        self.seed = seed
        self.local_epochs = local_epochs
        self.lr = lr
        self.batch_size = batch_size
        self.clip_norm = clip_norm
        self.workers = max(1, int(workers))
        self.eval_sets = tuple(eval_sets)
        self.average = average
        self.operators = [
            Operator(t, data, members)
            for t, (data, members) in enumerate(zip(partition.operator_train, partition.operator_participants))
        ]
        self.params = initial if initial is not None else init_params(model_config, seed)
        self.round = 0
        self.log: list[RoundRecord] = []
        self.failures: list[str] = []
        self._eval_data = {
            "train": partition.train if "train" in self.eval_sets else None,
            "validation": partition.validation,
            "test_trained": partition.test_trained,
            "test_untrained": partition.test_untrained,
        }

    def evaluate(self, params: Optional[SstaParams] = None) -> dict:
        p = params or self.params
        return {name: evaluate(p, self._eval_data[name], self.average) for name in self.eval_sets}

    def _train_one(self, op: Operator) -> ModelUpdate:
        rng = make_rng(self.seed, "operator", op.oid, "round", self.round)
        return local_train(
            op, self.config, self.params.vector, self.local_epochs, self.lr,
            self.batch_size, self.strategy, rng, self.round, self.clip_norm,
        )

    def collect_updates(self) -> list[ModelUpdate]:
        if self.workers > 1 and len(self.operators) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                updates = list(pool.map(self._train_one, self.operators))
        else:
            updates = [self._train_one(op) for op in self.operators]
        return sorted(updates, key=lambda u: u.operator)

    def run_round(self) -> RoundRecord:
        t0 = time.perf_counter()
        self.round += 1
        try:
            updates = self.collect_updates()
        except Exception as exc:
            self.failures.append(f"round {self.round}: {type(exc).__name__}: {exc}")
            raise
        grads = [recover_gradient(u, self.params.vector, self.lr) if self.lr > 0
                 else u.weights - self.params.vector for u in updates]
        st = self.strategy
        report = gsc_weights(grads, st.theta, st.tau, self.round)
        if st.kind != "gsc":
            delta = baseline_weights(updates, st.weighting)
            report = SimilarityReport(self.round, report.matrix, report.mean_similarity,
                                      tuple(range(len(updates))), delta, st.theta, st.tau)
        stalled = report.stalled
        if not stalled:
            self.params = SstaParams(self.config, aggregate(updates, report.weights))
        rec = RoundRecord(
            round=self.round,
            strategy=st.kind,
            operator_loss=[u.loss for u in updates],
            operator_accuracy=[u.accuracy for u in updates],
            report=report,
            weights=self.params.vector.copy(),
            stalled=stalled,
            evaluation=self.evaluate(),
            wall_time=time.perf_counter() - t0,
        )
        self.log.append(rec)
        return rec


@dataclass
class ExperimentResult:
    initial_evaluation: dict
    records: list[RoundRecord]
    final_evaluation: dict
    participants: list[dict]
    params: SstaParams
    operator_participants: list[list[int]]


def run_experiment(cfg, partition: Optional[Partition] = None, on_round=None) -> ExperimentResult:
    """Build the federation described by ``cfg`` (an :class:`~sstafed.config.ExperimentConfig`) and run it."""
    from .synthdata import partition as make_partition

    cfg.validate()
    part = partition if partition is not None else make_partition(cfg.scenario, cfg.seed)
    server = Server(
        cfg.model, part, cfg.strategy, seed=cfg.seed, local_epochs=cfg.local_epochs,
        lr=cfg.lr, batch_size=cfg.batch_size, clip_norm=cfg.clip_norm, workers=cfg.workers,
        eval_sets=cfg.eval_sets, average=cfg.average,
    )
    initial = server.evaluate()
    for _ in range(cfg.rounds):
        rec = server.run_round()
        if on_round is not None:
            on_round(rec)
    final = server.log[-1].evaluation if server.log else initial
    return ExperimentResult(
        initial, server.log, final, participant_report(server.params, part, cfg.average),
        server.params, part.operator_participants,
    )
