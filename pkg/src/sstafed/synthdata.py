"""Synthetic alert/drowsy frame sequences and their federated partition.

Each participant has a fixed appearance (background brightness, eye-blob offset,
blob orientation and strength) and a drowsiness decay rate. An alert sequence
keeps the eye blob at constant intensity; a drowsy one dims it geometrically
frame by frame, a stand-in for eyes closing. ``heterogeneity`` scales how far
participants stray from the mean appearance.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .model import FrameSequence, one_hot
from .numerics import make_rng
from .vision import read_pgm, write_pgm

ALERT, DROWSY = 0, 1
CLASS_NAMES = ("alert", "drowsy")


@dataclass(frozen=True)
class Participant:
    pid: int
    base_brightness: float
    blob_dy: float
    blob_dx: float
    rotation: float
    blob_strength: float
    decay_rate: float

    @classmethod
    def draw(cls, pid: int, seed: int, heterogeneity: float = 1.0, frame_size=(16, 16)) -> "Participant":
        rng = make_rng(seed, "participant", pid)
        h = heterogeneity
        u = rng.uniform(-1.0, 1.0, size=4)
        return cls(
            pid=pid,
            base_brightness=0.25 + 0.1 * h * u[0],
            blob_dy=h * u[1] * frame_size[0] / 8.0,
            blob_dx=h * u[2] * frame_size[1] / 8.0,
            rotation=h * u[3] * math.pi / 4.0,
            blob_strength=float(rng.uniform(0.45, 0.6)),
            decay_rate=float(rng.uniform(0.15, 0.35)),
        )


@dataclass
class SequenceSet:
    """Column-oriented batch of sequences: frames (n, K, H, W), labels and owners (n,)."""

    frames: np.ndarray
    labels: np.ndarray
    participants: np.ndarray
    classes: int = 2

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.participants = np.asarray(self.participants, dtype=np.int64)
        n = len(self.labels)
        if self.frames.shape[0] != n or len(self.participants) != n:
            raise InputError("frames, labels and participants must have equal length")

    def __len__(self):
        return len(self.labels)

    def onehot(self) -> np.ndarray:
        return one_hot(self.labels, self.classes)

    def subset(self, idx) -> "SequenceSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SequenceSet(self.frames[idx], self.labels[idx], self.participants[idx], self.classes)

    def with_labels(self, labels) -> "SequenceSet":
        return SequenceSet(self.frames, np.array(labels, dtype=np.int64), self.participants, self.classes)

    def sequences(self) -> list[FrameSequence]:
        y = self.onehot()
        return [FrameSequence(self.frames[i], y[i]) for i in range(len(self))]

    @classmethod
    def concat(cls, sets: Sequence["SequenceSet"]) -> "SequenceSet":
        sets = [s for s in sets if s is not None]
        if not sets:
            raise InputError("nothing to concatenate")
        return cls(
            np.concatenate([s.frames for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.participants for s in sets]),
            sets[0].classes,
        )

    @classmethod
    def from_sequences(cls, seqs: Sequence[FrameSequence], participants=None) -> "SequenceSet":
        frames = np.stack([s.frames for s in seqs])
        labels = [s.class_index for s in seqs]
        owners = participants if participants is not None else np.zeros(len(seqs), dtype=np.int64)
        return cls(frames, labels, owners, len(seqs[0].label))


def _blob(p: Participant, frame_size) -> np.ndarray:
    h, w = frame_size
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    cy = (h - 1) / 2.0 + p.blob_dy
    cx = (w - 1) / 2.0 + p.blob_dx
    # an elongated "eye": wider along its rotated major axis
    c, s = math.cos(p.rotation), math.sin(p.rotation)
    u = c * (xx - cx) + s * (yy - cy)
    v = -s * (xx - cx) + c * (yy - cy)
    sig_u = max(1.0, w / 6.0)
    sig_v = max(0.6, h / 12.0)
    return np.exp(-0.5 * ((u / sig_u) ** 2 + (v / sig_v) ** 2))


def gen_sequence(
    p: Participant,
    cls: int,
    rng: np.random.Generator,
    frame_size=(16, 16),
    length: int = 5,
    noise: float = 0.05,
) -> FrameSequence:
    if cls not in (ALERT, DROWSY):
        raise InputError(f"class must be 0 (alert) or 1 (drowsy), got {cls}")
    blob = _blob(p, frame_size)
    k = np.arange(length, dtype=np.float64)
    if cls == DROWSY:
        amp = p.blob_strength * np.exp(-p.decay_rate * k)
    else:
        amp = np.full(length, p.blob_strength)
    frames = p.base_brightness + amp[:, None, None] * blob[None]
    if noise > 0:
        frames = frames + rng.normal(0.0, noise, size=frames.shape)
    return FrameSequence(np.clip(frames, 0.0, 1.0), one_hot([cls], 2)[0])


def gen_participant_set(
    p: Participant, per_class: int, seed: int, stream: str, frame_size, length, noise
) -> SequenceSet:
    rng = make_rng(seed, "sequences", stream, p.pid)
    seqs, labels = [], []
    for cls in (ALERT, DROWSY):
        for _ in range(per_class):
            seqs.append(gen_sequence(p, cls, rng, frame_size, length, noise).frames)
            labels.append(cls)
    return SequenceSet(np.stack(seqs), labels, np.full(len(labels), p.pid))


def flip_labels(data: SequenceSet, probability: float, rng: np.random.Generator) -> SequenceSet:
    """Copy of ``data`` where each label is replaced by a different class with ``probability``."""
    if not 0.0 <= probability <= 1.0:
        raise ConfigError(f"flip probability must be in [0, 1], got {probability}")
    flip = rng.random(len(data)) < probability
    shift = rng.integers(1, data.classes, size=len(data))
    labels = np.where(flip, (data.labels + shift) % data.classes, data.labels)
    return data.with_labels(labels)


@dataclass(frozen=True)
class Corruption:
    operator: int
    flip_probability: float = 1.0


@dataclass(frozen=True)
class Scenario:
    train_participants: int = 42
    test_trained: int = 6
    test_untrained: int = 6
    operators: int = 5
    sequences_per_class: int = 40
    test_sequences_per_class: int = 10
    validation_fraction: float = 0.2
    frame_size: tuple[int, int] = (16, 16)
    sequence_length: int = 5
    noise: float = 0.05
    heterogeneity: float = 1.0
    corruption: tuple[Corruption, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frame_size", tuple(int(v) for v in self.frame_size))
        object.__setattr__(
            self,
            "corruption",
            tuple(c if isinstance(c, Corruption) else Corruption(**c) for c in self.corruption),
        )
        if self.train_participants < 1 or self.operators < 1:
            raise ConfigError("need at least one training participant and one operator")
        if self.operators > self.train_participants:
            raise ConfigError(
                f"{self.operators} operators cannot each hold one of {self.train_participants} participants"
            )
        if self.test_trained > self.train_participants:
            raise ConfigError(
                f"test_trained={self.test_trained} exceeds {self.train_participants} training participants"
            )
        if self.test_trained < 0 or self.test_untrained < 0:
            raise ConfigError("test participant counts must be non-negative")
        if self.sequences_per_class < 1 or self.test_sequences_per_class < 0:
            raise ConfigError("sequence counts must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must be in [0, 1)")
        if self.noise < 0 or self.heterogeneity < 0:
            raise ConfigError("noise and heterogeneity must be non-negative")
        for c in self.corruption:
            if not 0 <= c.operator < self.operators:
                raise ConfigError(f"corruption names unknown operator {c.operator}")
            if not 0.0 <= c.flip_probability <= 1.0:
                raise ConfigError(f"flip probability must be in [0, 1], got {c.flip_probability}")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["frame_size"] = list(self.frame_size)
        d["corruption"] = [{"operator": c.operator, "flip_probability": c.flip_probability} for c in self.corruption]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown scenario option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class Partition:
    """Operator-local training/validation data plus the two held-out test shards."""

    operator_train: list[SequenceSet]
    operator_val: list[SequenceSet]
    operator_participants: list[list[int]]
    test_trained: Optional[SequenceSet]
    test_untrained: Optional[SequenceSet]
    trained_test_ids: list[int] = field(default_factory=list)
    untrained_test_ids: list[int] = field(default_factory=list)
    participants: dict[int, Participant] = field(default_factory=dict)

    @property
    def train(self) -> SequenceSet:
        return SequenceSet.concat(self.operator_train)

    @property
    def validation(self) -> Optional[SequenceSet]:
        vals = [v for v in self.operator_val if len(v)]
        return SequenceSet.concat(vals) if vals else None


def assign_operators(n_participants: int, operators: int, rng: np.random.Generator) -> list[list[int]]:
    """Shuffle participant ids and deal them out as evenly as possible."""
    order = rng.permutation(n_participants)
    return [sorted(int(v) for v in chunk) for chunk in np.array_split(order, operators)]


def _split_validation(data: SequenceSet, fraction: float, rng) -> tuple[SequenceSet, SequenceSet]:
    val_idx = []
    for cls in np.unique(data.labels):
        idx = np.flatnonzero(data.labels == cls)
        n_val = int(round(fraction * len(idx)))
        val_idx.extend(rng.permutation(idx)[:n_val].tolist())
    mask = np.zeros(len(data), dtype=bool)
    mask[val_idx] = True
    return data.subset(np.flatnonzero(~mask)), data.subset(np.flatnonzero(mask))


def partition(scenario: Scenario, seed: int) -> Partition:
    sc = scenario
    total = sc.train_participants + sc.test_untrained
    people = {
        pid: Participant.draw(pid, seed, sc.heterogeneity, sc.frame_size) for pid in range(total)
    }
    groups = assign_operators(sc.train_participants, sc.operators, make_rng(seed, "partition"))
    gen = dict(frame_size=sc.frame_size, length=sc.sequence_length, noise=sc.noise)
    op_train, op_val = [], []
    flips = {c.operator: c.flip_probability for c in sc.corruption}
    for op, members in enumerate(groups):
        data = SequenceSet.concat(
            [gen_participant_set(people[pid], sc.sequences_per_class, seed, "train", **gen) for pid in members]
        )
        tr, va = _split_validation(data, sc.validation_fraction, make_rng(seed, "validation", op))
        if op in flips:
            tr = flip_labels(tr, flips[op], make_rng(seed, "corrupt", op))
        op_train.append(tr)
        op_val.append(va)
    pick = make_rng(seed, "test-trained").permutation(sc.train_participants)[: sc.test_trained]
    trained_ids = sorted(int(v) for v in pick)
    untrained_ids = list(range(sc.train_participants, total))

    def shard(ids):
        if not ids or sc.test_sequences_per_class == 0:
            return None
        return SequenceSet.concat(
            [gen_participant_set(people[pid], sc.test_sequences_per_class, seed, "test", **gen) for pid in ids]
        )

    return Partition(
        op_train, op_val, groups, shard(trained_ids), shard(untrained_ids), trained_ids, untrained_ids, people
    )


def corrupt(part: Partition, operator: int, probability: float, seed: int) -> Partition:
    """New partition whose ``operator`` has training labels flipped with ``probability``."""
    if not 0 <= operator < len(part.operator_train):
        raise ConfigError(f"unknown operator id {operator}")
    trains = list(part.operator_train)
    trains[operator] = flip_labels(trains[operator], probability, make_rng(seed, "corrupt", operator))
    return replace(part, operator_train=trains)


# -- export / import ---------------------------------------------------------

MANIFEST_FIELDS = ("file", "participant", "operator", "split", "class", "sequence", "frame")


def export_partition(part: Partition, out_dir) -> Path:
    """Write every frame as PGM under ``out_dir/frames`` plus ``manifest.csv``."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    rows = []

    def dump(data: SequenceSet, operator, split):
        for i in range(len(data)):
            for k in range(data.frames.shape[1]):
                name = f"{split}_op{operator}_p{data.participants[i]}_n{len(rows)}_f{k}.pgm"
                write_pgm(out / "frames" / name, data.frames[i, k])
                rows.append((name, int(data.participants[i]), operator, split,
                             CLASS_NAMES[data.labels[i]], i, k))

    for op, (tr, va) in enumerate(zip(part.operator_train, part.operator_val)):
        dump(tr, op, "train")
        dump(va, op, "validation")
    if part.test_trained is not None:
        dump(part.test_trained, -1, "test_trained")
    if part.test_untrained is not None:
        dump(part.test_untrained, -1, "test_untrained")
    with open(out / "manifest.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_FIELDS)
        wr.writerows(rows)
    return out / "manifest.csv"


def import_partition(in_dir) -> Partition:
    """Inverse of :func:`export_partition` (pixels come back quantised to 8 bits)."""
    root = Path(in_dir)
    groups: dict[tuple, dict] = {}
    with open(root / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["split"], int(row["operator"]))
            seq = groups.setdefault(key, {}).setdefault(int(row["sequence"]), {})
            seq.setdefault("frames", {})[int(row["frame"])] = read_pgm(root / "frames" / row["file"])
            seq["label"] = CLASS_NAMES.index(row["class"])
            seq["participant"] = int(row["participant"])

    def build(key):
        seqs = groups.get(key)
        if not seqs:
            return None
        order = sorted(seqs)
        frames = np.stack([np.stack([seqs[i]["frames"][k] for k in sorted(seqs[i]["frames"])]) for i in order])
        return SequenceSet(frames, [seqs[i]["label"] for i in order], [seqs[i]["participant"] for i in order])

    n_ops = 1 + max(op for split, op in groups if split == "train")
    trains = [build(("train", op)) for op in range(n_ops)]
    vals = []
    for op in range(n_ops):
        v = build(("validation", op))
        vals.append(v if v is not None else trains[op].subset([]))
    members = [sorted(set(t.participants.tolist())) for t in trains]
    tt, tu = build(("test_trained", -1)), build(("test_untrained", -1))
    return Partition(
        trains, vals, members, tt, tu,
        sorted(set(tt.participants.tolist())) if tt is not None else [],
        sorted(set(tu.participants.tolist())) if tu is not None else [],
    )
