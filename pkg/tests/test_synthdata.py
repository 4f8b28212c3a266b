import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sstafed.errors import ConfigError, InputError
from sstafed.numerics import make_rng
from sstafed.synthdata import (
    ALERT,
    DROWSY,
    Corruption,
    Participant,
    Scenario,
    SequenceSet,
    assign_operators,
    corrupt,
    export_partition,
    flip_labels,
    gen_participant_set,
    gen_sequence,
    import_partition,
    partition,
)

SMALL = dict(frame_size=(8, 8), sequences_per_class=2, test_sequences_per_class=1)


def still(p):
    return Participant(p.pid, p.base_brightness, p.blob_dy, p.blob_dx, p.rotation, p.blob_strength, 0.0)


def test_static_alert_sequence():
    p = still(Participant.draw(0, 0))
    seq = gen_sequence(p, ALERT, make_rng(0), noise=0.0)
    assert all(np.array_equal(seq.frames[0], f) for f in seq.frames)
    assert seq.class_index == ALERT


def test_drowsy_blob_dims():
    p = Participant.draw(3, 1)
    seq = gen_sequence(p, DROWSY, make_rng(0), noise=0.0)
    peaks = seq.frames.reshape(len(seq.frames), -1).max(axis=1)
    assert np.all(np.diff(peaks) < 0)


def test_generation_is_deterministic():
    p = Participant.draw(5, 2)
    a = gen_sequence(p, DROWSY, make_rng(9, "x"))
    b = gen_sequence(p, DROWSY, make_rng(9, "x"))
    assert np.array_equal(a.frames, b.frames)
    with pytest.raises(InputError):
        gen_sequence(p, 2, make_rng(0))


def test_participants_differ():
    a, b = Participant.draw(1, 0), Participant.draw(2, 0)
    assert a != b
    assert Participant.draw(1, 0) == a


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 47), st.floats(0.0, 2.0), st.floats(0.0, 0.5))
def test_pixels_in_unit_range_and_exact_balance(seed, pid, het, noise):
    p = Participant.draw(pid, seed, het, (8, 8))
    s = gen_participant_set(p, 3, seed, "train", (8, 8), 5, noise)
    assert s.frames.min() >= 0.0 and s.frames.max() <= 1.0
    assert np.sum(s.labels == ALERT) == np.sum(s.labels == DROWSY) == 3


def test_task_is_linearly_learnable():
    from sklearn.linear_model import LogisticRegression

    sc = Scenario(operators=1, noise=0.05, **SMALL)
    train = partition(sc, 0).train
    test = partition(sc, 1).train
    def feats(d):
        m = d.frames.mean(axis=(2, 3))
        return m[:, 1:] - m[:, :1]
    clf = LogisticRegression(max_iter=1000).fit(feats(train), train.labels)
    assert clf.score(feats(test), test.labels) > 0.9


def test_partition_one_participant_per_operator():
    part = partition(Scenario(operators=42, **SMALL), 0)
    assert [len(m) for m in part.operator_participants] == [1] * 42
    assert sorted(sum(part.operator_participants, [])) == list(range(42))


def test_partition_even_division():
    groups = assign_operators(40, 5, make_rng(0))
    assert [len(g) for g in groups] == [8] * 5
    groups = assign_operators(42, 5, make_rng(0))
    assert sorted(len(g) for g in groups) == [8, 8, 8, 9, 9]


def test_partition_shards_disjoint_and_complete():
    sc = Scenario(operators=5, **SMALL)
    part = partition(sc, 3)
    owners = [set(t.participants.tolist()) | set(v.participants.tolist())
              for t, v in zip(part.operator_train, part.operator_val)]
    for a in range(5):
        for b in range(a + 1, 5):
            assert not owners[a] & owners[b]
    assert set().union(*owners) == set(range(42))
    assert not set(part.trained_test_ids) & set(part.untrained_test_ids)
    assert set(part.untrained_test_ids).isdisjoint(set().union(*owners))
    assert set(part.trained_test_ids) <= set(range(42))
    assert len(part.test_untrained) == 6 * 2 * sc.test_sequences_per_class
    assert len(part.validation) + len(part.train) == 42 * 2 * sc.sequences_per_class


def test_scenario_errors():
    with pytest.raises(ConfigError):
        Scenario(test_trained=43)
    with pytest.raises(ConfigError):
        Scenario(operators=50)
    with pytest.raises(ConfigError):
        Scenario(corruption=(Corruption(7),))
    with pytest.raises(ConfigError):
        Scenario.from_dict({"participants": 3})


def test_corrupt_examples():
    part = partition(Scenario(operators=3, **SMALL), 0)
    same = corrupt(part, 1, 0.0, 0)
    assert np.array_equal(same.operator_train[1].labels, part.operator_train[1].labels)
    flipped = corrupt(part, 1, 1.0, 0)
    assert np.array_equal(flipped.operator_train[1].labels, 1 - part.operator_train[1].labels)
    assert np.array_equal(flipped.operator_train[0].labels, part.operator_train[0].labels)
    assert np.array_equal(part.operator_train[1].labels, same.operator_train[1].labels)  # input untouched
    with pytest.raises(ConfigError):
        corrupt(part, 3, 0.5, 0)
    with pytest.raises(ConfigError):
        flip_labels(part.operator_train[0], 1.5, make_rng(0))


def test_flip_count_binomial():
    n = 1000
    data = SequenceSet(np.zeros((n, 1, 2, 2)), np.zeros(n, dtype=int), np.zeros(n, dtype=int))
    flipped = flip_labels(data, 0.5, make_rng(4, "flip"))
    k = int(flipped.labels.sum())
    assert abs(k - 500) <= 3 * np.sqrt(n * 0.25)


def test_corruption_only_touches_training_split():
    base = Scenario(operators=3, **SMALL)
    dirty = Scenario(operators=3, corruption=(Corruption(0, 1.0),), **SMALL)
    a, b = partition(base, 0), partition(dirty, 0)
    assert np.array_equal(b.operator_train[0].labels, 1 - a.operator_train[0].labels)
    assert np.array_equal(b.operator_val[0].labels, a.operator_val[0].labels)
    assert np.array_equal(b.test_trained.labels, a.test_trained.labels)


def test_export_import_roundtrip(tmp_path):
    sc = Scenario(train_participants=4, test_trained=1, test_untrained=1, operators=2, **SMALL)
    part = partition(sc, 0)
    export_partition(part, tmp_path)
    back = import_partition(tmp_path)
    assert back.operator_participants == part.operator_participants
    for a, b in zip(part.operator_train, back.operator_train):
        assert np.array_equal(a.labels, b.labels)
        assert np.abs(a.frames - b.frames).max() <= 0.5 / 255 + 1e-12
    assert back.untrained_test_ids == part.untrained_test_ids
