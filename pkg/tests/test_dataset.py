import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_take
from motionid.dataset import (DatasetSplit, FilterPolicy, filter_and_split, movement_score, read_split,
                              synth_generate, write_split)
from motionid.seeding import derive_seed
from motionid.take import Manifest, TakeEntry, read_manifest


def _entry(tid, seconds, session=None, score=0.1, two=True):
    return TakeEntry(tid, f"{tid}.csv", 90.0, int(seconds * 90), session, two, score)


def test_shortest_goes_to_test_second_to_validation():
    man = Manifest({"A": [_entry("a1", 900), _entry("a2", 400), _entry("a3", 600), _entry("a4", 1200)]})
    split = filter_and_split(man)
    assert split.test == [("A", "a2")]
    assert split.validation == [("A", "a3")]
    assert split.train == [("A", "a1"), ("A", "a4")]


def test_filters():
    man = Manifest({
        "A": [_entry("a1", 299), _entry("a2", 400), _entry("a3", 500), _entry("a4", 600, score=0.0005),
              _entry("a5", 700, two=False), _entry("a6", 800)],
        "B": [_entry("b1", 400), _entry("b2", 500), _entry("b3", 100)],
    })
    split = filter_and_split(man)
    assert split.subjects == ["A"]
    assert [t for _, t in split.train] == ["a6"]


def test_single_session_kept():
    man = Manifest({"A": [_entry("x1", 400, "s1"), _entry("x2", 400, "s1"), _entry("x3", 400, "s1"),
                          _entry("y1", 1000, "s2"), _entry("y2", 400, "s2"), _entry("y3", 400, "s2")]})
    split = filter_and_split(man)
    used = {t for role in ("train", "validation", "test") for _, t in split.role(role)}
    assert used == {"y1", "y2", "y3"}


def test_ties_broken_by_take_id():
    man = Manifest({"A": [_entry("c", 400), _entry("b", 400), _entry("a", 400)]})
    split = filter_and_split(man)
    assert split.test == [("A", "a")] and split.validation == [("A", "b")]


def test_nothing_survives():
    with pytest.raises(ValueError):
        filter_and_split(Manifest({"A": [_entry("a", 10)]}))
    with pytest.raises(ValueError):
        FilterPolicy(min_take_seconds=0)


def test_explicit_movement_overrides_manifest():
    man = Manifest({"A": [_entry("a1", 400), _entry("a2", 400), _entry("a3", 400), _entry("a4", 400)]})
    split = filter_and_split(man, movement={"a1": 0.0})
    assert "a1" not in {t for _, t in split.train + split.validation + split.test}


def test_movement_score():
    take = random_take(0)
    still = take.with_data(np.repeat(take.data[:1], len(take), axis=0))
    assert movement_score(still) < 1e-12
    assert movement_score(take) > 0.001


def test_split_round_trip(tmp_path):
    split = DatasetSplit([("A", "1")], [("A", "2")], [("A", "3")])
    write_split(split, tmp_path / "s.json")
    assert read_split(tmp_path / "s.json") == split


def test_synthetic_is_deterministic(tmp_path):
    m1, t1 = synth_generate(3, 3, 2, seed=4)
    m2, t2 = synth_generate(3, 3, 2, seed=4)
    _, t3 = synth_generate(3, 3, 2, seed=5)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(t1, t2))
    assert not np.array_equal(t1[0].data, t3[0].data)
    synth_generate(3, 3, 2, seed=4, out_dir=tmp_path)
    man = read_manifest(tmp_path / "manifest.json")
    assert np.array_equal(man.load("S01", "S01_t00").data, t1[0].data)


def test_synthetic_rejects_bad_sizes():
    with pytest.raises(ValueError):
        synth_generate(1, 3, 10)
    with pytest.raises(ValueError):
        synth_generate(2, 2, 10)


def test_derive_seed():
    assert derive_seed(7, "split") == derive_seed(7, "split")
    assert len({derive_seed(7, "a"), derive_seed(7, "b"), derive_seed(8, "a"), derive_seed(7, "a", 1)}) == 4
    assert 0 <= derive_seed(123, "x") < 2**63


def test_synthetic_sizes_and_movement():
    man, takes = synth_generate(10, 3, 120, fps=90, seed=0)
    assert len(takes) == 30 and all(len(t) == 10800 for t in takes)
    assert all(e.movement_score > 0.001 for _, e in man.entries())


def test_oscillating_wrist_score():
    take = random_take(0, n=900)
    data = np.repeat(take.data[:1], len(take), axis=0).reshape(-1, 3, 7)
    data[:, 1, 0] += 0.1 * np.sin(2 * np.pi * np.arange(900) / 90)
    assert movement_score(take.with_data(data.reshape(-1, 21))) >= 0.07


def test_split_example_minutes():
    man = Manifest({"A": [_entry("a9", 540), _entry("a6", 360), _entry("a12", 720), _entry("a7", 420),
                          _entry("a4", 240)]})
    split = filter_and_split(man)
    assert split.test == [("A", "a6")] and split.validation == [("A", "a7")]
    assert sorted(t for _, t in split.train) == ["a12", "a9"]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(100, 900), st.sampled_from(["s1", "s2", None]),
                                   st.booleans(), st.sampled_from([0.0, 0.01])),
                         min_size=0, max_size=7), min_size=1, max_size=6))
def test_split_invariants(spec):
    subjects = {}
    for i, takes in enumerate(spec):
        subjects[f"P{i}"] = [_entry(f"P{i}_{j}", sec, sess, score, two)
                             for j, (sec, sess, two, score) in enumerate(takes)]
    man = Manifest(subjects)
    try:
        split = filter_and_split(man)
    except ValueError:
        return
    seen = [t for role in ("train", "validation", "test") for _, t in split.role(role)]
    assert len(seen) == len(set(seen))
    for subject in split.subjects:
        for role in ("train", "validation", "test"):
            n = sum(1 for s, _ in split.role(role) if s == subject)
            assert n >= 1 and (role == "train" or n == 1)
        entries = {e.take_id: e for e in subjects[subject]}
        mine = [t for role in ("train", "validation", "test") for s, t in split.role(role) if s == subject]
        assert all(entries[t].seconds >= 300 and entries[t].two_subjects and entries[t].movement_score > 0
                   for t in mine)
        assert len({entries[t].session for t in mine}) == 1
        test_len = entries[dict(split.test)[subject]].seconds
        assert all(entries[t].seconds >= test_len for t in mine)


def test_synthetic_subjects_are_separable():
    """Nearest centroid on mean BR features of held-out takes beats chance by 5x."""
    from motionid.encoders import encode_br

    man, takes = synth_generate(10, 3, 60, fps=90, seed=0)
    feats = {}
    for t in takes:
        rows = encode_br(t).rows
        feats.setdefault(t.subject_id, []).append([r.mean(0) for r in np.array_split(rows, 6)])
    subjects = sorted(feats)
    centroids = np.array([np.concatenate(feats[s][1:]).mean(0) for s in subjects])
    tests = np.array([f for s in subjects for f in feats[s][0]])
    truth = np.repeat(np.arange(len(subjects)), 6)
    scale = np.concatenate([np.concatenate(feats[s][1:]) for s in subjects]).std(0) + 1e-9
    d = (((tests[:, None] - centroids[None]) / scale) ** 2).sum(-1)
    assert (d.argmin(1) == truth).mean() >= 5 * 0.1
