import numpy as np
import pytest

from repcali.tasks import (
    Dataset,
    TaskSpec,
    generate_task,
    load_split,
    save_dataset,
    target_for,
)


def small_spec(**kw):
    defaults = dict(kind="copy", vocab=16, len_min=3, len_max=6,
                    n_train=64, n_dev=16, n_test=16, seed=7)
    defaults.update(kw)
    return TaskSpec(**defaults)


def test_targets_by_construction():
    src = np.array([5, 6, 7])
    assert np.array_equal(target_for("copy", src), [5, 6, 7])
    assert np.array_equal(target_for("reverse", src), [7, 6, 5])
    assert np.array_equal(target_for("sort", np.array([9, 4, 4, 7])), [4, 4, 7, 9])


def test_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(kind="shuffle")
    with pytest.raises(ValueError):
        TaskSpec(vocab=4)
    with pytest.raises(ValueError):
        TaskSpec(len_min=5, len_max=4)


def test_generation_deterministic_and_disjoint():
    spec = small_spec()
    d1 = generate_task(spec)
    d2 = generate_task(spec)
    for name in ("train", "dev", "test"):
        a, b = d1.split(name), d2.split(name)
        assert len(a) == len(b)
        assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1])
                   for x, y in zip(a, b))
    keys = [src.tobytes() for split in (d1.train, d1.dev, d1.test) for src, _ in split]
    assert len(keys) == len(set(keys))


def test_generation_respects_sizes_lengths_and_alphabet():
    spec = small_spec(kind="sort")
    data = generate_task(spec)
    assert (len(data.train), len(data.dev), len(data.test)) == (64, 16, 16)
    for src, tgt in data.train:
        assert spec.len_min <= len(src) <= spec.len_max
        assert src.min() >= 4 and src.max() < spec.vocab
        assert np.array_equal(tgt, np.sort(src))


def test_infeasible_disjointness_rejected():
    # 1 payload symbol, lengths 1..2 -> only 2 distinct sources
    with pytest.raises(ValueError):
        generate_task(TaskSpec(kind="copy", vocab=5, len_min=1, len_max=2,
                               n_train=2, n_dev=1, n_test=1, seed=0))


def test_dataset_roundtrip(tmp_path):
    spec = small_spec(kind="reverse")
    data = generate_task(spec)
    paths = save_dataset(tmp_path, data)
    assert [p.name for p in paths] == ["train.txt", "dev.txt", "test.txt"]
    fields, examples = load_split(tmp_path / "dev.txt")
    assert fields["kind"] == "reverse"
    assert fields["split"] == "dev"
    assert fields["sizes"] == "64/16/16"
    assert len(examples) == len(data.dev)
    for (s1, t1), (s2, t2) in zip(examples, data.dev):
        assert np.array_equal(s1, s2) and np.array_equal(t1, t2)


def test_dataset_files_byte_identical_across_runs(tmp_path):
    spec = small_spec()
    save_dataset(tmp_path / "a", generate_task(spec))
    save_dataset(tmp_path / "b", generate_task(spec))
    for name in ("train.txt", "dev.txt", "test.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_rejects_malformed(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("5 6\t7 8\n")
    with pytest.raises(ValueError):
        load_split(p)  # missing header
    p.write_text("# kind=copy\n5 6 only\n")
    with pytest.raises(ValueError):
        load_split(p)


def test_split_accessor():
    data = generate_task(small_spec())
    assert isinstance(data, Dataset)
    with pytest.raises(KeyError):
        data.split("validation")
