import math

import numpy as np
import pytest

from fedstyle.data import (
    Dataset,
    SplitSpec,
    generate_synthetic,
    load_csv,
    partition_dirichlet,
    partition_evenly,
    partition_sorted,
    pool,
    save_csv,
    split,
    synthetic_means,
)
from fedstyle.errors import InputError, ParseError


def _nearest_mean(x, means):
    return np.argmin(((x[:, None, :] - means[None]) ** 2).sum(-1), axis=1)


def test_zero_spread_collapses_to_class_means():
    ds = generate_synthetic(4, 10, 8, 0.0, seed=3)
    means = synthetic_means(4, 8, 3)
    np.testing.assert_array_equal(ds.x, means[ds.y])
    assert np.mean(_nearest_mean(ds.x, means) == ds.y) == 1.0
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 3.0, rtol=1e-12)


def test_synthetic_is_deterministic():
    a = generate_synthetic(3, 12, 5, 1.0, seed=9)
    b = generate_synthetic(3, 12, 5, 1.0, seed=9)
    c = generate_synthetic(3, 12, 5, 1.0, seed=10)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.x, c.x)


def test_synthetic_rejects_bad_arguments():
    with pytest.raises(InputError):
        generate_synthetic(1, 20, 4, 1.0, 0)
    with pytest.raises(InputError):
        generate_synthetic(3, 9, 4, 1.0, 0)
    with pytest.raises(InputError):
        generate_synthetic(3, 20, 4, -1.0, 0)


@pytest.mark.parametrize("seed", range(3))
def test_nearest_true_mean_accuracy_meets_union_bound(seed):
    # C=5, sigma=1, d=32: accuracy on fresh draws vs the pairwise-error union bound
    means = synthetic_means(5, 32, seed)
    rng = np.random.default_rng(500 + seed)
    y = np.repeat(np.arange(5), 4000)
    x = means[y] + rng.standard_normal((len(y), 32))
    acc = np.mean(_nearest_mean(x, means) == y)
    phi = lambda t: 0.5 * math.erfc(-t / math.sqrt(2))
    err_bound = np.mean([
        sum(phi(-np.linalg.norm(means[a] - means[b]) / 2) for b in range(5) if b != a)
        for a in range(5)
    ])
    se = math.sqrt(acc * (1 - acc) / len(y))
    assert acc >= 1 - err_bound - 3 * se
    assert acc >= 0.92


def test_synthetic_class_means_converge():
    n = 10_000
    ds = generate_synthetic(2, n, 6, 1.0, seed=1)
    means = synthetic_means(2, 6, 1)
    for c in range(2):
        emp = ds.x[ds.y == c].mean(axis=0)
        assert np.all(np.abs(emp - means[c]) < 5 * 1.0 / math.sqrt(n))


# CSV

def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_bytes(text.encode("utf-8"))
    return p


def test_load_csv_basic(tmp_path):
    ds = load_csv(_write(tmp_path, "label,f0,f1\n1,0.5,2\n0,-1,3e-2\n"))
    assert ds.num_classes == 2 and ds.dim == 2
    assert ds.y.tolist() == [1, 0]
    np.testing.assert_array_equal(ds.x, [[0.5, 2.0], [-1.0, 0.03]])


def test_load_csv_accepts_crlf(tmp_path):
    ds = load_csv(_write(tmp_path, "label,f0\r\n0,1\r\n2,3\r\n"))
    assert ds.num_classes == 3 and len(ds) == 2


@pytest.mark.parametrize(
    "body, line, fragment",
    [
        ("label,f0,f1\n", None, "no samples"),
        ("label,f0,f1\n0,1,2\n1,2\n", 3, "expected 3 fields"),
        ("label,f0\n0,1\n1,abc\n", 3, "non-numeric"),
        ("label,f0\n-1,1\n", 2, "negative label"),
        ("label,f0\nx,1\n", 2, "label"),
    ],
)
def test_load_csv_errors_name_line(tmp_path, body, line, fragment):
    with pytest.raises(ParseError, match=fragment) as info:
        load_csv(_write(tmp_path, body))
    assert info.value.line == line


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(3, 10, 4, 0.7, seed=2)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_csv(ds, p1)
    back = load_csv(p1)
    assert np.array_equal(back.x, ds.x) and np.array_equal(back.y, ds.y)
    save_csv(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


# split

def test_split_counts_match_80_20_and_10_percent_public():
    ds = generate_synthetic(3, 100, 4, 1.0, seed=0)
    sp = split(ds, SplitSpec(seed=1))
    for c in range(3):
        assert len(sp.train[c]) == 72
        assert len(sp.test[c]) == 20
    assert sp.public.class_counts().tolist() == [8, 8, 8]


def test_split_is_deterministic_and_disjoint():
    ds = generate_synthetic(3, 37, 4, 1.0, seed=0)
    ds = Dataset(ds.x + np.arange(len(ds))[:, None] * 1e-3, ds.y, 3)  # make rows unique
    a = split(ds, SplitSpec(seed=4))
    b = split(ds, SplitSpec(seed=4))
    for c in range(3):
        assert np.array_equal(a.train[c].x, b.train[c].x)
        rows = lambda d: {tuple(r) for r in d.x}
        tr, te, pub = rows(a.train[c]), rows(a.test[c]), rows(a.public.of_class(c))
        assert not (tr & te) and not (tr & pub) and not (te & pub)
        assert tr | te | pub == rows(ds.of_class(c))


def test_split_overlap_flag_keeps_public_in_train():
    ds = generate_synthetic(2, 100, 3, 1.0, seed=0)
    sp = split(ds, SplitSpec(public_overlaps_clients=True))
    assert len(sp.train[0]) == 80
    train_rows = {tuple(r) for r in sp.train[0].x}
    assert all(tuple(r) in train_rows for r in sp.public.of_class(0).x)


def test_split_rejects_tiny_class():
    ds = Dataset(np.zeros((7, 2)), np.array([0, 0, 0, 0, 1, 1, 1]), 2)
    with pytest.raises(InputError):
        split(ds, SplitSpec())
    with pytest.raises(InputError):
        SplitSpec(train_fraction=1.0)


# partitions

@pytest.fixture(scope="module")
def train_sets():
    return split(generate_synthetic(10, 200, 8, 1.0, seed=0), SplitSpec()).train


def _assert_cover(part, total):
    allix = np.concatenate(part.client_indices)
    assert len(allix) == total
    assert np.array_equal(np.sort(allix), np.arange(total))


def test_partition_sorted(train_sets):
    part = partition_sorted(train_sets[:3])
    p = pool(train_sets[:3])
    assert part.num_clients == 3
    for i, ix in enumerate(part.client_indices):
        assert set(p.y[ix].tolist()) == {i}
    _assert_cover(part, len(p))


def test_partition_dirichlet_huge_alpha_is_near_uniform(train_sets):
    part = partition_dirichlet(train_sets, 1e6, 10, seed=0)
    p = pool(train_sets)
    _assert_cover(part, len(p))
    for ix in part.client_indices:
        props = np.bincount(p.y[ix], minlength=10) / len(ix)
        assert np.all(np.abs(props - 0.1) <= 0.05)


@pytest.mark.parametrize("seed", range(10))
def test_partition_dirichlet_small_alpha_is_skewed(train_sets, seed):
    part = partition_dirichlet(train_sets, 0.1, 10, seed=seed)
    p = pool(train_sets)
    _assert_cover(part, len(p))
    assert min(part.sizes()) >= 1
    tops = [np.bincount(p.y[ix], minlength=10).max() / len(ix) for ix in part.client_indices]
    assert max(tops) > 0.5


def test_partition_dirichlet_repairs_empty_clients():
    tiny = [Dataset(np.zeros((3, 2)), np.full(3, c), 2) for c in range(2)]
    part = partition_dirichlet(tiny, 0.01, 6, seed=1)
    assert min(part.sizes()) >= 1
    _assert_cover(part, 6)


def _sized(n):
    return [Dataset(np.zeros((n, 1)), np.zeros(n, dtype=int), 1)]


def test_partition_evenly_sizes():
    assert partition_evenly(_sized(90), 3, seed=0).sizes() == [30, 30, 30]
    assert sorted(partition_evenly(_sized(91), 3, seed=0).sizes()) == [30, 30, 31]
    _assert_cover(partition_evenly(_sized(91), 3, seed=0), 91)


def test_partition_evenly_histograms_follow_multinomial(train_sets):
    p = pool(train_sets)
    part = partition_evenly(train_sets, 10, seed=0)
    global_frac = np.bincount(p.y, minlength=10) / len(p)
    for ix in part.client_indices:
        n = len(ix)
        hist = np.bincount(p.y[ix], minlength=10)
        sd = np.sqrt(n * global_frac * (1 - global_frac))
        assert np.all(np.abs(hist - n * global_frac) <= 3 * sd)


def test_partition_determinism(train_sets):
    a = partition_dirichlet(train_sets, 0.5, 5, seed=3)
    b = partition_dirichlet(train_sets, 0.5, 5, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.client_indices, b.client_indices))
