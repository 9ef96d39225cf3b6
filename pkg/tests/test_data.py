import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bfdmr.data import (DomainError, MethylationDataset, SchemaError, group_means, impute_missing,
                        m_transform, partition_windows, read_dataset, write_dataset)


def make_dataset(pos, chrom=None, n_samples=3, seed=0):
    pos = np.asarray(pos)
    r = np.random.default_rng(seed)
    chrom = np.array(["chr1"] * len(pos) if chrom is None else chrom, dtype=object)
    return MethylationDataset(
        chrom=chrom, pos=pos, cpg_id=np.array([f"cg{i}" for i in range(len(pos))], dtype=object),
        beta=r.uniform(0.05, 0.95, (len(pos), n_samples)),
        samples=tuple(f"s{j}" for j in range(n_samples)),
        groups=np.array([1 + (j % 2) for j in range(n_samples)]),
        group_labels=("a", "b"),
    )


@pytest.mark.parametrize("beta,expected", [
    (0.5, 0.0),
    (0.99, math.log(50.0)),
    (0.0, math.log(0.01 / 1.01)),
])
def test_m_transform_examples(beta, expected):
    assert m_transform(beta, 0.01) == pytest.approx(expected, abs=1e-12)


def test_m_transform_domain():
    with pytest.raises(DomainError):
        m_transform(1.2)
    with pytest.raises(DomainError):
        m_transform(0.0, c=0.0)
    assert np.isnan(m_transform(np.array([np.nan, 0.5]))[0])


@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-4, 1.0))
def test_m_transform_monotone_and_antisymmetric(b1, b2, c):
    if b1 < b2:
        assert m_transform(b1, c) < m_transform(b2, c)
    assert m_transform(b1, c) == pytest.approx(-m_transform(1 - b1, c), abs=1e-9)


def test_partition_fixed_examples():
    ws = partition_windows(make_dataset(np.arange(1, 251) * 10), fixed_count=100)
    assert [w.n for w in ws] == [100, 100, 50]
    ws = partition_windows(make_dataset(np.arange(1, 101) * 10), fixed_count=100)
    assert [w.n for w in ws] == [100]


def test_partition_short_tail_merges():
    ws = partition_windows(make_dataset(np.arange(1, 206)), fixed_count=100)
    assert [w.n for w in ws] == [100, 105]


def test_partition_max_gap_example():
    ws = partition_windows(make_dataset([1, 2, 5000]), max_gap=1000, min_size=2)
    assert [w.n for w in ws] == [3]
    assert (ws[0].start_pos, ws[0].end_pos) == (1, 5000)


def test_partition_design_points_and_coverage():
    ds = make_dataset(list(range(1, 31)) + list(range(1, 26)), chrom=["chr1"] * 30 + ["chr2"] * 25)
    ws = partition_windows(ds, fixed_count=10)
    assert sum(w.n for w in ws) == 55
    assert [w.chrom for w in ws] == ["chr1"] * 3 + ["chr2"] * 2
    np.testing.assert_array_equal(ws[0].x, np.arange(1.0, 11.0))
    starts = [w.start_site for w in ws]
    stops = [w.stop_site for w in ws]
    assert starts[1:] == stops[:-1]


def test_partition_skips_tiny_chromosome(caplog):
    ds = make_dataset(list(range(1, 21)) + [1, 2, 3], chrom=["chr1"] * 20 + ["chr2"] * 3)
    ws = partition_windows(ds, fixed_count=10)
    assert all(w.chrom == "chr1" for w in ws)
    assert "chr2" in caplog.text


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 400), st.integers(10, 60))
def test_partition_sizes_sum(n, k):
    ws = partition_windows(make_dataset(np.arange(1, n + 1)), fixed_count=k)
    assert sum(w.n for w in ws) == n
    assert all(w.n >= 10 for w in ws)


def test_impute_examples():
    Y = np.array([[0.0, np.nan], [np.nan, 5.0], [2.0, 6.0]])
    out = impute_missing(Y)
    assert out[1, 0] == 1.0
    assert out[0, 1] == 5.0
    Z = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(impute_missing(Z), Z)


def test_impute_names_sample():
    Y = np.array([[np.nan, 1.0], [np.nan, 2.0], [1.0, 3.0]])
    with pytest.raises(ValueError, match="sA"):
        impute_missing(Y, ["sA", "sB"])


def test_group_means():
    Y = np.array([[1.0, 3.0, 7.0]])
    g = np.array([1, 1, 2])
    assert group_means(Y, g, 1)[0] == 2.0
    assert group_means(Y, g, 2)[0] == 7.0
    with pytest.raises(ValueError):
        group_means(np.array([[np.nan, 1.0, 2.0]]), g, 1)
    perm = [1, 0, 2]
    assert group_means(Y[:, perm], g[perm], 1)[0] == 2.0


def test_roundtrip_and_schema_errors(tmp_path):
    ds = make_dataset(np.arange(1, 21) * 5, n_samples=4)
    m, b, g = write_dataset(ds, tmp_path)
    back = read_dataset(m, b, g)
    np.testing.assert_allclose(back.beta, ds.beta)
    assert back.samples == ds.samples
    assert back.group_labels == ("a", "b")
    lines = b.read_text().splitlines()
    lines[3] = lines[3].rsplit("\t", 1)[0] + "\t1.7"
    b.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError, match=r"beta.tsv:4"):
        read_dataset(m, b, g)


def test_unsorted_sites_rejected():
    with pytest.raises(ValueError):
        make_dataset([5, 3, 9])
