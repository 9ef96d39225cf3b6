"""Methylation datasets, M-value transform and window partitioning.

File formats (all tab-separated, with a header row):

- manifest: ``chrom  pos  cpg_id``, one row per CpG site, sorted.
- beta matrix: ``cpg_id  <sample> ...``; missing cells are ``NA``.
- groups: ``sample_id  group_label``; labels become k = 1..G in order of
  first appearance.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_OFFSET = 0.01
DEFAULT_MIN_WINDOW = 10


class DomainError(ValueError):
    """Input outside the domain of a transform."""


class SchemaError(ValueError):
    """Malformed input file; the message names the file and line."""


def m_transform(beta, c: float = DEFAULT_OFFSET):
    """Map methylation rates to M-values, ``log((beta + c) / (1 - beta + c))``.

    NaN entries (missing values) pass through unchanged.
    """
    if c < 0:
        raise DomainError(f"offset must be >= 0, got {c}")
    b = np.asarray(beta, dtype=float)
    observed = ~np.isnan(b)
    if np.any((b[observed] < 0.0) | (b[observed] > 1.0)):
        raise DomainError("methylation rates must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        out = np.log(b + c) - np.log(1.0 - b + c)
    if not np.all(np.isfinite(out[observed])):
        raise DomainError("M-value is not finite; use c > 0 when rates hit 0 or 1")
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class MethylationDataset:
    """Beta-value matrix (sites x samples) with its CpG manifest and grouping.

    ``groups`` holds the 1-based group index of every column of ``beta``;
    ``group_labels[k - 1]`` is the label of group k.
    """

    chrom: np.ndarray
    pos: np.ndarray
    cpg_id: np.ndarray
    beta: np.ndarray
    samples: tuple
    groups: np.ndarray
    group_labels: tuple

    def __post_init__(self):
        n_sites = len(self.pos)
        if self.beta.shape != (n_sites, len(self.samples)):
            raise ValueError(
                f"beta has shape {self.beta.shape}, expected ({n_sites}, {len(self.samples)})"
            )
        if not (len(self.chrom) == len(self.cpg_id) == n_sites):
            raise ValueError("manifest columns differ in length")
        if len(self.groups) != len(self.samples):
            raise ValueError("every sample needs exactly one group label")
        if len(set(self.samples)) != len(self.samples):
            raise ValueError("duplicate sample ids")
        obs = self.beta[~np.isnan(self.beta)]
        if np.any((obs < 0.0) | (obs > 1.0)):
            raise ValueError("beta values must lie in [0, 1]")
        g = np.asarray(self.groups)
        if len(g) and (g.min() < 1 or g.max() > len(self.group_labels)):
            raise ValueError("group indices must be in 1..G")
        _check_sorted(self.chrom, self.pos)

    @property
    def n_sites(self) -> int:
        return len(self.pos)

    @property
    def n_groups(self) -> int:
        return len(self.group_labels)

    def m_values(self, c: float = DEFAULT_OFFSET) -> np.ndarray:
        return m_transform(self.beta, c)

    def chromosomes(self) -> list:
        """Chromosome ids in manifest order."""
        seen = {}
        for ch in self.chrom:
            seen.setdefault(ch, None)
        return list(seen)


def _check_sorted(chrom, pos):
    # Strictly increasing (chrom, pos): each chromosome is one contiguous block
    # with increasing positions.
    seen = set()
    prev = None
    for i, (ch, p) in enumerate(zip(chrom, pos)):
        if ch != prev:
            if ch in seen:
                raise ValueError(f"chromosome {ch!r} is not contiguous (site {i})")
            seen.add(ch)
        elif p <= pos[i - 1]:
            raise ValueError(f"positions not strictly increasing at site {i} ({ch}:{p})")
        prev = ch


@dataclass(frozen=True)
class Window:
    """A block of consecutive sites on one chromosome.

    ``Y`` holds M-values (sites x samples), possibly with NaN for missing
    entries. Design points are the ordinal positions ``1..n``.
    """

    index: int
    chrom: str
    start_site: int
    stop_site: int
    start_pos: int
    end_pos: int
    Y: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.stop_site - self.start_site

    @property
    def x(self) -> np.ndarray:
        return np.arange(1.0, self.n + 1.0)


@dataclass(frozen=True)
class WindowSeries:
    windows: tuple
    samples: tuple
    groups: np.ndarray
    group_labels: tuple

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def __getitem__(self, i):
        return self.windows[i]


def _segment_sizes_fixed(n: int, k: int, min_size: int) -> list:
    sizes = [k] * (n // k)
    rem = n - k * len(sizes)
    if rem:
        sizes.append(rem)
    return _merge_short(sizes, min_size)


def _segment_sizes_gap(pos: np.ndarray, max_gap: float, min_size: int) -> list:
    if len(pos) == 0:
        return []
    breaks = np.flatnonzero(np.diff(pos) > max_gap) + 1
    bounds = np.concatenate([[0], breaks, [len(pos)]])
    return _merge_short(list(np.diff(bounds)), min_size)


def _merge_short(sizes: list, min_size: int) -> list:
    """Fold every segment shorter than ``min_size`` into its predecessor.

    A short leading segment is folded into its successor instead.
    """
    out = []
    for s in sizes:
        if out and s < min_size:
            out[-1] += s
        else:
            out.append(int(s))
    if len(out) > 1 and out[0] < min_size:
        out[1] += out[0]
        out.pop(0)
    return out


def partition_windows(
    dataset: MethylationDataset,
    fixed_count: int | None = None,
    max_gap: float | None = None,
    min_size: int = DEFAULT_MIN_WINDOW,
    c: float = DEFAULT_OFFSET,
) -> WindowSeries:
    """Split each chromosome's sites into consecutive analysis windows.

    Exactly one of ``fixed_count`` (sites per window) or ``max_gap`` (start a
    new window when neighbouring positions differ by more than this many bp)
    must be given. Segments shorter than ``min_size`` are merged into the
    preceding window. A chromosome with fewer than ``min_size`` sites in total
    cannot form a valid window and is skipped with a warning.
    """
    if (fixed_count is None) == (max_gap is None):
        raise ValueError("give exactly one of fixed_count or max_gap")
    if fixed_count is not None and fixed_count < min_size:
        raise ValueError(f"fixed_count {fixed_count} is below the minimum window size {min_size}")
    if max_gap is not None and max_gap <= 0:
        raise ValueError("max_gap must be positive")

    M = dataset.m_values(c)
    chrom = np.asarray(dataset.chrom)
    pos = np.asarray(dataset.pos)
    windows = []
    for ch in dataset.chromosomes():
        idx = np.flatnonzero(chrom == ch)
        lo = int(idx[0])
        if fixed_count is not None:
            sizes = _segment_sizes_fixed(len(idx), fixed_count, min_size)
        else:
            sizes = _segment_sizes_gap(pos[idx], max_gap, min_size)
        if sum(sizes) < min_size:
            logger.warning("chromosome %s has %d sites (< %d); skipped", ch, len(idx), min_size)
            continue
        start = lo
        for s in sizes:
            stop = start + s
            windows.append(
                Window(
                    index=len(windows) + 1,
                    chrom=str(ch),
                    start_site=start,
                    stop_site=stop,
                    start_pos=int(pos[start]),
                    end_pos=int(pos[stop - 1]),
                    Y=M[start:stop],
                )
            )
            start = stop
    return WindowSeries(tuple(windows), dataset.samples, dataset.groups, dataset.group_labels)


def impute_missing(Y: np.ndarray, samples: Sequence | None = None) -> np.ndarray:
    """Fill NaNs per sample (column) by linear interpolation on the design index.

    Values beyond the first/last observed site take the nearest observed value.
    """
    Y = np.asarray(Y, dtype=float)
    missing = np.isnan(Y)
    if not missing.any():
        return Y
    out = Y.copy()
    x = np.arange(Y.shape[0], dtype=float)
    for j in np.flatnonzero(missing.any(axis=0)):
        obs = ~missing[:, j]
        if obs.sum() < 2:
            name = samples[j] if samples is not None else j
            raise ValueError(f"sample {name!r} has fewer than 2 observed sites in the window")
        out[~obs, j] = np.interp(x[~obs], x[obs], Y[obs, j])
    return out


def group_means(Y: np.ndarray, groups: np.ndarray, k: int) -> np.ndarray:
    """Site-wise mean of the samples in group ``k`` (1-based)."""
    cols = np.asarray(groups) == k
    if not cols.any():
        raise ValueError(f"group {k} has no samples")
    sub = np.asarray(Y, dtype=float)[:, cols]
    if np.isnan(sub).any():
        raise ValueError("missing entries remain; impute before averaging")
    return sub.mean(axis=1)


# --- file IO ---------------------------------------------------------------


def _read_tsv(path, expected_header: Sequence[str] | None = None):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = rows[0]
    if expected_header is not None and header[: len(expected_header)] != list(expected_header):
        raise SchemaError(f"{path}:1: expected header {list(expected_header)}, got {header}")
    return header, rows[1:]


def read_dataset(manifest, beta, groups) -> MethylationDataset:
    """Load a dataset from manifest, beta-matrix and group files."""
    _, mrows = _read_tsv(manifest, ["chrom", "pos", "cpg_id"])
    chrom, pos, ids = [], [], []
    for ln, row in enumerate(mrows, start=2):
        if len(row) < 3:
            raise SchemaError(f"{manifest}:{ln}: expected 3 columns")
        try:
            p = int(row[1])
        except ValueError:
            raise SchemaError(f"{manifest}:{ln}: position {row[1]!r} is not an integer") from None
        chrom.append(row[0])
        pos.append(p)
        ids.append(row[2])

    header, brows = _read_tsv(beta)
    if not header or header[0] != "cpg_id":
        raise SchemaError(f"{beta}:1: first column must be cpg_id")
    samples = header[1:]
    values = {}
    for ln, row in enumerate(brows, start=2):
        if len(row) != len(header):
            raise SchemaError(f"{beta}:{ln}: expected {len(header)} columns, got {len(row)}")
        try:
            values[row[0]] = [np.nan if v in ("NA", "") else float(v) for v in row[1:]]
        except ValueError as e:
            raise SchemaError(f"{beta}:{ln}: {e}") from None
        v = np.asarray(values[row[0]])
        if np.any((v < 0) | (v > 1)):
            raise SchemaError(f"{beta}:{ln}: beta value outside [0, 1]")
    missing_ids = [c for c in ids if c not in values]
    if missing_ids:
        raise SchemaError(f"{beta}: no row for cpg_id {missing_ids[0]!r}")
    B = np.array([values[c] for c in ids], dtype=float).reshape(len(ids), len(samples))

    _, grows = _read_tsv(groups, ["sample_id", "group_label"])
    label_of = {}
    for ln, row in enumerate(grows, start=2):
        if len(row) < 2:
            raise SchemaError(f"{groups}:{ln}: expected 2 columns")
        if row[0] in label_of:
            raise SchemaError(f"{groups}:{ln}: sample {row[0]!r} listed twice")
        label_of[row[0]] = row[1]
    unlabeled = [s for s in samples if s not in label_of]
    if unlabeled:
        raise SchemaError(f"{groups}: sample {unlabeled[0]!r} has no group label")
    # Labels in first-appearance order, restricted to samples present in the matrix.
    present = {label_of[s] for s in samples}
    used = [lab for lab in dict.fromkeys(label_of.values()) if lab in present]
    g = np.array([used.index(label_of[s]) + 1 for s in samples], dtype=int)
    try:
        return MethylationDataset(
            chrom=np.asarray(chrom, dtype=object),
            pos=np.asarray(pos, dtype=np.int64),
            cpg_id=np.asarray(ids, dtype=object),
            beta=B,
            samples=tuple(samples),
            groups=g,
            group_labels=tuple(used),
        )
    except ValueError as e:
        raise SchemaError(f"{manifest}: {e}") from None


def _fmt(v: float) -> str:
    return "NA" if np.isnan(v) else repr(float(v))


def format_dataset(ds: MethylationDataset) -> tuple:
    """Render the manifest, beta and group files as text."""
    manifest = ["chrom\tpos\tcpg_id\n"]
    manifest += [f"{ch}\t{int(p)}\t{c}\n" for ch, p, c in zip(ds.chrom, ds.pos, ds.cpg_id)]
    beta = ["cpg_id\t" + "\t".join(ds.samples) + "\n"]
    beta += [c + "\t" + "\t".join(_fmt(v) for v in row) + "\n" for c, row in zip(ds.cpg_id, ds.beta)]
    groups = ["sample_id\tgroup_label\n"]
    groups += [f"{s}\t{ds.group_labels[k - 1]}\n" for s, k in zip(ds.samples, ds.groups)]
    return "".join(manifest), "".join(beta), "".join(groups)


def write_dataset(ds: MethylationDataset, directory, prefix: str = "") -> list:
    """Write manifest, beta and group files; returns the paths written."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / f"{prefix}manifest.tsv", d / f"{prefix}beta.tsv", d / f"{prefix}groups.tsv"]
    for path, text in zip(paths, format_dataset(ds)):
        path.write_text(text)
    return paths
