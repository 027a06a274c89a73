"""Two-domain datasets: synthetic generators and the ``TSDA v1`` text format.

Target datasets follow the labeled-prefix convention: only the first
``labeled_prefix`` samples carry labels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

CLASSIFICATION = "classification"
REGRESSION = "regression"
MAGIC = "TSDA v1"


class DatasetFormatError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


@dataclass
class DomainDataset:
    """Features plus labels for the leading ``len(labels)`` samples.

    ``labels`` is int64 of shape (N_l,) for classification and float64 of
    shape (N_l, d) for regression.
    """

    task: str
    n_outputs: int
    features: np.ndarray
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.task not in (CLASSIFICATION, REGRESSION):
            raise ValueError(f"unknown task {self.task!r}")
        if self.n_outputs < 1:
            raise ValueError("n_outputs must be positive")
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim < 2:
            raise ValueError("features need a leading sample axis and a feature shape")
        if self.labels is None:
            self.labels = self._empty_labels()
        if self.task == CLASSIFICATION:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_outputs):
                raise ValueError(f"class label outside [0, {self.n_outputs})")
        else:
            self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1, self.n_outputs)
        if len(self.labels) > len(self.features):
            raise ValueError("more labels than samples")

    def _empty_labels(self):
        if self.task == CLASSIFICATION:
            return np.zeros(0, dtype=np.int64)
        return np.zeros((0, self.n_outputs))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def labeled_prefix(self) -> int:
        return len(self.labels)

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.features.shape[1:])

    @property
    def fully_labeled(self) -> bool:
        return self.labeled_prefix == len(self)

    def label(self, i: int):
        """Label of sample ``i`` or ``None`` when it lies past the labeled prefix."""
        return self.labels[i] if i < self.labeled_prefix else None

    def with_labeled_prefix(self, m: int) -> "DomainDataset":
        if not 0 <= m <= self.labeled_prefix:
            raise ValueError(f"labeled prefix {m} outside [0, {self.labeled_prefix}]")
        return DomainDataset(self.task, self.n_outputs, self.features, self.labels[:m])

    def equals(self, other: "DomainDataset") -> bool:
        return (
            self.task == other.task
            and self.n_outputs == other.n_outputs
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
            and self.labels.shape == other.labels.shape
            and self.labels.tobytes() == other.labels.tobytes()
        )


def holdout_split(dataset: DomainDataset, fraction: float = 0.2):
    """Split off the trailing ``fraction`` of samples as an evaluation pool.

    The leading part keeps the labeled prefix; the pool is returned unlabeled
    unless the prefix reaches into it.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("holdout fraction must lie in (0, 1)")
    n = len(dataset)
    cut = n - max(1, int(round(n * fraction)))
    if cut < 1:
        raise ValueError(f"dataset of {n} samples is too small to split")
    m = dataset.labeled_prefix
    train = DomainDataset(dataset.task, dataset.n_outputs, dataset.features[:cut], dataset.labels[: min(m, cut)])
    pool_labels = dataset.labels[cut:m] if m > cut else None
    pool = DomainDataset(dataset.task, dataset.n_outputs, dataset.features[cut:], pool_labels)
    return train, pool


# ---------------------------------------------------------------------------
# generators


def _moons(n: int, noise_sd: float, rng: np.random.Generator):
    n_a = n // 2 + n % 2
    n_b = n // 2
    t = rng.uniform(0.0, math.pi, size=n)
    x = np.empty((n, 2))
    x[:n_a, 0] = np.cos(t[:n_a])
    x[:n_a, 1] = np.sin(t[:n_a])
    x[n_a:, 0] = 1.0 - np.cos(t[n_a:])
    x[n_a:, 1] = 0.5 - np.sin(t[n_a:])
    y = np.concatenate([np.zeros(n_a, dtype=np.int64), np.ones(n_b, dtype=np.int64)])
    x += rng.normal(0.0, noise_sd, size=x.shape) if noise_sd > 0 else 0.0
    order = rng.permutation(n)
    return x[order], y[order]


def gen_two_moons_shift(
    n_per_domain: int,
    noise_sd: float = 0.1,
    rotation_deg: float = 30.0,
    translation: Sequence[float] = (1.0, 0.0),
    scale: float = 1.0,
    seed: int = 0,
    n_labeled_target: Optional[int] = None,
):
    """Two-moons source domain and its affinely shifted target twin.

    The target is the same draw pushed through ``x -> scale * R x + translation``
    with ``R`` a rotation about the origin. ``n_labeled_target`` limits the
    target's labeled prefix (default: fully labeled).
    """
    if n_per_domain < 4:
        raise ValueError("two-moons needs at least 4 samples per domain")
    if noise_sd < 0:
        raise ValueError("noise_sd must be nonnegative")
    if scale <= 0:
        raise ValueError("scale must be positive")
    translation = np.asarray(translation, dtype=np.float64)
    if translation.shape != (2,):
        raise ValueError("translation must be a 2-vector")
    rng = np.random.default_rng(seed)
    x, y = _moons(n_per_domain, noise_sd, rng)
    th = math.radians(rotation_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    if rotation_deg == 0 and scale == 1 and not translation.any():
        xt = x.copy()
    else:
        xt = scale * (x @ rot.T) + translation
    m = n_per_domain if n_labeled_target is None else n_labeled_target
    source = DomainDataset(CLASSIFICATION, 2, x, y)
    target = DomainDataset(CLASSIFICATION, 2, xt, y[:m])
    return source, target


def _templates(grid: int) -> list[np.ndarray]:
    """Three binary shapes drawn on a (grid - 2) canvas: bar, column, ring."""
    s = grid - 2
    mid = s // 2
    bar = np.zeros((s, s))
    bar[mid - 1 : mid + 1, 1 : s - 1] = 1.0
    col = np.zeros((s, s))
    col[1 : s - 1, mid - 1 : mid + 1] = 1.0
    ring = np.zeros((s, s))
    ring[1 : s - 1, 1 : s - 1] = 1.0
    ring[2 : s - 2, 2 : s - 2] = 0.0
    return [bar, col, ring]


def gen_intensity_shift_patterns(
    n_per_domain: int,
    grid: int = 8,
    intensity_gain: float = 2.0,
    intensity_offset: float = 0.3,
    noise_sd: float = 0.15,
    seed: int = 0,
    n_labeled_target: Optional[int] = None,
):
    """Single-channel template images and a globally re-lit target domain.

    Each sample is one of three shapes jittered inside a ``grid x grid``
    canvas. Source pixels are ``clean + noise``; target pixels are
    ``gain * clean + offset + noise``; both clamped to [0, 1]. The two
    domains draw independent noise, so even an identity re-lighting leaves a
    sampling difference between them.
    """
    if grid < 4:
        raise ValueError("grid must be at least 4")
    if intensity_gain <= 0:
        raise ValueError("intensity_gain must be positive")
    if noise_sd < 0 or n_per_domain < 1:
        raise ValueError("need n_per_domain >= 1 and noise_sd >= 0")
    rng = np.random.default_rng(seed)
    shapes = _templates(grid)
    k = len(shapes)
    labels = np.arange(n_per_domain, dtype=np.int64) % k
    labels = labels[rng.permutation(n_per_domain)]
    clean = np.full((n_per_domain, 1, grid, grid), 0.1)
    offs = rng.integers(0, 3, size=(n_per_domain, 2))
    contrast = rng.uniform(0.4, 0.6, size=n_per_domain)
    s = grid - 2
    for i in range(n_per_domain):
        dy, dx = offs[i]
        clean[i, 0, dy : dy + s, dx : dx + s] += contrast[i] * shapes[labels[i]]
    noise_s = rng.normal(0.0, noise_sd, size=clean.shape) if noise_sd > 0 else 0.0
    noise_t = rng.normal(0.0, noise_sd, size=clean.shape) if noise_sd > 0 else 0.0
    xs = np.clip(clean + noise_s, 0.0, 1.0)
    xt = np.clip(intensity_gain * clean + intensity_offset + noise_t, 0.0, 1.0)
    m = n_per_domain if n_labeled_target is None else n_labeled_target
    return (
        DomainDataset(CLASSIFICATION, k, xs, labels),
        DomainDataset(CLASSIFICATION, k, xt, labels[:m]),
    )


# ---------------------------------------------------------------------------
# file format


def _fmt(v: float) -> str:
    return repr(float(v))


def write_dataset(dataset: DomainDataset, path) -> None:
    n = len(dataset)
    shape = "x".join(str(d) for d in dataset.feature_shape)
    task = f"{dataset.task}:{dataset.n_outputs}"
    lines = [MAGIC, f"task={task} shape={shape} count={n} labeled_prefix={dataset.labeled_prefix}"]
    flat = dataset.features.reshape(n, -1)
    for i in range(n):
        if i < dataset.labeled_prefix:
            if dataset.task == CLASSIFICATION:
                lab = str(int(dataset.labels[i]))
            else:
                lab = ",".join(_fmt(v) for v in dataset.labels[i])
        else:
            lab = "?"
        lines.append(lab + "|" + ",".join(_fmt(v) for v in flat[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_header(line: str, path):
    fields = {}
    for tok in line.split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise DatasetFormatError(f"malformed header token {tok!r}", 2, path)
        fields[key] = val
    missing = {"task", "shape", "count", "labeled_prefix"} - fields.keys()
    if missing:
        raise DatasetFormatError(f"header missing {sorted(missing)}", 2, path)
    kind, _, dim = fields["task"].partition(":")
    try:
        n_out = int(dim)
        shape = tuple(int(d) for d in fields["shape"].split("x"))
        count = int(fields["count"])
        prefix = int(fields["labeled_prefix"])
    except ValueError as exc:
        raise DatasetFormatError(f"non-integer header value ({exc})", 2, path) from None
    if kind not in (CLASSIFICATION, REGRESSION) or n_out < 1:
        raise DatasetFormatError(f"bad task {fields['task']!r}", 2, path)
    if not shape or min(shape) < 1 or count < 0 or not 0 <= prefix <= count:
        raise DatasetFormatError("inconsistent shape/count/labeled_prefix", 2, path)
    return kind, n_out, shape, count, prefix


def read_dataset(path) -> DomainDataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DatasetFormatError(f"not UTF-8 text ({exc})", None, path) from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise DatasetFormatError(f"expected first line {MAGIC!r}", 1, path)
    if len(lines) < 2:
        raise DatasetFormatError("missing header line", 2, path)
    kind, n_out, shape, count, prefix = _parse_header(lines[1], path)
    body = lines[2:]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != count:
        raise DatasetFormatError(
            f"header declares {count} samples but body has {len(body)} rows",
            2 + len(body) + 1,
            path,
        )
    width = int(np.prod(shape))
    feats = np.empty((count, width))
    labels = []
    for i, row in enumerate(body):
        lineno = i + 3
        lab, sep, vals = row.partition("|")
        if not sep:
            raise DatasetFormatError("row lacks the '|' label separator", lineno, path)
        try:
            cells = [float(v) for v in vals.split(",")]
        except ValueError as exc:
            raise DatasetFormatError(f"non-numeric feature cell ({exc})", lineno, path) from None
        if len(cells) != width:
            raise DatasetFormatError(f"expected {width} features, found {len(cells)}", lineno, path)
        feats[i] = cells
        lab = lab.strip()
        if i < prefix:
            if lab == "?":
                raise DatasetFormatError("unlabeled row inside the labeled prefix", lineno, path)
            try:
                if kind == CLASSIFICATION:
                    y = int(lab)
                    if not 0 <= y < n_out:
                        raise ValueError(f"class {y} outside [0, {n_out})")
                    labels.append(y)
                else:
                    y = [float(v) for v in lab.split(",")]
                    if len(y) != n_out:
                        raise ValueError(f"expected {n_out} target values, found {len(y)}")
                    labels.append(y)
            except ValueError as exc:
                raise DatasetFormatError(f"bad label {lab!r} ({exc})", lineno, path) from None
        elif lab != "?":
            raise DatasetFormatError("labeled row after the labeled prefix", lineno, path)
    if kind == CLASSIFICATION:
        lab_arr = np.asarray(labels, dtype=np.int64)
    else:
        lab_arr = np.asarray(labels, dtype=np.float64).reshape(-1, n_out)
    return DomainDataset(kind, n_out, feats.reshape((count,) + shape), lab_arr)
