"""Source pre-training followed by joint two-stream optimization."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .data import CLASSIFICATION, DomainDataset
from .losses import COUPLING_FORMS, EXPONENTIAL, MULTICLASS_HINGE, coupling_loss, is_classification, mmd2, task_loss
from .metrics import accuracy
from .optim import AdaDelta
from .twostream import StreamPair, flat_params, init_target_from_source, predict

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# where the MMD regularizer reads the representation: the head's output or its input
MMD_TAPS = ("output", "head_input")


@dataclass
class TrainConfig:
    lambda_w: float = 1.0
    lambda_u: float = 1.0
    sigma: float = 1.0
    coupling_form: str = EXPONENTIAL
    batch_size_source: int = 32
    batch_size_target: int = 32
    epochs_pretrain: int = 30
    epochs_joint: int = 100
    seed: int = 0
    task: str = MULTICLASS_HINGE
    rho: float = 0.95
    epsilon: float = 1e-6
    mmd_on: str = "output"

    def __post_init__(self):
        if self.lambda_w < 0 or self.lambda_u < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.coupling_form not in COUPLING_FORMS:
            raise ValueError(f"unknown coupling form {self.coupling_form!r}")
        if self.batch_size_source < 1 or self.batch_size_target < 1:
            raise ValueError("batch sizes must be positive")
        if self.epochs_pretrain < 0 or self.epochs_joint < 0:
            raise ValueError("epoch counts must be nonnegative")
        is_classification(self.task)
        if self.mmd_on not in MMD_TAPS:
            raise ValueError(f"mmd_on must be one of {MMD_TAPS}")


@dataclass
class StepRecord:
    l_s: float
    l_t: Optional[float]
    r_w: float
    mmd2: Optional[float]
    total: float


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    l_s: float
    l_t: Optional[float]
    r_w: float
    mmd2: Optional[float]
    l_w: float
    l_mmd: float
    total: float
    source_acc: Optional[float] = None
    target_acc: Optional[float] = None


CSV_COLUMNS = ("phase", "epoch", "L_s", "L_t", "r_w", "mmd2", "L_w", "L_MMD", "total", "source_acc", "target_acc")


@dataclass
class RunReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0

    def extend(self, other: "RunReport") -> "RunReport":
        self.epochs += other.epochs
        self.steps += other.steps
        self.metrics.update(other.metrics)
        self.seconds += other.seconds
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.epochs:
            w.writerow([_cell(v) for v in asdict(r).values()])
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class BatchSampler:
    """Uniform mini-batches without replacement; reshuffles once an epoch is used up.

    A trailing remainder smaller than ``batch_size`` is dropped before the
    reshuffle so every batch has the requested size.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise ValueError("cannot sample from an empty dataset")
        if batch_size > n:
            raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > len(self._order):
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def sample_batch(dataset: DomainDataset, batch_size: int, rng: np.random.Generator):
    """One batch of ``(features, indices)`` drawn without replacement."""
    idx = BatchSampler(len(dataset), batch_size, rng).next()
    return dataset.features[idx], idx


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


SOURCE_STREAM = 1
TARGET_STREAM = 2


def _check_task(dataset: DomainDataset, cfg: TrainConfig) -> None:
    if is_classification(cfg.task) != (dataset.task == CLASSIFICATION):
        raise ValueError(f"task loss {cfg.task} does not fit a {dataset.task} dataset")


def _forward(pair: StreamPair, which: str, x: np.ndarray):
    params = pair.stream(which)
    feats, body = T.network_forward(pair.specs[:-1], params[:-1], x)
    scores, head = T.layer_forward(pair.specs[-1], params[-1], feats)
    return feats, scores, (body, head)


def _backward(pair: StreamPair, which: str, caches, g_scores, g_feats=None):
    params = pair.stream(which)
    body, head = caches
    g_in, head_grad = T.layer_backward(pair.specs[-1], params[-1], head, g_scores)
    if g_feats is not None:
        g_in = g_in + g_feats
    _, body_grads = T.network_backward(pair.specs[:-1], params[:-1], body, g_in)
    return body_grads + [head_grad]


def _accumulate(grads: dict, pair: StreamPair, which: str, layer_grads) -> None:
    for j, i in enumerate(pair.param_layers):
        tag = f"L{j}" if pair.is_shared(j) else f"L{j}.{which[0]}"
        g = layer_grads[i]
        for suffix, arr in (("W", g.weights), ("b", g.biases)):
            name = f"{tag}.{suffix}"
            if name in grads:
                grads[name] = grads[name] + arr
            else:
                grads[name] = arr


def evaluate_stream(pair: StreamPair, which: str, dataset: DomainDataset) -> Optional[float]:
    """Accuracy of one stream over the labeled prefix; ``None`` if undefined."""
    m = dataset.labeled_prefix
    if dataset.task != CLASSIFICATION or m == 0:
        return None
    scores = predict(pair, which, dataset.features[:m])
    return accuracy(scores.argmax(axis=1), dataset.labels)


def pretrain_source(pair: StreamPair, source: DomainDataset, cfg: TrainConfig):
    """Minimize the source task loss alone, touching only source-stream parameters."""
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    if not source.fully_labeled:
        raise ValueError("source data must be fully labeled")
    _check_task(source, cfg)
    t0 = time.perf_counter()
    report = RunReport()
    params = pair.source_parameters()
    opt = AdaDelta(cfg.rho, cfg.epsilon)
    sampler = BatchSampler(len(source), min(cfg.batch_size_source, len(source)), _rng(cfg.seed, SOURCE_STREAM))
    steps = max(1, len(source) // sampler.batch_size)
    for epoch in range(cfg.epochs_pretrain):
        losses = []
        for _ in range(steps):
            idx = sampler.next()
            _, scores, caches = _forward(pair, "source", source.features[idx])
            l_s, g_scores = task_loss(cfg.task, scores, source.labels[idx])
            if not math.isfinite(l_s):
                raise TrainingError(f"non-finite source loss at pretrain epoch {epoch}")
            grads: dict = {}
            _accumulate(grads, pair, "source", _backward(pair, "source", caches, g_scores))
            opt.step(params, grads)
            losses.append(l_s)
            report.steps.append(StepRecord(l_s, None, 0.0, None, l_s))
        l_s = float(np.mean(losses))
        report.epochs.append(
            EpochRecord("pretrain", epoch, l_s, None, 0.0, None, 0.0, 0.0, l_s, evaluate_stream(pair, "source", source))
        )
        log.debug("pretrain epoch %d: L_s=%.5f", epoch, l_s)
    report.seconds = time.perf_counter() - t0
    return pair, report


def joint_step(pair: StreamPair, xs, ys, xt, yt_labeled, cfg: TrainConfig):
    """Loss terms and gradients of the full objective for one pair of batches.

    ``yt_labeled`` holds labels for the leading rows of ``xt``; it may be empty.
    Returns ``(StepRecord, grads)`` with ``grads`` keyed like
    ``StreamPair.named_parameters``.
    """
    n_lab = len(yt_labeled)
    grads: dict = {}

    fs, scores_s, caches_s = _forward(pair, "source", xs)
    l_s, g_scores_s = task_loss(cfg.task, scores_s, ys)

    l_t = None
    mmd_val = None
    g_fs = g_ft = None
    target_active = len(xt) > 0
    mmd_grad_t = False
    if target_active:
        ft, scores_t, caches_t = _forward(pair, "target", xt)
        g_scores_t = np.zeros_like(scores_t)
        if n_lab:
            l_t, g_lab = task_loss(cfg.task, scores_t[:n_lab], yt_labeled)
            g_scores_t[:n_lab] = g_lab
        on_output = cfg.mmd_on == "output"
        mmd_val, g_fs, g_ft = mmd2(scores_s, scores_t, cfg.sigma) if on_output else mmd2(fs, ft, cfg.sigma)
        if cfg.lambda_u == 0:
            g_fs = g_ft = None
        elif on_output:
            g_scores_s = g_scores_s + cfg.lambda_u * g_fs
            g_scores_t = g_scores_t + cfg.lambda_u * g_ft
            g_fs = g_ft = None
            mmd_grad_t = True
        else:
            g_fs = cfg.lambda_u * g_fs
            g_ft = cfg.lambda_u * g_ft
    elif cfg.lambda_u > 0:
        raise TrainingError("MMD weight is positive but the target batch is empty")

    _accumulate(grads, pair, "source", _backward(pair, "source", caches_s, g_scores_s, g_fs))
    if target_active and (n_lab or g_ft is not None or mmd_grad_t):
        _accumulate(grads, pair, "target", _backward(pair, "target", caches_t, g_scores_t, g_ft))

    r_w = 0.0
    for j in pair.omega:
        i = pair.param_layers[j]
        c = pair.couplings[j]
        ps, pt = pair.source[i], pair.target[i]
        val, d_s, d_t, d_a, d_b = coupling_loss(cfg.coupling_form, c.a[0], c.b[0], flat_params(ps), flat_params(pt))
        r_w += val
        lw = cfg.lambda_w
        nw = ps.weights.size
        for stream, d in (("s", d_s), ("t", d_t)):
            for suffix, part, shape in (("W", d[:nw], ps.weights.shape), ("b", d[nw:], ps.biases.shape)):
                name = f"L{j}.{stream}.{suffix}"
                g = lw * part.reshape(shape)
                grads[name] = grads[name] + g if name in grads else g
        grads[f"L{j}.a"] = np.array([lw * d_a])
        grads[f"L{j}.b_shift"] = np.array([lw * d_b])

    total = l_s
    if l_t is not None:
        total += l_t
    total += cfg.lambda_w * r_w
    if mmd_val is not None:
        total += cfg.lambda_u * mmd_val
    return StepRecord(l_s, l_t, r_w, mmd_val, total), grads


def joint_train(pair: StreamPair, source: DomainDataset, target: DomainDataset, cfg: TrainConfig):
    """Jointly optimize both streams on mini-batches of the full objective.

    Each step draws a source batch and a target batch. The target task loss
    uses whichever batch rows fall inside the labeled prefix; with none it is
    simply omitted for that step.
    """
    if len(source) == 0:
        raise ValueError("source dataset is empty")
    if not source.fully_labeled:
        raise ValueError("source data must be fully labeled")
    _check_task(source, cfg)
    if target.task != source.task or target.n_outputs != source.n_outputs:
        raise ValueError("source and target datasets describe different tasks")
    if len(target) == 0 and cfg.lambda_u > 0:
        raise TrainingError("MMD weight is positive but the target dataset is empty")
    t0 = time.perf_counter()
    report = RunReport()
    params = pair.named_parameters()
    opt = AdaDelta(cfg.rho, cfg.epsilon)
    s_sampler = BatchSampler(len(source), min(cfg.batch_size_source, len(source)), _rng(cfg.seed, SOURCE_STREAM))
    t_sampler = (
        BatchSampler(len(target), min(cfg.batch_size_target, len(target)), _rng(cfg.seed, TARGET_STREAM))
        if len(target)
        else None
    )
    steps = max(1, len(source) // s_sampler.batch_size)
    n_lab_total = target.labeled_prefix
    empty_t = np.zeros((0,) + target.feature_shape)
    for epoch in range(cfg.epochs_joint):
        recs = []
        for _ in range(steps):
            si = s_sampler.next()
            if t_sampler is not None:
                ti = t_sampler.next()
                # labeled rows first so the target loss sees a contiguous block
                ti = np.concatenate([ti[ti < n_lab_total], ti[ti >= n_lab_total]])
                xt = target.features[ti]
                yt = target.labels[ti[ti < n_lab_total]]
            else:
                xt, yt = empty_t, target.labels[:0]
            rec, grads = joint_step(pair, source.features[si], source.labels[si], xt, yt, cfg)
            if not math.isfinite(rec.total):
                raise TrainingError(
                    f"non-finite loss at joint epoch {epoch}: L_s={rec.l_s} L_t={rec.l_t} r_w={rec.r_w} mmd2={rec.mmd2}"
                )
            opt.step(params, grads)
            recs.append(rec)
        report.steps += recs
        report.epochs.append(_summarize(epoch, recs, cfg, pair, source, target))
        log.debug("joint epoch %d: total=%.5f", epoch, report.epochs[-1].total)
    report.seconds = time.perf_counter() - t0
    return pair, report


def _summarize(epoch, recs, cfg, pair, source, target) -> EpochRecord:
    l_s = float(np.mean([r.l_s for r in recs]))
    lt = [r.l_t for r in recs if r.l_t is not None]
    l_t = float(np.mean(lt)) if lt else None
    r_w = float(np.mean([r.r_w for r in recs]))
    mm = [r.mmd2 for r in recs if r.mmd2 is not None]
    mmd = float(np.mean(mm)) if mm else None
    total = float(np.mean([r.total for r in recs]))
    return EpochRecord(
        "joint",
        epoch,
        l_s,
        l_t,
        r_w,
        mmd,
        cfg.lambda_w * r_w,
        cfg.lambda_u * (mmd or 0.0),
        total,
        evaluate_stream(pair, "source", source),
        evaluate_stream(pair, "target", target),
    )


def train(pair: StreamPair, source: DomainDataset, target: DomainDataset, cfg: TrainConfig):
    """Full protocol: pre-train source, copy into target, then train jointly."""
    pair, report = pretrain_source(pair, source, cfg)
    init_target_from_source(pair)
    pair, joint = joint_train(pair, source, target, cfg)
    return pair, report.extend(joint)
