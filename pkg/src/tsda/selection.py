"""Pick which layers to couple by the cross-stream MMD of trained candidates.

Every candidate pattern is trained with the same seed; the one whose two
streams map held-out source and target samples to the closest feature
distributions wins.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from .data import DomainDataset
from .losses import mmd2
from .trainer import MMD_TAPS, TrainConfig, evaluate_stream, train
from .twostream import SharingMode, StreamPair, build_pair, features, format_pattern, predict


@dataclass
class ConfigScore:
    modes: list[SharingMode]
    mmd2_value: float
    validation: Optional[float] = None
    order: int = 0
    pair: Optional[StreamPair] = None

    @property
    def pattern(self) -> str:
        return format_pattern(self.modes)

    @property
    def n_coupled(self) -> int:
        return sum(m == SharingMode.COUPLED for m in self.modes)


def enumerate_configs(n_parameterized_layers: int, head_index: Optional[int] = None) -> list[list[SharingMode]]:
    """All shared/coupled patterns with the head fixed to shared.

    Patterns are listed in binary counting order with the first layer as the
    least significant bit (bit set = coupled).
    """
    n = n_parameterized_layers
    if n < 1:
        raise ValueError("need at least one parameterized layer")
    head = n - 1 if head_index is None else head_index
    if not 0 <= head < n:
        raise ValueError(f"head index {head} outside [0, {n})")
    free = [j for j in range(n) if j != head]
    out = []
    for code in range(2 ** len(free)):
        modes = [SharingMode.SHARED] * n
        for bit, j in enumerate(free):
            if code >> bit & 1:
                modes[j] = SharingMode.COUPLED
        out.append(modes)
    return out


def score_pair(
    pair: StreamPair,
    eval_source: DomainDataset,
    eval_target: DomainDataset,
    sigma: float = 1.0,
    tap: str = "output",
) -> float:
    """MMD^2 between source-stream representations of source samples and
    target-stream representations of target samples.

    ``tap`` picks the representation as in training: the head ``output`` or
    the ``head_input`` features.
    """
    if tap not in MMD_TAPS:
        raise ValueError(f"tap must be one of {MMD_TAPS}")
    rep = predict if tap == "output" else features
    fs = rep(pair, "source", eval_source.features)
    ft = rep(pair, "target", eval_target.features)
    return mmd2(fs, ft, sigma)[0]


def select_config(
    candidates: Sequence[Sequence[SharingMode]],
    specs,
    source: DomainDataset,
    target: DomainDataset,
    eval_source: DomainDataset,
    eval_target: DomainDataset,
    cfg: TrainConfig,
    validation: Optional[DomainDataset] = None,
    epoch_fraction: float = 0.5,
    workers: Optional[int] = None,
    keep_models: bool = False,
) -> list[ConfigScore]:
    """Train every candidate and rank them by ascending held-out MMD^2.

    Ties go to fewer coupled layers, then to the candidate listed first.
    ``validation`` (labeled target data) adds a target-stream accuracy per
    candidate for reporting; it never influences the ranking.
    """
    if not candidates:
        raise ValueError("no candidate configurations")
    if not 0.0 < epoch_fraction <= 1.0:
        raise ValueError("epoch_fraction must lie in (0, 1]")
    run_cfg = replace(
        cfg,
        epochs_pretrain=max(1, round(cfg.epochs_pretrain * epoch_fraction)) if cfg.epochs_pretrain else 0,
        epochs_joint=max(1, round(cfg.epochs_joint * epoch_fraction)) if cfg.epochs_joint else 0,
    )
    input_shape = source.feature_shape

    def run(k: int) -> ConfigScore:
        modes = [SharingMode(m) for m in candidates[k]]
        try:
            pair = build_pair(specs, modes, run_cfg.seed, input_shape)
            pair, _ = train(pair, source, target, run_cfg)
            value = score_pair(pair, eval_source, eval_target, run_cfg.sigma, run_cfg.mmd_on)
        except Exception as exc:
            raise RuntimeError(f"candidate {format_pattern(modes)} failed: {exc}") from exc
        val = evaluate_stream(pair, "target", validation) if validation is not None else None
        return ConfigScore(modes, value, val, k, pair if keep_models else None)

    n_workers = workers or os.cpu_count() or 1
    if n_workers == 1 or len(candidates) == 1:
        scores = [run(k) for k in range(len(candidates))]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            scores = list(pool.map(run, range(len(candidates))))
    return sorted(scores, key=lambda c: (c.mmd2_value, c.n_coupled, c.order))


def report_csv(scores: Sequence[ConfigScore]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "pattern", "mmd2", "validation_accuracy"])
    for rank, c in enumerate(scores, 1):
        w.writerow([rank, c.pattern, repr(c.mmd2_value), "" if c.validation is None else repr(c.validation)])
    return buf.getvalue()
