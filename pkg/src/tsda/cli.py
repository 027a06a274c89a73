"""``tsda`` command line: gen, train, select, eval.

Every command writes its artifacts to files, echoes a one-line JSON run
manifest on standard output and saves the same manifest next to its main
output. Diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .data import (
    CLASSIFICATION,
    DatasetFormatError,
    DomainDataset,
    gen_intensity_shift_patterns,
    gen_two_moons_shift,
    holdout_split,
    read_dataset,
    write_dataset,
)
from .losses import COUPLING_FORMS, SQUARED_ERROR, TASK_LOSSES, is_classification
from .metrics import accuracy, average_precision, pcp_score, pr_curve
from .selection import enumerate_configs, report_csv, select_config
from .trainer import MMD_TAPS, TrainConfig, TrainingError, train
from .twostream import (
    CheckpointError,
    build_pair,
    format_pattern,
    load_checkpoint,
    parse_pattern,
    predict,
    save_checkpoint,
)

log = logging.getLogger("tsda")

SEED_ENV = "TSDA_SEED"
MANIFEST_VERSION = 1


class CliError(Exception):
    """A failure reported as ``tsda: error: ...`` with the given exit code."""

    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# architecture strings

_TOKEN = re.compile(r"^(?:d(?P<dense>\d+)|c(?P<conv>\d+)k(?P<k>\d+)|(?P<relu>r)|(?P<pool>p)|(?P<flat>f))$")


def parse_arch(arch: str, input_shape: Sequence[int], n_outputs: int) -> list[T.LayerSpec]:
    """Layer list from a comma-separated body description; the head is appended.

    Tokens: ``d<units>`` dense, ``c<channels>k<size>`` square convolution,
    ``r`` ReLU, ``p`` 2x2 max-pool, ``f`` flatten. Input sizes are inferred
    from ``input_shape``; a final ``dense(., n_outputs)`` head is added.
    """
    shape = tuple(int(d) for d in input_shape)
    specs: list[T.LayerSpec] = []
    tokens = [t.strip() for t in arch.split(",") if t.strip()] if arch else []
    for tok in tokens:
        m = _TOKEN.match(tok)
        if m is None:
            raise ValueError(f"bad architecture token {tok!r} (use dN, cNkM, r, p, f)")
        if m["dense"]:
            if len(shape) != 1:
                raise ValueError(f"dense layer {tok!r} needs flat input, got shape {shape}; insert 'f'")
            spec = T.dense(shape[0], int(m["dense"]))
        elif m["conv"]:
            if len(shape) != 3:
                raise ValueError(f"convolution {tok!r} needs (C, H, W) input, got shape {shape}")
            spec = T.conv2d(shape[0], int(m["conv"]), int(m["k"]))
        elif m["relu"]:
            spec = T.relu()
        elif m["pool"]:
            spec = T.maxpool2d()
        else:
            spec = T.flatten()
        shape = spec.output_shape(shape)
        specs.append(spec)
    if len(shape) != 1:
        specs.append(T.flatten())
        shape = specs[-1].output_shape(shape)
    specs.append(T.dense(shape[0], n_outputs))
    return specs


def default_arch(input_shape: Sequence[int]) -> str:
    return "d16,r,d16,r" if len(input_shape) == 1 else "c4k3,r,p,f,d16,r"


def _n_param_layers(specs) -> int:
    return sum(s.has_params for s in specs)


# ---------------------------------------------------------------------------
# helpers


def _load(path: str) -> DomainDataset:
    try:
        return read_dataset(path)
    except OSError as exc:
        raise CliError(f"cannot read dataset {path}: {exc.strerror or exc}", code=2) from exc
    except DatasetFormatError as exc:
        raise CliError(f"invalid dataset: {exc}", code=2) from exc


def _pair_floats(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y', got {text!r}") from None
    return x, y


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV}={raw!r} is not an integer", code=2) from None


def _emit_manifest(manifest: dict, path: Optional[Path]) -> None:
    text = json.dumps(manifest, sort_keys=True)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    print(text)


def _manifest_path(output: str) -> Path:
    p = Path(output)
    return p.with_name(p.name + ".manifest.json")


def _parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _write_text(path: str, text: str) -> None:
    with open(_parent(path), "w", newline="") as fh:
        fh.write(text)


def _config_from(args) -> TrainConfig:
    try:
        return TrainConfig(
            lambda_w=args.lambda_w,
            lambda_u=args.lambda_u,
            sigma=args.sigma,
            coupling_form=args.form,
            batch_size_source=args.batch_source,
            batch_size_target=args.batch_target,
            epochs_pretrain=args.epochs_pretrain,
            epochs_joint=args.epochs_joint,
            seed=args.seed,
            task=args.task_loss,
            mmd_on=args.mmd_on,
        )
    except ValueError as exc:
        raise CliError(str(exc), code=2) from exc


def _training_inputs(args):
    source = _load(args.source)
    target = _load(args.target)
    if args.target_labeled is not None:
        if args.target_labeled > target.labeled_prefix:
            raise CliError(
                f"--target-labeled {args.target_labeled} exceeds the {target.labeled_prefix} labels in {args.target}"
            )
        target = target.with_labeled_prefix(args.target_labeled)
    if source.feature_shape != target.feature_shape:
        raise CliError(f"feature shapes differ: source {source.feature_shape}, target {target.feature_shape}")
    if source.task == CLASSIFICATION and not is_classification(args.task_loss):
        raise CliError(f"task loss {args.task_loss} does not fit a classification dataset")
    if source.task != CLASSIFICATION and is_classification(args.task_loss):
        raise CliError(f"task loss {args.task_loss} needs a classification dataset; use {SQUARED_ERROR}")
    arch = args.arch if args.arch is not None else default_arch(source.feature_shape)
    try:
        specs = parse_arch(arch, source.feature_shape, source.n_outputs)
    except (ValueError, T.ShapeError) as exc:
        raise CliError(f"--arch: {exc}", code=2) from exc
    return source, target, arch, specs


def _train_manifest(command: str, args, cfg: TrainConfig, arch: str, specs) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "config": asdict(cfg),
        "source": args.source,
        "target": args.target,
        "target_labeled": args.target_labeled,
        "arch": arch,
        "layers": [f"{s.kind}({s.n_in},{s.n_out},{s.kh},{s.kw})" if s.has_params else s.kind for s in specs],
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    if args.kind == "moons":
        src, tgt = gen_two_moons_shift(
            args.n,
            noise_sd=args.noise if args.noise is not None else 0.1,
            rotation_deg=args.rot,
            translation=args.shift,
            scale=args.scale,
            seed=args.seed,
        )
        params = {"rot": args.rot, "shift": list(args.shift), "scale": args.scale}
    else:
        src, tgt = gen_intensity_shift_patterns(
            args.n,
            grid=args.grid,
            intensity_gain=args.gain,
            intensity_offset=args.offset,
            noise_sd=args.noise if args.noise is not None else 0.15,
            seed=args.seed,
        )
        params = {"grid": args.grid, "gain": args.gain, "offset": args.offset}
    write_dataset(src, _parent(args.out_src))
    write_dataset(tgt, _parent(args.out_tgt))
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": "gen",
        "kind": args.kind,
        "n": args.n,
        "noise": args.noise,
        "seed": args.seed,
        "params": params,
        "outputs": {"source": args.out_src, "target": args.out_tgt},
    }
    _emit_manifest(manifest, _manifest_path(args.out_src))
    return 0


def cmd_train(args) -> int:
    source, target, arch, specs = _training_inputs(args)
    cfg = _config_from(args)
    n = _n_param_layers(specs)
    pattern = args.pattern if args.pattern is not None else "+" + "-" * (n - 1)
    try:
        modes = parse_pattern(pattern)
    except ValueError as exc:
        raise CliError(f"--pattern: {exc}", code=2) from exc
    if len(modes) != n:
        raise CliError(f"--pattern {pattern!r} has {len(modes)} entries but the network has {n} parameterized layers", 2)
    manifest = _train_manifest("train", args, cfg, arch, specs)
    manifest.update(pattern=format_pattern(modes), outputs={"checkpoint": args.out, "report": args.report})
    pair = build_pair(specs, modes, cfg.seed, source.feature_shape)
    try:
        pair, report = train(pair, source, target, cfg)
    except TrainingError as exc:
        raise CliError(f"training failed: {exc}") from exc
    save_checkpoint(_parent(args.out), pair, cfg.task)
    _write_text(args.report, report.to_csv())
    if args.fig_dir:
        from .plotting import plot_loss_trace

        plot_loss_trace(report, Path(args.fig_dir) / "loss_trace.png")
    _emit_manifest(manifest, _manifest_path(args.out))
    return 0


def cmd_select(args) -> int:
    source, target, arch, specs = _training_inputs(args)
    cfg = _config_from(args)
    validation = _load(args.validation) if args.validation else None
    s_train, s_eval = holdout_split(source, args.holdout)
    t_train, t_eval = holdout_split(target, args.holdout)
    if len(s_eval) == 0 or len(t_eval) == 0:
        raise CliError("--holdout leaves an empty evaluation pool")
    candidates = enumerate_configs(_n_param_layers(specs))
    workers = args.workers or os.cpu_count() or 1
    manifest = _train_manifest("select", args, cfg, arch, specs)
    manifest.update(
        holdout=args.holdout,
        epoch_fraction=args.epoch_fraction,
        validation=args.validation,
        outputs={"report": args.out},
    )
    try:
        scores = select_config(
            candidates, specs, s_train, t_train, s_eval, t_eval, cfg,
            validation=validation, epoch_fraction=args.epoch_fraction, workers=workers,
        )
    except (RuntimeError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    _write_text(args.out, report_csv(scores))
    if args.fig_dir:
        from .plotting import plot_selection

        by_order = sorted(scores, key=lambda c: c.order)
        plot_selection(
            [c.pattern for c in by_order],
            [c.mmd2_value for c in by_order],
            [c.validation for c in by_order] if validation is not None else None,
            Path(args.fig_dir) / "selection.png",
        )
    _emit_manifest(manifest, _manifest_path(args.out))
    print(scores[0].pattern)
    return 0


def _labeled(ds: DomainDataset, path: str) -> DomainDataset:
    if ds.labeled_prefix == 0:
        raise CliError(f"{path} has no labeled samples to evaluate against")
    return DomainDataset(ds.task, ds.n_outputs, ds.features[: ds.labeled_prefix], ds.labels)


def _eval_rows(pair, task_loss: str, which: str, ds: DomainDataset, args, rows: list, curves: list) -> None:
    scores = predict(pair, which, ds.features)
    if is_classification(task_loss):
        rows.append((which, "accuracy", accuracy(np.argmax(scores, axis=1), ds.labels)))
        if scores.shape[1] == 2:
            curve = pr_curve(scores[:, 1] - scores[:, 0], ds.labels == 1)
            ap = average_precision(curve)
            rows.append((which, "average_precision", ap))
            curves.append((which, curve, ap))
    else:
        rows.append((which, "mse", float(np.mean((scores - ds.labels) ** 2))))
        if args.pcp:
            if scores.shape[1] % 2:
                raise CliError("PCP needs an even number of regression outputs (x, y per landmark)")
            n = len(scores)
            per, mean = pcp_score(scores.reshape(n, -1, 2), ds.labels.reshape(n, -1, 2), args.radius)
            for j, v in enumerate(per):
                rows.append((which, f"pcp_landmark_{j}", float(v)))
            rows.append((which, "pcp_mean", mean))


def cmd_eval(args) -> int:
    try:
        pair, task_loss = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror or exc}", code=2) from exc
    except CheckpointError as exc:
        raise CliError(f"invalid checkpoint {args.checkpoint}: {exc}", code=2) from exc
    classification = is_classification(task_loss)
    if args.pcp and classification:
        raise CliError(f"--pcp needs a landmark regression checkpoint; {args.checkpoint} was trained with {task_loss}")
    jobs = [("target", args.data)]
    if args.source_data:
        jobs.append(("source", args.source_data))
    rows: list = []
    curves: list = []
    for which, path in jobs:
        ds = _labeled(_load(path), path)
        if ds.feature_shape != pair.input_shape:
            raise CliError(f"{path} features have shape {ds.feature_shape}, checkpoint expects {pair.input_shape}")
        if classification and ds.n_outputs != pair.specs[-1].n_out:
            raise CliError(f"{path} has {ds.n_outputs} classes, checkpoint predicts {pair.specs[-1].n_out}")
        _eval_rows(pair, task_loss, which, ds, args, rows, curves)
    if args.pr_out:
        target_curves = [c for c in curves if c[0] == "target"]
        if not target_curves:
            raise CliError("--pr-out needs a binary classification checkpoint")
        _, curve, ap = target_curves[0]
        _write_text(args.pr_out, curve.to_csv())
        if args.fig_dir:
            from .plotting import plot_pr_curve

            plot_pr_curve(curve, ap, Path(args.fig_dir) / "pr_curve.png")
    text = "stream,metric,value\n" + "".join(f"{w},{m},{v!r}\n" for w, m, v in rows)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": "eval",
        "checkpoint": args.checkpoint,
        "task_loss": task_loss,
        "pattern": format_pattern(pair.modes),
        "data": args.data,
        "source_data": args.source_data,
        "pcp_radius": args.radius if args.pcp else None,
        "outputs": {"metrics": args.out, "pr_curve": args.pr_out},
    }
    if args.out:
        _write_text(args.out, text)
        _emit_manifest(manifest, _manifest_path(args.out))
    else:
        _emit_manifest(manifest, None)
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--source", required=True, help="labeled source dataset")
    p.add_argument("--target", required=True, help="target dataset (labeled prefix is used)")
    p.add_argument("--target-labeled", type=_nonneg_int, help="keep only this many target labels")
    p.add_argument("--arch", help="body layers, e.g. 'd16,r,d16,r' or 'c4k3,r,p,f,d16,r'; head appended")
    p.add_argument("--lambda-w", type=float, default=d.lambda_w, help="coupling weight")
    p.add_argument("--lambda-u", type=float, default=d.lambda_u, help="MMD weight")
    p.add_argument("--sigma", type=float, default=d.sigma, help="RBF kernel bandwidth")
    p.add_argument("--form", choices=COUPLING_FORMS, default=d.coupling_form, help="coupling regularizer")
    p.add_argument("--task-loss", choices=TASK_LOSSES, default=d.task)
    p.add_argument("--mmd-on", choices=MMD_TAPS, default=d.mmd_on, help="representation the MMD compares")
    p.add_argument("--epochs-pretrain", type=_nonneg_int, default=d.epochs_pretrain)
    p.add_argument("--epochs-joint", type=_nonneg_int, default=d.epochs_joint)
    p.add_argument("--batch-source", type=int, default=d.batch_size_source)
    p.add_argument("--batch-target", type=int, default=d.batch_size_target)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--fig-dir", help="also render PNG figures into this directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsda", description="Two-stream domain adaptation.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic source/target pair")
    g.add_argument("--kind", choices=("moons", "intensity"), default="moons")
    g.add_argument("--n", type=int, default=400, help="samples per domain")
    g.add_argument("--noise", type=float, help="noise sd (moons 0.1, intensity 0.15)")
    g.add_argument("--rot", type=float, default=30.0, help="moons: rotation in degrees")
    g.add_argument("--shift", type=_pair_floats, default=(1.0, 0.0), help="moons: translation 'x,y'")
    g.add_argument("--scale", type=float, default=1.0, help="moons: scale")
    g.add_argument("--grid", type=int, default=8, help="intensity: image side")
    g.add_argument("--gain", type=float, default=2.0, help="intensity: target gain")
    g.add_argument("--offset", type=float, default=0.3, help="intensity: target offset")
    g.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    g.add_argument("--out-src", required=True)
    g.add_argument("--out-tgt", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="pre-train the source stream, then train both jointly")
    _add_training_flags(t)
    t.add_argument("--pattern", help="one char per parameterized layer: '+' coupled, '-' shared, 'x' independent")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--report", required=True, help="per-epoch CSV report path")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("select", help="rank every shared/coupled pattern by held-out MMD^2")
    _add_training_flags(s)
    s.add_argument("--validation", help="labeled target data for reporting accuracy per pattern")
    s.add_argument("--holdout", type=float, default=0.2, help="fraction of each domain kept for scoring")
    s.add_argument("--epoch-fraction", type=float, default=0.5, help="share of the epoch budget per candidate")
    s.add_argument("--workers", type=int, default=None, help="parallel candidates (default: all cores)")
    s.add_argument("--out", required=True, help="search report CSV path")
    s.set_defaults(func=cmd_select)

    e = sub.add_parser("eval", help="score a checkpoint on labeled data")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="target-domain test data")
    e.add_argument("--source-data", help="also score the source stream on this data")
    e.add_argument("--out", help="metrics CSV path (default: stdout)")
    e.add_argument("--pr-out", help="binary tasks: write the target precision-recall curve here")
    e.add_argument("--pcp", action="store_true", help="landmark regression: report PCP")
    e.add_argument("--radius", type=float, default=2.0, help="PCP radius in pixels")
    e.add_argument("--fig-dir", help="also render PNG figures into this directory")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        return args.func(args)
    except CliError as exc:
        print(f"tsda: error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        print(f"tsda: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
