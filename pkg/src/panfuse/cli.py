"""Command-line front end wiring the toolkit into reproducible pipelines.

Subcommands: ``synth``, ``degrade``, ``fuse``, ``train``, ``eval``, ``report``.
All stages read and write conventional file names under ``--out`` so they can
be chained; re-running a stage with identical inputs overwrites its outputs
with byte-identical files.  Exit codes: 0 success, 2 validation error,
3 numerical or training error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import shutil
import sys
from fractions import Fraction

import numpy as np

from . import gan
from .autodiff import load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericalError, PanfuseError
from .harness import (
    IDEAL_ROW,
    baseline_fuse,
    synth_scene,
    wald_reduce,
)
from .metrics import (
    FULL_METRICS,
    REDUCED_METRICS,
    MetricConfig,
    QualityReport,
    evaluate_full,
    evaluate_reduced,
)
from .raster import (
    MultispectralImage,
    RasterBand,
    load_raster,
    mtf_degrade,
    save_raster,
)

_INT_KEYS = ("window", "stride", "p", "q", "ratio", "iterations", "seed", "size", "bands")
_FLOAT_KEYS = (
    "alpha",
    "beta",
    "lr_g",
    "lr_d",
    "lambda_spec",
    "lambda_spat",
    "lambda_adv_spec",
    "lambda_adv_spat",
    "nyquist_gain",
)
_STR_KEYS = ("out", "ms", "pan", "gt", "fused", "checkpoint", "method", "mode", "label")

CONFIG_DEFAULTS = {
    "window": 32,
    "stride": 32,
    "p": 1,
    "q": 1,
    "alpha": 1.0,
    "beta": 1.0,
    "ratio": 4,
    "iterations": 500,
    "lr_g": 5e-3,
    "lr_d": 1e-3,
    "lambda_spec": 1.0,
    "lambda_spat": 1.0,
    "lambda_adv_spec": 0.01,
    "lambda_adv_spat": 0.01,
    "seed": 0,
    "nyquist_gain": 0.30,
    "size": 256,
    "bands": 4,
    "out": ".",
    "ms": None,
    "pan": None,
    "gt": None,
    "fused": None,
    "checkpoint": None,
    "method": None,
    "mode": None,
    "label": None,
}


def parse_kv_file(path) -> dict:
    """Parse one `key = value` per line; `#` starts a comment; unknown keys rejected."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected `key = value`, got {raw!r}")
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                if key in _INT_KEYS:
                    values[key] = int(value)
                elif key in _FLOAT_KEYS:
                    values[key] = float(value)
                else:
                    values[key] = value
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for key {key!r}: {value!r}") from exc
    return values


class RunConfig:
    """Flat resolved configuration: defaults, then config file, then CLI flags."""

    def __init__(self, args: argparse.Namespace):
        values = dict(CONFIG_DEFAULTS)
        config_path = getattr(args, "config", None)
        if config_path:
            values.update(parse_kv_file(config_path))
        for key in CONFIG_DEFAULTS:
            flag = getattr(args, key, None)
            if flag is not None:
                values[key] = flag
        if values["ratio"] < 1:
            raise ConfigError(f"key 'ratio' must be >= 1, got {values['ratio']}")
        self.values = values

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError as exc:
            raise AttributeError(key) from exc

    def metric_config(self) -> MetricConfig:
        return MetricConfig(
            window=self.window,
            stride=self.stride,
            p=self.p,
            q=self.q,
            alpha=self.alpha,
            beta=self.beta,
            ratio=Fraction(1, self.ratio),
        )

    def training_config(self) -> gan.TrainingConfig:
        return gan.TrainingConfig(
            iterations=self.iterations,
            lr_g=self.lr_g,
            lr_d=self.lr_d,
            lambda_spec=self.lambda_spec,
            lambda_spat=self.lambda_spat,
            lambda_adv_spec=self.lambda_adv_spec,
            lambda_adv_spat=self.lambda_adv_spat,
            seed=self.seed,
            ratio=self.ratio,
        )

    def echo(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if value is None:
                continue
            lines.append(f"config.{key} = {value}")
        return "\n".join(lines) + "\n"


def _out_path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out, name)


def _resolve_input(cfg: RunConfig, key: str, candidates) -> str:
    explicit = getattr(cfg, key)
    if explicit:
        return explicit
    for name in candidates:
        path = _out_path(cfg, name)
        if os.path.exists(path):
            return path
    raise ConfigError(
        f"no --{key} given and none of {candidates} exist under {cfg.out!r}"
    )


def _load_meta(cfg: RunConfig) -> dict:
    path = _out_path(cfg, "scene.meta")
    meta = {}
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, value = line.partition("=")
                meta[key.strip()] = value.strip()
    return meta


def _resolve_ratio(cfg: RunConfig, args) -> int:
    # explicit flag wins; otherwise the scene metadata; otherwise config default
    if getattr(args, "ratio", None) is not None:
        return int(args.ratio)
    meta = _load_meta(cfg)
    if "ratio" in meta:
        return int(meta["ratio"])
    return cfg.ratio


def cmd_synth(args) -> int:
    cfg = RunConfig(args)
    scene = synth_scene(
        seed=cfg.seed,
        width=cfg.size,
        height=cfg.size,
        bands=cfg.bands,
        ratio=cfg.ratio,
        nyquist_gain=cfg.nyquist_gain,
    )
    os.makedirs(cfg.out, exist_ok=True)
    save_raster(scene.gt_hrms, _out_path(cfg, "gt.pfr"))
    save_raster(scene.ms, _out_path(cfg, "ms.pfr"))
    save_raster(scene.pan, _out_path(cfg, "pan.pfr"))
    weights = ",".join(repr(w) for w in scene.pan_weights)
    with open(_out_path(cfg, "scene.meta"), "w", encoding="utf-8") as fh:
        fh.write(
            f"seed = {scene.seed}\nratio = {scene.ratio}\nbands = {scene.gt_hrms.band_count}\n"
            f"width = {scene.gt_hrms.width}\nheight = {scene.gt_hrms.height}\n"
            f"nyquist_gain = {scene.nyquist_gain}\npan_weights = {weights}\n"
        )
    print(f"wrote scene (seed={scene.seed}) to {cfg.out}")
    return 0


def cmd_degrade(args) -> int:
    cfg = RunConfig(args)
    ratio = _resolve_ratio(cfg, args)
    ms_path = _resolve_input(cfg, "ms", ("ms.pfr",))
    pan_path = _resolve_input(cfg, "pan", ("pan.pfr",))
    ms = load_raster(ms_path, scale_ratio=ratio)
    pan = load_raster(pan_path)
    if not isinstance(ms, MultispectralImage) or not isinstance(pan, RasterBand):
        raise ConfigError("degrade expects a multiband ms file and a single-band pan file")
    ms_lo, pan_lo, _reference = wald_reduce(ms, pan, ratio, cfg.nyquist_gain)
    os.makedirs(cfg.out, exist_ok=True)
    save_raster(ms_lo, _out_path(cfg, "ms_lo.pfr"))
    save_raster(pan_lo, _out_path(cfg, "pan_lo.pfr"))
    shutil.copyfile(ms_path, _out_path(cfg, "reference.pfr"))
    print(f"wrote ms_lo/pan_lo/reference to {cfg.out}")
    return 0


def _fusion_inputs(cfg: RunConfig, ratio: int):
    ms_path = _resolve_input(cfg, "ms", ("ms_lo.pfr", "ms.pfr"))
    pan_path = _resolve_input(cfg, "pan", ("pan_lo.pfr", "pan.pfr"))
    ms = load_raster(ms_path, scale_ratio=ratio)
    pan = load_raster(pan_path)
    if not isinstance(ms, MultispectralImage) or not isinstance(pan, RasterBand):
        raise ConfigError("fusion expects a multiband ms file and a single-band pan file")
    return ms, pan


def cmd_fuse(args) -> int:
    cfg = RunConfig(args)
    method = cfg.method
    if not method:
        raise ConfigError("missing required key 'method' (--method exp|cs|glp|gan)")
    ratio = _resolve_ratio(cfg, args)
    ms, pan = _fusion_inputs(cfg, ratio)
    if method == "gan":
        if not cfg.checkpoint:
            raise ConfigError("method 'gan' requires --checkpoint PATH")
        params = load_checkpoint(cfg.checkpoint)
        product = gan.fuse(params, ms, pan, ratio)
    else:
        product = baseline_fuse(method, ms, pan, ratio, cfg.nyquist_gain)
    os.makedirs(cfg.out, exist_ok=True)
    out_path = _out_path(cfg, f"fused_{method}.pfr")
    save_raster(product, out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_train(args) -> int:
    cfg = RunConfig(args)
    ratio = _resolve_ratio(cfg, args)
    ms_path = _resolve_input(cfg, "ms", ("ms.pfr",))
    pan_path = _resolve_input(cfg, "pan", ("pan.pfr",))
    ms = load_raster(ms_path, scale_ratio=ratio)
    pan = load_raster(pan_path)
    if not isinstance(ms, MultispectralImage) or not isinstance(pan, RasterBand):
        raise ConfigError("train expects a multiband ms file and a single-band pan file")
    tcfg = cfg.training_config()
    if ratio != tcfg.ratio:
        tcfg = dataclasses.replace(tcfg, ratio=ratio)
    params, log = gan.train(ms, pan, tcfg)
    os.makedirs(cfg.out, exist_ok=True)
    ckpt = cfg.checkpoint or _out_path(cfg, "checkpoint.pfck")
    save_checkpoint(params, ckpt)
    with open(_out_path(cfg, "train_log.csv"), "w", encoding="utf-8") as fh:
        fh.write(log.to_csv())
    final = log.rows[-1]
    print(f"wrote {ckpt} (final total_G = {final[-1]:.6g})")
    return 0


def _eval_label(cfg: RunConfig, fused_path: str) -> str:
    if cfg.label:
        return cfg.label
    stem = os.path.splitext(os.path.basename(fused_path))[0]
    return stem[6:] if stem.startswith("fused_") else stem


def _find_fused(cfg: RunConfig) -> str:
    if cfg.fused:
        return cfg.fused
    candidates = sorted(
        name for name in os.listdir(cfg.out)
        if name.startswith("fused_") and name.endswith(".pfr")
    )
    if len(candidates) == 1:
        return _out_path(cfg, candidates[0])
    if not candidates:
        raise ConfigError(f"no fused_*.pfr under {cfg.out!r}; pass --fused PATH")
    raise ConfigError(
        f"multiple fused products under {cfg.out!r}: {candidates}; pass --fused PATH"
    )


def cmd_eval(args) -> int:
    cfg = RunConfig(args)
    mode = cfg.mode
    if mode not in ("reduced", "full"):
        raise ConfigError("missing or bad key 'mode' (--mode reduced|full)")
    ratio = _resolve_ratio(cfg, args)
    mcfg = cfg.metric_config()
    fused_path = _find_fused(cfg)
    label = _eval_label(cfg, fused_path)
    fused = load_raster(fused_path)
    if not isinstance(fused, MultispectralImage):
        raise ConfigError("fused input must be multiband")
    if mode == "reduced":
        gt_path = _resolve_input(cfg, "gt", ("reference.pfr", "gt.pfr"))
        gt = load_raster(gt_path)
        if not isinstance(gt, MultispectralImage):
            raise ConfigError("ground truth must be multiband")
        report = evaluate_reduced(fused, gt, mcfg)
    else:
        ms, pan = _fusion_inputs(cfg, ratio)
        pan_low = mtf_degrade(pan, ratio, cfg.nyquist_gain)
        report = evaluate_full(fused, ms, pan, pan_low, mcfg)
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = _out_path(cfg, f"eval_{mode}_{label}.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    with open(_out_path(cfg, f"eval_{mode}_{label}.kv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_kv())
        fh.write(cfg.echo())
    sys.stdout.write(report.to_csv())
    return 0


def cmd_report(args) -> int:
    cfg = RunConfig(args)
    rows = {"reduced": {}, "full": {}}
    for name in sorted(os.listdir(cfg.out)):
        if not (name.startswith("eval_") and name.endswith(".kv")):
            continue
        stem = name[5:-3]
        mode, _, label = stem.partition("_")
        if mode not in rows or not label:
            continue
        with open(_out_path(cfg, name), "r", encoding="utf-8") as fh:
            report = QualityReport.parse_kv(fh.read())
        rows[mode][label] = report
    if not rows["reduced"] and not rows["full"]:
        raise ConfigError(f"no eval_*.kv files under {cfg.out!r}; run `eval` first")
    text_blocks = []
    for mode, metric_names in (("reduced", REDUCED_METRICS), ("full", FULL_METRICS)):
        if not rows[mode]:
            continue
        lines = ["method," + ",".join(metric_names)]
        table = [("method", *metric_names)]
        for label in sorted(rows[mode]):
            entries = rows[mode][label].entries
            lines.append(label + "," + ",".join(repr(entries[m]) for m in metric_names))
            table.append((label, *[f"{entries[m]:.4f}" for m in metric_names]))
        ideal = IDEAL_ROW[mode]
        lines.append("Ideal," + ",".join(repr(ideal[m]) for m in metric_names))
        table.append(("Ideal", *[f"{ideal[m]:.4f}" for m in metric_names]))
        with open(_out_path(cfg, f"report_{mode}.csv"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
        block = [f"{mode}-resolution mode"]
        for row in table:
            block.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        text_blocks.append("\n".join(block))
    text = "\n\n".join(text_blocks) + "\n"
    with open(_out_path(cfg, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panfuse",
        description="Pansharpening toolkit: synthetic scenes, fusion, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="seed for all stochastic behavior")
        p.add_argument("--ratio", type=int, help="PAN pixels per MS pixel per axis")
        p.add_argument("--out", help="workspace directory (default: current)")

    p = sub.add_parser("synth", help="write a synthetic scene as .pfr files")
    common(p)
    p.add_argument("--size", type=int, help="PAN-scale width and height")
    p.add_argument("--bands", type=int, help="number of spectral bands")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("degrade", help="Wald reduction: degrade ms/pan by the ratio")
    common(p)
    p.add_argument("--ms", help="input multispectral .pfr")
    p.add_argument("--pan", help="input pan .pfr")
    p.set_defaults(handler=cmd_degrade)

    p = sub.add_parser("fuse", help="run a fusion method")
    common(p)
    p.add_argument("--method", choices=["exp", "cs", "glp", "gan"])
    p.add_argument("--checkpoint", help="trained checkpoint (required for gan)")
    p.add_argument("--ms", help="input multispectral .pfr")
    p.add_argument("--pan", help="input pan .pfr")
    p.set_defaults(handler=cmd_fuse)

    p = sub.add_parser("train", help="train the generative fuser, write a checkpoint")
    common(p)
    p.add_argument("--ms", help="input multispectral .pfr")
    p.add_argument("--pan", help="input pan .pfr")
    p.add_argument("--iterations", type=int, help="training iterations")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="score a fused product")
    common(p)
    p.add_argument("--mode", choices=["reduced", "full"])
    p.add_argument("--fused", help="fused .pfr to score")
    p.add_argument("--gt", help="reference .pfr for reduced mode")
    p.add_argument("--ms", help="ms input for full mode")
    p.add_argument("--pan", help="pan input for full mode")
    p.add_argument("--label", help="method label used in report files")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", help="aggregate eval outputs into one table")
    common(p)
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NumericalError as exc:
        print(f"panfuse: numerical error: {exc}", file=sys.stderr)
        return 3
    except PanfuseError as exc:
        print(f"panfuse: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"panfuse: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
