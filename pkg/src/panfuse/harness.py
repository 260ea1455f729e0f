"""Synthetic desk-scale scenes, Wald-protocol reduction and experiment running.

Ground truth comes from seeded synthesis rather than satellite products: the
scene generator builds a high-resolution MS image from smooth per-band
gradients plus luminance-dominant blobs and rectangles, degrades it to the MS
input, and synthesizes PAN as a fixed positive band combination plus a mild
blur.  The consistency logic of the reduced-resolution protocol (degrade,
fuse, compare to the original) is preserved exactly while staying
self-contained.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, PanfuseError
from .metrics import (
    FULL_METRICS,
    REDUCED_METRICS,
    MetricConfig,
    QualityReport,
    evaluate_full,
    evaluate_reduced,
)
from .raster import (
    FusionProduct,
    MultispectralImage,
    RasterBand,
    detail_inject,
    estimate_gains,
    estimate_weights,
    intensity_component,
    mtf_degrade,
    upsample,
    upsample_band,
)

_PAN_BLUR = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0

IDEAL_ROW = {
    "reduced": {"SAM": 0.0, "CC": 1.0, "UIQI": 1.0, "Q4": 1.0, "ERGAS": 0.0},
    "full": {"D_lambda": 0.0, "D_s": 0.0, "QNR": 1.0},
}


def worker_threads() -> int:
    """Worker cap from PANFUSE_THREADS; defaults to all cores."""
    raw = os.environ.get("PANFUSE_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise InvalidInputError(f"PANFUSE_THREADS must be an integer, got {raw!r}") from exc
        if n >= 1:
            return n
    return os.cpu_count() or 1


def _blur3(a: np.ndarray) -> np.ndarray:
    ap = np.pad(a, 1, mode="symmetric")
    out = np.zeros_like(a)
    for i in range(3):
        for j in range(3):
            out += _PAN_BLUR[i, j] * ap[i : i + a.shape[0], j : j + a.shape[1]]
    return out


@dataclass(frozen=True)
class SyntheticScene:
    """Seeded scene: ground truth at PAN scale, degraded MS, synthetic PAN."""

    gt_hrms: MultispectralImage
    ms: MultispectralImage
    pan: RasterBand
    pan_weights: np.ndarray
    seed: int
    ratio: int
    nyquist_gain: float = 0.30

    def __post_init__(self):
        if (self.pan.height, self.pan.width) != (
            self.ms.height * self.ratio,
            self.ms.width * self.ratio,
        ):
            raise InvalidInputError(
                f"pan {self.pan.height}x{self.pan.width} is not "
                f"ms {self.ms.height}x{self.ms.width} times {self.ratio}"
            )

    def reconstruct_pan(self) -> RasterBand:
        """Rebuild PAN from the ground truth and the stored weights."""
        acc = np.zeros((self.gt_hrms.height, self.gt_hrms.width))
        for w, band in zip(self.pan_weights, self.gt_hrms.bands):
            acc += w * band.data
        return RasterBand(_blur3(acc))


def synth_scene(
    seed: int,
    width: int,
    height: int,
    bands: int = 4,
    ratio: int = 4,
    nyquist_gain: float = 0.30,
) -> SyntheticScene:
    """Deterministic scene at PAN scale ``width x height`` with ``bands`` bands.

    Spectral variation lives in smooth per-band gradients; the sharp content
    (rectangles and Gaussian blobs, counts scaling with image area) is
    luminance-dominant, with per-band amplitudes equal up to a small jitter.
    That mirrors the working assumption of detail-injection fusion: high
    frequencies are shared across bands while chroma varies slowly.  A shared
    affine rescale into [0.1, 0.9] keeps values clamp-safe and means nonzero
    without reintroducing per-band amplitude skew.
    """
    width = int(width)
    height = int(height)
    ratio = int(ratio)
    if ratio < 1:
        raise InvalidInputError(f"ratio must be >= 1, got {ratio}")
    if width % ratio or height % ratio:
        raise InvalidInputError(
            f"scene size {width}x{height} is not divisible by ratio {ratio}"
        )
    if bands < 2:
        raise InvalidInputError(f"need at least 2 bands, got {bands}")
    rng = np.random.default_rng(seed)
    jitter = 0.05

    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, height), np.linspace(0.0, 1.0, width), indexing="ij"
    )
    gt = np.empty((bands, height, width))
    for k in range(bands):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        gt[k] = 0.5 + 0.2 * (math.cos(angle) * xx + math.sin(angle) * yy)

    n_blobs = max(8, (width * height) // 2048)
    centers = rng.uniform(0.05, 0.95, size=(n_blobs, 2))
    sigmas = rng.uniform(0.01, 0.08, size=n_blobs)
    blob_amp = rng.uniform(0.1, 0.3, size=n_blobs)
    blob_factor = 1.0 + rng.uniform(-jitter, jitter, size=(n_blobs, bands))
    for b in range(n_blobs):
        bump = np.exp(
            -(((xx - centers[b, 0]) ** 2 + (yy - centers[b, 1]) ** 2)
              / (2.0 * sigmas[b] ** 2))
        )
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        for k in range(bands):
            gt[k] += sign * blob_amp[b] * blob_factor[b, k] * bump

    n_rect = max(6, (width * height) // 512)
    for _ in range(n_rect):
        rh = int(rng.integers(2, max(3, height // 8)))
        rw = int(rng.integers(2, max(3, width // 8)))
        y0 = int(rng.integers(0, height - rh))
        x0 = int(rng.integers(0, width - rw))
        delta = rng.uniform(0.08, 0.25)
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        factors = 1.0 + rng.uniform(-jitter, jitter, size=bands)
        for k in range(bands):
            gt[k, y0 : y0 + rh, x0 : x0 + rw] += sign * delta * factors[k]

    lo, hi = gt.min(), gt.max()
    gt = 0.1 + 0.8 * (gt - lo) / (hi - lo)

    gt_hrms = MultispectralImage.from_array(gt, scale_ratio=1)
    ms = MultispectralImage(
        tuple(mtf_degrade(b, ratio, nyquist_gain) for b in gt_hrms.bands),
        scale_ratio=ratio,
    )
    raw_w = rng.uniform(0.5, 1.5, size=bands)
    pan_weights = raw_w / raw_w.sum()
    pan = RasterBand(_blur3(np.tensordot(pan_weights, gt, axes=(0, 0))))
    return SyntheticScene(
        gt_hrms=gt_hrms,
        ms=ms,
        pan=pan,
        pan_weights=pan_weights,
        seed=int(seed),
        ratio=ratio,
        nyquist_gain=nyquist_gain,
    )


def wald_reduce(
    ms: MultispectralImage, pan: RasterBand, r: int, nyquist_gain: float = 0.30
):
    """Degrade both inputs by r so the original MS becomes the reference.

    Returns (ms_lo, pan_lo, reference) where reference is the input MS object,
    bit-identical.
    """
    r = int(r)
    if ms.height % r or ms.width % r or pan.height % r or pan.width % r:
        raise InvalidInputError(f"input dimensions are not divisible by ratio {r}")
    ms_lo = MultispectralImage(
        tuple(mtf_degrade(b, r, nyquist_gain) for b in ms.bands),
        scale_ratio=ms.scale_ratio,
    )
    pan_lo = mtf_degrade(pan, r, nyquist_gain)
    return ms_lo, pan_lo, ms


BASELINE_METHODS = ("cs", "exp", "glp")


def baseline_fuse(
    method: str,
    ms: MultispectralImage,
    pan: RasterBand,
    r: int,
    nyquist_gain: float = 0.30,
) -> FusionProduct:
    """Reference fusers: plain upsampling, global CS injection, GLP-style injection."""
    r = int(r)
    if method == "exp":
        return FusionProduct(upsample(ms, r, "bicubic"), method="exp")
    if method == "cs":
        ms_up = upsample(ms, r, "bicubic")
        weights = estimate_weights(ms_up, pan)
        gains = estimate_gains(ms_up, intensity_component(ms_up, weights))
        product = detail_inject(ms_up, pan, gains, weights)
        return FusionProduct(product.image, method="cs", provenance=dict(product.provenance))
    if method == "glp":
        ms_up = upsample(ms, r, "bicubic")
        pan_low = upsample_band(mtf_degrade(pan, r, nyquist_gain), r, "bicubic")
        detail = pan.data - pan_low.data
        pl = pan_low.data.ravel()
        pl_c = pl - pl.mean()
        var_pl = float(pl_c @ pl_c) / (pl.size - 1)
        if var_pl == 0.0:
            raise InvalidInputError("lowpass pan is constant; GLP gains undefined")
        fused = []
        for band in ms_up.bands:
            bc = band.data.ravel() - band.data.mean()
            gain = (float(bc @ pl_c) / (pl.size - 1)) / var_pl
            fused.append(RasterBand(np.clip(band.data + gain * detail, 0.0, 1.0)))
        return FusionProduct(MultispectralImage(tuple(fused), scale_ratio=1), method="glp")
    raise InvalidInputError(f"unknown fusion method {method!r}")


@dataclass
class ExperimentResult:
    """One scored (method, mode) cell of the comparison table."""

    method: str
    mode: str
    report: QualityReport | None
    wall_time: float
    error: str | None = None


def run_experiment(
    scene: SyntheticScene,
    methods,
    cfg: MetricConfig | None = None,
    extra_fusers: dict | None = None,
    out_dir=None,
) -> list:
    """Fuse and score every method in both protocol modes.

    ``extra_fusers`` maps method names to callables (ms, pan, r) -> FusionProduct,
    overriding or extending the built-in baselines.  Failures are recorded per
    row and the run continues.  When ``out_dir`` is given, one CSV per mode and
    an aligned text table are written there, rows sorted by method name with
    the Ideal row appended.
    """
    cfg = cfg or MetricConfig()
    fusers = {name: None for name in BASELINE_METHODS}
    fusers.update(extra_fusers or {})
    names = sorted(set(methods))
    for name in names:
        if name not in fusers:
            raise InvalidInputError(f"unknown fusion method {name!r}")
    pan_low = mtf_degrade(scene.pan, scene.ratio, scene.nyquist_gain)

    def run_one(name: str) -> list:
        start = time.perf_counter()
        try:
            custom = fusers.get(name)
            if custom is not None:
                product = custom(scene.ms, scene.pan, scene.ratio)
            else:
                product = baseline_fuse(
                    name, scene.ms, scene.pan, scene.ratio, scene.nyquist_gain
                )
            reduced = evaluate_reduced(product, scene.gt_hrms, cfg)
            full = evaluate_full(product, scene.ms, scene.pan, pan_low, cfg)
        except PanfuseError as exc:
            elapsed = time.perf_counter() - start
            return [
                ExperimentResult(name, mode, None, elapsed, error=str(exc))
                for mode in ("reduced", "full")
            ]
        elapsed = time.perf_counter() - start
        return [
            ExperimentResult(name, "reduced", reduced, elapsed),
            ExperimentResult(name, "full", full, elapsed),
        ]

    max_workers = min(worker_threads(), max(1, len(names)))
    if max_workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            chunks = list(pool.map(run_one, names))
    else:
        chunks = [run_one(name) for name in names]
    results = [res for chunk in chunks for res in chunk]
    results.sort(key=lambda res: (res.method, res.mode))
    if out_dir is not None:
        emit_result_files(results, out_dir)
    return results


def results_table_csv(results, mode: str) -> str:
    """Comparison table for one mode: method column plus metric columns."""
    metric_names = REDUCED_METRICS if mode == "reduced" else FULL_METRICS
    lines = ["method," + ",".join(metric_names)]
    for res in results:
        if res.mode != mode or res.report is None:
            continue
        cells = [res.method] + [repr(res.report.entries[m]) for m in metric_names]
        lines.append(",".join(cells))
    ideal = IDEAL_ROW[mode]
    lines.append("Ideal," + ",".join(repr(ideal[m]) for m in metric_names))
    return "\n".join(lines) + "\n"


def parse_results_table(text: str, mode: str):
    """Parse a comparison table back into {method: {metric: value}}."""
    metric_names = REDUCED_METRICS if mode == "reduced" else FULL_METRICS
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split(",")
    if header != ["method", *metric_names]:
        raise InvalidInputError(f"unrecognized {mode} table header: {lines[0]!r}")
    rows = {}
    for ln in lines[1:]:
        cells = ln.split(",")
        rows[cells[0]] = dict(zip(metric_names, (float(c) for c in cells[1:])))
    return rows


def results_table_text(results) -> str:
    """Human-readable aligned table covering both modes."""
    blocks = []
    for mode, metric_names in (("reduced", REDUCED_METRICS), ("full", FULL_METRICS)):
        rows = [("method", *metric_names)]
        for res in results:
            if res.mode != mode:
                continue
            if res.report is None:
                rows.append((res.method, f"failed: {res.error}", *[""] * (len(metric_names) - 1)))
            else:
                rows.append(
                    (res.method, *[f"{res.report.entries[m]:.4f}" for m in metric_names])
                )
        ideal = IDEAL_ROW[mode]
        rows.append(("Ideal", *[f"{ideal[m]:.4f}" for m in metric_names]))
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = [f"{mode}-resolution mode"]
        for row in rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def emit_result_files(results, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for mode in ("reduced", "full"):
        path = os.path.join(out_dir, f"results_{mode}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(results_table_csv(results, mode))
    with open(os.path.join(out_dir, "results.txt"), "w", encoding="utf-8") as fh:
        fh.write(results_table_text(results))
