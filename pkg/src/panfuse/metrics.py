"""Reduced- and full-resolution pansharpening quality metrics.

Reduced-resolution (full-reference) metrics: SAM, CC, UIQI, Q4, ERGAS.
Full-resolution (no-reference) metrics: D_lambda, D_s and their QNR product.

Windowed indices compare images at their native scales: when the two inputs
of D_lambda / D_s sit at different resolutions, the window and stride on the
high-resolution side are multiplied by the resolution ratio so that windows
cover corresponding ground footprints.  Window statistics are invariant under
pixel replication with this convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .raster import FusionProduct, MultispectralImage, RasterBand

REDUCED_METRICS = ("SAM", "CC", "UIQI", "Q4", "ERGAS")
FULL_METRICS = ("D_lambda", "D_s", "QNR")


@dataclass(frozen=True)
class MetricConfig:
    """Knobs shared by the windowed indices and the distortion exponents.

    ``ratio`` is the PAN-to-MS pixel-size ratio d_h/d_l used by ERGAS
    (1/4 for a 4:1 sharpening ratio).
    """

    window: int = 32
    stride: int = 32
    p: int = 1
    q: int = 1
    alpha: float = 1.0
    beta: float = 1.0
    ratio: Fraction = Fraction(1, 4)

    def __post_init__(self):
        if self.window < 2:
            raise InvalidInputError(f"window must be >= 2, got {self.window}")
        if self.stride < 1:
            raise InvalidInputError(f"stride must be >= 1, got {self.stride}")
        if self.p < 1 or self.q < 1:
            raise InvalidInputError("exponents p and q must be >= 1")
        if float(self.ratio) <= 0:
            raise InvalidInputError("pixel-size ratio must be positive")


def _as_ms(image) -> MultispectralImage:
    if isinstance(image, FusionProduct):
        return image.image
    if isinstance(image, MultispectralImage):
        return image
    raise InvalidInputError(f"expected a multispectral image, got {type(image).__name__}")


def _as_band(image) -> RasterBand:
    if isinstance(image, RasterBand):
        return image
    raise InvalidInputError(f"expected a single band, got {type(image).__name__}")


# ---------------------------------------------------------------------------
# spectral angle


def _angle_map_degrees(f: np.ndarray, m: np.ndarray) -> np.ndarray:
    dot = np.sum(f * m, axis=0)
    sf = np.sum(f * f, axis=0)
    sm = np.sum(m * m, axis=0)
    # single sqrt of the product keeps cos exactly 1 for identical vectors
    norm = np.sqrt(sf * sm)
    valid = norm > 0.0
    cosv = np.ones_like(dot)
    cosv[valid] = np.clip(dot[valid] / norm[valid], -1.0, 1.0)
    ang = np.degrees(np.arccos(cosv))
    ang[~valid] = 0.0  # zero spectral vectors contribute a zero angle
    return ang


def _check_pair(F, M):
    fi, mi = _as_ms(F), _as_ms(M)
    if fi.band_count != mi.band_count:
        raise InvalidInputError(
            f"band counts differ: {fi.band_count} vs {mi.band_count}"
        )
    if (fi.height, fi.width) != (mi.height, mi.width):
        raise InvalidInputError(
            f"dimensions differ: {fi.height}x{fi.width} vs {mi.height}x{mi.width}"
        )
    return fi, mi


def sam_global(F, M) -> float:
    """Mean per-pixel spectral angle between F and M, in degrees."""
    fi, mi = _check_pair(F, M)
    if fi.band_count < 2:
        raise InvalidInputError("spectral angle needs at least two bands")
    return float(_angle_map_degrees(fi.to_array(), mi.to_array()).mean())


def sam_map(F, M) -> RasterBand:
    """Per-pixel angle map linearized so min maps to 0 and max to 255.

    Rounding is half-up; a constant angle map yields all zeros.
    """
    fi, mi = _check_pair(F, M)
    if fi.band_count < 2:
        raise InvalidInputError("spectral angle needs at least two bands")
    ang = _angle_map_degrees(fi.to_array(), mi.to_array())
    lo, hi = float(ang.min()), float(ang.max())
    if hi == lo:
        return RasterBand(np.zeros_like(ang))
    return RasterBand(np.floor((ang - lo) / (hi - lo) * 255.0 + 0.5))


# ---------------------------------------------------------------------------
# correlation coefficient


def _cc_band(f: np.ndarray, m: np.ndarray) -> float:
    fc = f - f.mean()
    mc = m - m.mean()
    den = math.sqrt(float(np.sum(fc * fc)) * float(np.sum(mc * mc)))
    if den == 0.0:
        raise DegenerateInputError("correlation undefined for a constant image")
    return float(np.sum(fc * mc)) / den


def cc(F, M) -> float:
    """Pearson correlation over all pixels; band-averaged for multiband input."""
    if isinstance(F, RasterBand) or isinstance(M, RasterBand):
        f, m = _as_band(F), _as_band(M)
        if f.data.shape != m.data.shape:
            raise InvalidInputError("band dimensions differ")
        return _cc_band(f.data, m.data)
    fi, mi = _check_pair(F, M)
    vals = [_cc_band(fb.data, mb.data) for fb, mb in zip(fi.bands, mi.bands)]
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# universal image quality index


def _q_window(a: np.ndarray, b: np.ndarray) -> float:
    """Three-factor similarity (correlation x luminance x contrast) on one tile.

    Conventions for degenerate tiles: both constant and equal -> 1, both
    constant and unequal -> 0, exactly one constant -> 0.  Sample statistics
    use ddof = 1.
    """
    n = a.size
    mu_a = float(a.mean())
    mu_b = float(b.mean())
    da = a - mu_a
    db = b - mu_b
    var_a = float(np.sum(da * da)) / (n - 1)
    var_b = float(np.sum(db * db)) / (n - 1)
    if var_a == 0.0 and var_b == 0.0:
        return 1.0 if mu_a == mu_b else 0.0
    if var_a == 0.0 or var_b == 0.0:
        return 0.0
    cov = float(np.sum(da * db)) / (n - 1)
    corr = cov / math.sqrt(var_a * var_b)
    mu_sq = mu_a * mu_a + mu_b * mu_b
    lum = 1.0 if mu_sq == 0.0 else 2.0 * mu_a * mu_b / mu_sq
    con = 2.0 * math.sqrt(var_a * var_b) / (var_a + var_b)
    return corr * lum * con


def _window_origins(h: int, w: int, window: int, stride: int):
    if h < window or w < window:
        raise InvalidInputError(
            f"image {h}x{w} is smaller than the {window}-pixel window"
        )
    return [(y, x) for y in range(0, h - window + 1, stride)
            for x in range(0, w - window + 1, stride)]


def _uiqi_arrays(a: np.ndarray, b: np.ndarray, window: int, stride: int) -> float:
    if a.shape != b.shape:
        raise InvalidInputError(f"dimensions differ: {a.shape} vs {b.shape}")
    origins = _window_origins(a.shape[0], a.shape[1], window, stride)
    total = 0.0
    for y, x in origins:
        total += _q_window(a[y : y + window, x : x + window],
                           b[y : y + window, x : x + window])
    return total / len(origins)


def uiqi(A: RasterBand, B: RasterBand, cfg: MetricConfig | None = None) -> float:
    """Wang-Bovik index averaged over window x window tiles at the given stride."""
    cfg = cfg or MetricConfig()
    a, b = _as_band(A), _as_band(B)
    return _uiqi_arrays(a.data, b.data, cfg.window, cfg.stride)


# ---------------------------------------------------------------------------
# quaternion Q4


def _quat_conj_product_mean(df: np.ndarray, dm: np.ndarray) -> np.ndarray:
    """Mean of df * conj(dm) over pixels, ddof = 1; components (w, x, y, z).

    df and dm are (4, n) deviation arrays whose rows are the quaternion parts.
    """
    a0, a1, a2, a3 = df
    b0, b1, b2, b3 = dm
    n = df.shape[1]
    cw = np.sum(a0 * b0 + a1 * b1 + a2 * b2 + a3 * b3)
    cx = np.sum(-a0 * b1 + a1 * b0 - a2 * b3 + a3 * b2)
    cy = np.sum(-a0 * b2 + a1 * b3 + a2 * b0 - a3 * b1)
    cz = np.sum(-a0 * b3 - a1 * b2 + a2 * b1 + a3 * b0)
    return np.array([cw, cx, cy, cz]) / (n - 1)


def _q4_window(fw: np.ndarray, mw: np.ndarray) -> float:
    n = fw.shape[1] * fw.shape[2]
    f = fw.reshape(4, n)
    m = mw.reshape(4, n)
    mu_f = f.mean(axis=1)
    mu_m = m.mean(axis=1)
    df = f - mu_f[:, None]
    dm = m - mu_m[:, None]
    var_f = float(np.sum(df * df)) / (n - 1)
    var_m = float(np.sum(dm * dm)) / (n - 1)
    if var_f == 0.0 and var_m == 0.0:
        return 1.0 if np.array_equal(mu_f, mu_m) else 0.0
    if var_f == 0.0 or var_m == 0.0:
        return 0.0
    cov_mod = float(np.linalg.norm(_quat_conj_product_mean(df, dm)))
    corr = cov_mod / math.sqrt(var_f * var_m)
    nf = float(np.linalg.norm(mu_f))
    nm = float(np.linalg.norm(mu_m))
    mu_sq = nf * nf + nm * nm
    lum = 1.0 if mu_sq == 0.0 else 2.0 * nf * nm / mu_sq
    con = 2.0 * math.sqrt(var_f * var_m) / (var_f + var_m)
    return corr * lum * con


def q4(F, M, cfg: MetricConfig | None = None) -> float:
    """Quaternion-valued UIQI for exactly four bands, averaged over windows."""
    cfg = cfg or MetricConfig()
    fi, mi = _check_pair(F, M)
    if fi.band_count != 4:
        raise InvalidInputError(f"Q4 requires exactly 4 bands, got {fi.band_count}")
    f = fi.to_array()
    m = mi.to_array()
    origins = _window_origins(fi.height, fi.width, cfg.window, cfg.stride)
    total = 0.0
    for y, x in origins:
        total += _q4_window(f[:, y : y + cfg.window, x : x + cfg.window],
                            m[:, y : y + cfg.window, x : x + cfg.window])
    return total / len(origins)


# ---------------------------------------------------------------------------
# ERGAS


def ergas(F, M, cfg: MetricConfig | None = None) -> float:
    """Scaled RMS of band-relative errors: 100 (d_h/d_l) sqrt(mean_k (RMSE_k / mu_k)^2)."""
    cfg = cfg or MetricConfig()
    fi, mi = _check_pair(F, M)
    acc = 0.0
    for fb, mb in zip(fi.bands, mi.bands):
        mu = float(mb.data.mean())
        if mu == 0.0:
            raise DegenerateInputError("ERGAS undefined for a zero-mean reference band")
        rmse = math.sqrt(float(np.mean((fb.data - mb.data) ** 2)))
        acc += (rmse / mu) ** 2
    return 100.0 * float(cfg.ratio) * math.sqrt(acc / fi.band_count)


# ---------------------------------------------------------------------------
# no-reference distortions


def _scale_factor(low: MultispectralImage, high_h: int, high_w: int) -> int:
    if high_h % low.height or high_w % low.width:
        raise InvalidInputError(
            f"high-resolution size {high_h}x{high_w} is not an integer multiple "
            f"of {low.height}x{low.width}"
        )
    r_h = high_h // low.height
    r_w = high_w // low.width
    if r_h != r_w:
        raise InvalidInputError(f"anisotropic scale factors {r_h} vs {r_w}")
    return r_h


def d_lambda(M, F, cfg: MetricConfig | None = None) -> float:
    """Spectral distortion: p-norm gap between inter-band UIQI tables of M and F.

    M sits at MS scale and F at PAN scale; windows on the F side scale with
    the resolution ratio.
    """
    cfg = cfg or MetricConfig()
    mi = _as_ms(M)
    fi = _as_ms(F)
    if mi.band_count != fi.band_count:
        raise InvalidInputError("band counts differ")
    k = mi.band_count
    if k < 2:
        raise InvalidInputError("spectral distortion needs at least two bands")
    r = _scale_factor(mi, fi.height, fi.width)
    m = mi.to_array()
    f = fi.to_array()
    total = 0.0
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            q_m = _uiqi_arrays(m[i], m[j], cfg.window, cfg.stride)
            q_f = _uiqi_arrays(f[i], f[j], cfg.window * r, cfg.stride * r)
            total += abs(q_m - q_f) ** cfg.p
    return (total / (k * (k - 1))) ** (1.0 / cfg.p)


def d_s(M, F, P: RasterBand, P_L: RasterBand, cfg: MetricConfig | None = None) -> float:
    """Spatial distortion: q-norm gap between UIQI(band, PAN) at the two scales."""
    cfg = cfg or MetricConfig()
    mi = _as_ms(M)
    fi = _as_ms(F)
    if mi.band_count != fi.band_count:
        raise InvalidInputError("band counts differ")
    if (P.height, P.width) != (fi.height, fi.width):
        raise InvalidInputError("PAN and fused dimensions differ")
    if (P_L.height, P_L.width) != (mi.height, mi.width):
        raise InvalidInputError("degraded PAN and MS dimensions differ")
    r = _scale_factor(mi, fi.height, fi.width)
    total = 0.0
    for mb, fb in zip(mi.bands, fi.bands):
        q_lo = _uiqi_arrays(mb.data, P_L.data, cfg.window, cfg.stride)
        q_hi = _uiqi_arrays(fb.data, P.data, cfg.window * r, cfg.stride * r)
        total += abs(q_lo - q_hi) ** cfg.q
    return (total / mi.band_count) ** (1.0 / cfg.q)


def qnr(dl: float, ds: float, cfg: MetricConfig | None = None) -> float:
    """No-reference quality: (1 - D_lambda)^alpha * (1 - D_s)^beta."""
    cfg = cfg or MetricConfig()
    if not (0.0 <= dl <= 1.0) or not (0.0 <= ds <= 1.0):
        raise InvalidInputError(f"distortions must lie in [0, 1], got {dl}, {ds}")
    return (1.0 - dl) ** cfg.alpha * (1.0 - ds) ** cfg.beta


# ---------------------------------------------------------------------------
# reports and evaluation protocols


@dataclass(frozen=True)
class QualityReport:
    """Named metric values for one protocol mode, with the configuration echoed."""

    mode: str
    entries: dict
    config: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        if self.mode not in ("reduced", "full"):
            raise InvalidInputError(f"unknown report mode {self.mode!r}")
        wanted = REDUCED_METRICS if self.mode == "reduced" else FULL_METRICS
        entries = {name: float(self.entries[name]) for name in wanted
                   if name in self.entries}
        if set(entries) != set(wanted):
            raise InvalidInputError(
                f"{self.mode} report needs exactly {wanted}, got {tuple(self.entries)}"
            )
        if not all(math.isfinite(v) for v in entries.values()):
            raise InvalidInputError("report contains non-finite metric values")
        object.__setattr__(self, "entries", entries)

    def metric_names(self) -> tuple:
        return REDUCED_METRICS if self.mode == "reduced" else FULL_METRICS

    def to_csv(self) -> str:
        names = self.metric_names()
        head = ",".join(names)
        row = ",".join(f"{self.entries[n]:.6g}" for n in names)
        return f"{head}\n{row}\n"

    def to_kv(self) -> str:
        lines = [
            f"mode = {self.mode}",
            f"window = {self.config.window}",
            f"stride = {self.config.stride}",
            f"p = {self.config.p}",
            f"q = {self.config.q}",
            f"alpha = {self.config.alpha!r}",
            f"beta = {self.config.beta!r}",
            f"ratio = {self.config.ratio}",
        ]
        for name in self.metric_names():
            lines.append(f"{name} = {self.entries[name]!r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_kv(text: str) -> "QualityReport":
        fields = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        mode = fields.pop("mode")
        cfg = MetricConfig(
            window=int(fields.pop("window")),
            stride=int(fields.pop("stride")),
            p=int(fields.pop("p")),
            q=int(fields.pop("q")),
            alpha=float(fields.pop("alpha")),
            beta=float(fields.pop("beta")),
            ratio=Fraction(fields.pop("ratio")),
        )
        known = REDUCED_METRICS + FULL_METRICS
        entries = {k: float(v) for k, v in fields.items() if k in known}
        return QualityReport(mode=mode, entries=entries, config=cfg)


def evaluate_reduced(F, GT, cfg: MetricConfig | None = None) -> QualityReport:
    """Full-reference scoring of a fused image against ground truth."""
    cfg = cfg or MetricConfig()
    fi, gi = _check_pair(F, GT)
    uiqi_mean = float(
        np.mean([_uiqi_arrays(fb.data, gb.data, cfg.window, cfg.stride)
                 for fb, gb in zip(fi.bands, gi.bands)])
    )
    entries = {
        "SAM": sam_global(fi, gi),
        "CC": cc(fi, gi),
        "UIQI": uiqi_mean,
        "Q4": q4(fi, gi, cfg),
        "ERGAS": ergas(fi, gi, cfg),
    }
    return QualityReport(mode="reduced", entries=entries, config=cfg)


def evaluate_full(F, M, P: RasterBand, P_L: RasterBand,
                  cfg: MetricConfig | None = None) -> QualityReport:
    """No-reference scoring of a fused image against its MS/PAN inputs."""
    cfg = cfg or MetricConfig()
    dl = d_lambda(M, F, cfg)
    ds = d_s(M, F, P, P_L, cfg)
    entries = {"D_lambda": dl, "D_s": ds, "QNR": qnr(dl, ds, cfg)}
    return QualityReport(mode="full", entries=entries, config=cfg)
