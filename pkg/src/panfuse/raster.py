"""Image containers, resampling, degradation, histogram matching and detail injection.

All containers are immutable value objects backed by read-only float64 arrays;
every operation is a pure function of its inputs, so values can be shared
freely across threads.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    FormatError,
    InvalidInputError,
    NumericalError,
)

PFR_MAGIC = b"PFR1"
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _freeze(data) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RasterBand:
    """One image band: row-major float64 intensities, nominally in [0, 1].

    The payload must be a non-empty 2-D array of finite values.  The array is
    frozen at construction; derive new bands instead of mutating.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise InvalidInputError(
                f"band data must be a non-empty 2-D array, got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise InvalidInputError("band data contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MultispectralImage:
    """K co-registered bands of identical size plus the MS-to-PAN scale ratio.

    ``scale_ratio`` is the number of PAN pixels per MS pixel along each axis
    (1 when the image already sits at PAN scale).
    """

    bands: tuple
    scale_ratio: int = 1

    def __post_init__(self):
        bands = tuple(
            b if isinstance(b, RasterBand) else RasterBand(b) for b in self.bands
        )
        if len(bands) < 1:
            raise InvalidInputError("a multispectral image needs at least one band")
        h, w = bands[0].height, bands[0].width
        for i, b in enumerate(bands):
            if (b.height, b.width) != (h, w):
                raise InvalidInputError(
                    f"band {i} is {b.height}x{b.width}, expected {h}x{w}"
                )
        ratio = int(self.scale_ratio)
        if ratio < 1:
            raise InvalidInputError(f"scale_ratio must be >= 1, got {ratio}")
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "scale_ratio", ratio)

    @property
    def band_count(self) -> int:
        return len(self.bands)

    @property
    def height(self) -> int:
        return self.bands[0].height

    @property
    def width(self) -> int:
        return self.bands[0].width

    def to_array(self) -> np.ndarray:
        """Stack bands into a (K, H, W) float64 array."""
        return np.stack([b.data for b in self.bands])

    @classmethod
    def from_array(cls, arr, scale_ratio: int = 1) -> "MultispectralImage":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidInputError(f"expected (K, H, W) array, got shape {arr.shape}")
        return cls(tuple(RasterBand(a) for a in arr), scale_ratio)


@dataclass(frozen=True)
class IntensityWeights:
    """Affine band combination defining the intensity component."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.size == 0 or not np.isfinite(w).all() or not math.isfinite(self.bias):
            raise InvalidInputError("weights and bias must be finite and non-empty")
        object.__setattr__(self, "weights", _freeze(w.reshape(-1)))
        object.__setattr__(self, "bias", float(self.bias))


@dataclass(frozen=True)
class InjectionGains:
    """Per-band multipliers applied to the detail map."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.float64).ravel()
        if g.size == 0 or not np.isfinite(g).all():
            raise InvalidInputError("gains must be finite and non-empty")
        object.__setattr__(self, "gains", _freeze(g.reshape(-1)))


@dataclass(frozen=True)
class FusionProduct:
    """Fused K-band image at PAN resolution plus method provenance."""

    image: MultispectralImage
    method: str
    provenance: dict = field(default_factory=dict)

    def to_array(self) -> np.ndarray:
        return self.image.to_array()


# ---------------------------------------------------------------------------
# resampling


def _catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Weights of the four Catmull-Rom taps for fractional offsets t in [0, 1)."""
    t2 = t * t
    t3 = t2 * t
    return np.stack(
        [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ]
    )


def _bicubic_axis_taps(n_in: int, r: int):
    # Center-aligned source coordinates; tap indices clamp at the borders.
    dst = np.arange(n_in * r, dtype=np.float64)
    src = (dst + 0.5) / r - 0.5
    i0 = np.floor(src).astype(np.int64)
    w = _catmull_rom_weights(src - i0)
    idx = np.stack([np.clip(i0 + k - 1, 0, n_in - 1) for k in range(4)])
    return idx, w


def _bicubic_up(a: np.ndarray, r: int) -> np.ndarray:
    idx, w = _bicubic_axis_taps(a.shape[0], r)
    a = sum(a[idx[k]] * w[k][:, None] for k in range(4))
    idx, w = _bicubic_axis_taps(a.shape[1], r)
    return sum(a[:, idx[k]] * w[k][None, :] for k in range(4))


def upsample_band(band: RasterBand, r: int, mode: str = "bicubic") -> RasterBand:
    """Upsample one band by an integer factor; see :func:`upsample`."""
    r = int(r)
    if r < 1:
        raise InvalidInputError(f"upsample ratio must be >= 1, got {r}")
    if mode not in ("replicate", "bicubic"):
        raise InvalidInputError(f"unknown upsample mode {mode!r}")
    if r == 1:
        return band
    if mode == "replicate":
        return RasterBand(np.repeat(np.repeat(band.data, r, axis=0), r, axis=1))
    return RasterBand(_bicubic_up(band.data, r))


def upsample(ms: MultispectralImage, r: int, mode: str = "bicubic") -> MultispectralImage:
    """Upsample every band by r per axis.

    ``replicate`` copies each pixel into an r x r block; ``bicubic`` uses a
    4x4 Catmull-Rom kernel with tap indices clamped at the edges.  The result
    sits at PAN scale, so its scale_ratio is 1.
    """
    bands = tuple(upsample_band(b, r, mode) for b in ms.bands)
    return MultispectralImage(bands, scale_ratio=1)


# ---------------------------------------------------------------------------
# MTF-matched degradation


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian, truncated at 4 sigma (radius >= 1)."""
    radius = max(1, int(math.ceil(4.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def mtf_sigma(r: int, nyquist_gain: float) -> float:
    """Blur std-dev (pixels) whose response hits nyquist_gain at the decimated
    grid's Nyquist frequency."""
    return math.sqrt(-2.0 * math.log(nyquist_gain)) * r / (2.0 * math.pi)


def _separable_blur(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    # Symmetric (half-sample) border reflection along each axis in turn.
    radius = len(k) // 2
    h, w = a.shape
    ap = np.pad(a, ((radius, radius), (0, 0)), mode="symmetric")
    out = np.zeros_like(a)
    for i, kv in enumerate(k):
        out += kv * ap[i : i + h, :]
    ap = np.pad(out, ((0, 0), (radius, radius)), mode="symmetric")
    out2 = np.zeros_like(a)
    for i, kv in enumerate(k):
        out2 += kv * ap[:, i : i + w]
    return out2


def mtf_degrade(band: RasterBand, r: int, nyquist_gain: float = 0.30) -> RasterBand:
    """Sensor-style lowpass plus decimation.

    Applies a separable Gaussian blur with sigma = sqrt(-2 ln g) * r / (2 pi)
    (kernel truncated at 4 sigma, symmetric borders), then decimates by
    averaging each r x r block.  With r = 1 only the blur is applied.
    """
    r = int(r)
    if r < 1:
        raise InvalidInputError(f"degrade ratio must be >= 1, got {r}")
    if not (0.0 < nyquist_gain < 1.0):
        raise InvalidInputError(f"nyquist_gain must lie in (0, 1), got {nyquist_gain}")
    a = band.data
    if a.shape[0] % r or a.shape[1] % r:
        raise InvalidInputError(
            f"band dimensions {a.shape} are not divisible by ratio {r}"
        )
    blurred = _separable_blur(a, gaussian_kernel(mtf_sigma(r, nyquist_gain)))
    if r == 1:
        return RasterBand(blurred)
    h, w = blurred.shape
    dec = blurred.reshape(h // r, r, w // r, r).mean(axis=(1, 3))
    return RasterBand(dec)


def mtf_degrade_ms(
    ms: MultispectralImage, r: int, nyquist_gain: float = 0.30
) -> MultispectralImage:
    """Apply :func:`mtf_degrade` band by band, keeping the MS scale ratio."""
    bands = tuple(mtf_degrade(b, r, nyquist_gain) for b in ms.bands)
    return MultispectralImage(bands, scale_ratio=ms.scale_ratio * r)


# ---------------------------------------------------------------------------
# statistics-based operations


def _sample_std(a: np.ndarray) -> float:
    if a.size < 2:
        return 0.0
    return float(a.std(ddof=1))


def histogram_match(src: RasterBand, ref_stats_of: RasterBand) -> RasterBand:
    """Moment matching: shift/scale src so its mean and std equal the reference's.

    A constant source maps to a constant band at the reference mean.  This is
    a deliberate simplification of CDF histogram specification: deterministic
    and compatible with gradient-based use.
    """
    s = src.data
    mu_s = float(s.mean())
    mu_r = float(ref_stats_of.data.mean())
    sd_s = _sample_std(s)
    sd_r = _sample_std(ref_stats_of.data)
    if sd_s == 0.0:
        return RasterBand(np.full_like(s, mu_r))
    return RasterBand((s - mu_s) * (sd_r / sd_s) + mu_r)


def intensity_component(ms: MultispectralImage, weights: IntensityWeights) -> RasterBand:
    """Pixelwise affine combination of bands: bias + sum_k w_k * band_k."""
    if weights.weights.size != ms.band_count:
        raise InvalidInputError(
            f"{weights.weights.size} weights for {ms.band_count} bands"
        )
    acc = np.full((ms.height, ms.width), weights.bias, dtype=np.float64)
    for wk, band in zip(weights.weights, ms.bands):
        acc += wk * band.data
    return RasterBand(acc)


def estimate_weights(ms_up: MultispectralImage, pan: RasterBand) -> IntensityWeights:
    """Least-squares fit of the PAN band on the upsampled MS bands plus a bias.

    Solves the normal equations with a 1e-8 ridge on the diagonal.
    """
    if (pan.height, pan.width) != (ms_up.height, ms_up.width):
        raise InvalidInputError(
            f"pan is {pan.height}x{pan.width}, ms is {ms_up.height}x{ms_up.width}"
        )
    k = ms_up.band_count
    n = pan.data.size
    if n < k + 1:
        raise InvalidInputError(f"need at least {k + 1} pixels, got {n}")
    x = np.empty((n, k + 1), dtype=np.float64)
    for j, band in enumerate(ms_up.bands):
        x[:, j] = band.data.ravel()
    x[:, k] = 1.0
    a = x.T @ x + 1e-8 * np.eye(k + 1)
    b = x.T @ pan.data.ravel()
    try:
        beta = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"weight estimation system is singular: {exc}") from exc
    if not np.isfinite(beta).all():
        raise NumericalError("weight estimation produced non-finite coefficients")
    return IntensityWeights(weights=beta[:k], bias=float(beta[k]))


def estimate_gains(ms_up: MultispectralImage, intensity: RasterBand) -> InjectionGains:
    """Global covariance-ratio gains: g_k = cov(band_k, I) / var(I), ddof = 1."""
    if (intensity.height, intensity.width) != (ms_up.height, ms_up.width):
        raise InvalidInputError("intensity and ms dimensions differ")
    i = intensity.data.ravel()
    n = i.size
    if n < 2:
        raise DegenerateInputError("need at least two pixels to estimate gains")
    ic = i - i.mean()
    var_i = float(ic @ ic) / (n - 1)
    if var_i == 0.0:
        raise DegenerateInputError("intensity component has zero variance")
    gains = np.empty(ms_up.band_count, dtype=np.float64)
    for j, band in enumerate(ms_up.bands):
        b = band.data.ravel()
        gains[j] = (float((b - b.mean()) @ ic) / (n - 1)) / var_i
    return InjectionGains(gains)


def detail_inject(
    ms_up: MultispectralImage,
    pan: RasterBand,
    gains: InjectionGains,
    weights: IntensityWeights,
) -> FusionProduct:
    """Component-substitution fusion: band_k + g_k * (pan - intensity), clamped to [0, 1]."""
    if (pan.height, pan.width) != (ms_up.height, ms_up.width):
        raise InvalidInputError("pan and upsampled ms dimensions differ")
    if gains.gains.size != ms_up.band_count:
        raise InvalidInputError(
            f"{gains.gains.size} gains for {ms_up.band_count} bands"
        )
    detail = pan.data - intensity_component(ms_up, weights).data
    fused = tuple(
        RasterBand(np.clip(band.data + g * detail, 0.0, 1.0))
        for g, band in zip(gains.gains, ms_up.bands)
    )
    return FusionProduct(MultispectralImage(fused, scale_ratio=1), method="cs")


# ---------------------------------------------------------------------------
# container IO (.pfr) and grayscale PNG ingestion


def save_raster(image, path) -> None:
    """Write a band or multispectral image as a .pfr container.

    Layout: magic "PFR1", little-endian u32 width/height/band_count, then
    float32 little-endian samples, band-sequential, row-major within a band.
    """
    if isinstance(image, FusionProduct):
        image = image.image
    if isinstance(image, RasterBand):
        arr = image.data[None, :, :]
    elif isinstance(image, MultispectralImage):
        arr = image.to_array()
    else:
        raise InvalidInputError(f"cannot save object of type {type(image).__name__}")
    k, h, w = arr.shape
    header = struct.pack("<4sIII", PFR_MAGIC, w, h, k)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f4").tobytes())


def load_raster(path, scale_ratio: int = 1):
    """Read a .pfr container (or a grayscale PNG) back into image objects.

    Single-band files become a :class:`RasterBand`; multiband files become a
    :class:`MultispectralImage` with the supplied scale_ratio.  PNG input is
    normalized to [0, 1] by the sample-type maximum.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if str(path).lower().endswith(".png"):
        return _load_png_gray(blob, str(path))
    if len(blob) < 4 or blob[:4] != PFR_MAGIC:
        raise FormatError(
            f"bad magic at byte 0: expected {PFR_MAGIC!r}, got {blob[:4]!r}"
        )
    if len(blob) < 16:
        raise FormatError(f"truncated header: expected 16 bytes, got {len(blob)}")
    w, h, k = struct.unpack_from("<III", blob, 4)
    if w == 0 or h == 0 or k == 0:
        raise FormatError(f"zero dimension in header at byte 4: {w}x{h}x{k}")
    if w * h * k > 2**34:
        raise FormatError(
            f"dimension overflow in header at byte 4: {w}x{h}x{k} samples"
        )
    expected = 16 + w * h * k * 4
    if len(blob) != expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(blob)} "
            "(samples begin at byte 16)"
        )
    vals = (
        np.frombuffer(blob, dtype="<f4", offset=16)
        .astype(np.float64)
        .reshape(k, h, w)
    )
    if not np.isfinite(vals).all():
        raise FormatError("payload contains non-finite samples (from byte 16)")
    if k == 1:
        return RasterBand(vals[0])
    return MultispectralImage.from_array(vals, scale_ratio)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _png_unfilter(raw: bytes, height: int, stride: int, bpp: int) -> bytearray:
    need = height * (stride + 1)
    if len(raw) != need:
        raise FormatError(
            f"truncated PNG image data: expected {need} filtered bytes, got {len(raw)}"
        )
    out = bytearray(height * stride)
    prior = bytearray(stride)
    for y in range(height):
        row_off = y * (stride + 1)
        ftype = raw[row_off]
        line = bytearray(raw[row_off + 1 : row_off + 1 + stride])
        if ftype == 0:
            pass
        elif ftype == 1:
            for i in range(bpp, stride):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:
            for i in range(stride):
                line[i] = (line[i] + prior[i]) & 0xFF
        elif ftype == 3:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + ((left + prior[i]) >> 1)) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                left = line[i - bpp] if i >= bpp else 0
                up_left = prior[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + _paeth(left, prior[i], up_left)) & 0xFF
        else:
            raise FormatError(f"unknown PNG filter type {ftype} at byte {row_off}")
        out[y * stride : (y + 1) * stride] = line
        prior = line
    return out


def _load_png_gray(blob: bytes, path: str) -> RasterBand:
    if blob[:8] != _PNG_SIGNATURE:
        raise FormatError(f"bad PNG signature at byte 0 in {path}")
    pos = 8
    ihdr = None
    idat = bytearray()
    seen_end = False
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise FormatError(f"truncated PNG chunk header at byte {pos}")
        length, ctype = struct.unpack_from(">I4s", blob, pos)
        data_start = pos + 8
        data_end = data_start + length
        if data_end + 4 > len(blob):
            raise FormatError(f"truncated PNG chunk {ctype!r} at byte {pos}")
        chunk = blob[data_start:data_end]
        (crc,) = struct.unpack_from(">I", blob, data_end)
        if crc != zlib.crc32(ctype + chunk) & 0xFFFFFFFF:
            raise FormatError(f"bad CRC for PNG chunk {ctype!r} at byte {data_end}")
        if ctype == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", chunk)
        elif ctype == b"IDAT":
            idat.extend(chunk)
        elif ctype == b"IEND":
            seen_end = True
            break
        pos = data_end + 4
    if ihdr is None:
        raise FormatError(f"missing IHDR chunk in {path}")
    if not seen_end:
        raise FormatError(f"missing IEND chunk in {path}")
    width, height, depth, color, comp, filt, interlace = ihdr
    if color != 0:
        raise FormatError(f"only grayscale PNG is supported, got color type {color}")
    if depth not in (8, 16):
        raise FormatError(f"only 8/16-bit PNG is supported, got depth {depth}")
    if comp != 0 or filt != 0 or interlace != 0:
        raise FormatError("unsupported PNG compression/filter/interlace settings")
    if width == 0 or height == 0:
        raise FormatError("zero PNG dimensions in IHDR")
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise FormatError(f"corrupt PNG image data in {path}: {exc}") from exc
    bpp = depth // 8
    samples = _png_unfilter(raw, height, width * bpp, bpp)
    dtype = ">u2" if depth == 16 else np.uint8
    arr = np.frombuffer(bytes(samples), dtype=dtype).reshape(height, width)
    return RasterBand(arr.astype(np.float64) / float(2**depth - 1))
