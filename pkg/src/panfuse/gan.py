"""Unsupervised generative fusion: generator, dual discriminators, training loop.

The generator refines a bicubic upsample of the MS input with a small residual
CNN conditioned on the PAN band.  Two critics push the refinement from both
sides: a spectral discriminator sees MS-scale images (real: the original MS;
fake: the degraded generator output) and a spatial discriminator sees
PAN-scale intensities (real: the PAN band; fake: the intensity of the
generator output).  The generator objective combines two differentiable
similarity-index losses with small non-saturating adversarial terms.

Training is single-image and fully deterministic given the seed: there is no
reference target and no dataset split.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .errors import (
    DegenerateInputError,
    InvalidInputError,
    NumericalError,
    TrainingDivergenceError,
)
from .raster import (
    FusionProduct,
    IntensityWeights,
    MultispectralImage,
    RasterBand,
    estimate_weights,
    upsample,
)


def _he_uniform(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (c_in * k * k))
    return rng.uniform(-limit, limit, size=(c_out, c_in, k, k))


@dataclass(frozen=True)
class GeneratorSpec:
    """Residual fusion network: two hidden 3x3 conv layers, zero-initialized head.

    Input is the upsampled MS stacked with PAN (K+1 channels); the head output
    is added to the upsampled MS and squashed onto (0, 1), so a zero head
    reproduces the bicubic upsample through the soft clamp.
    """

    bands: int
    hidden_channels: int = 16
    kernel_size: int = 3
    slope: float = 0.2

    def init_params(self, rng: np.random.Generator, prefix: str = "gen") -> ParameterSet:
        k = self.kernel_size
        hid = self.hidden_channels
        params = ParameterSet()
        params.add(f"{prefix}.conv1.weight", _he_uniform(rng, hid, self.bands + 1, k))
        params.add(f"{prefix}.conv1.bias", np.zeros(hid))
        params.add(f"{prefix}.conv2.weight", _he_uniform(rng, hid, hid, k))
        params.add(f"{prefix}.conv2.bias", np.zeros(hid))
        params.add(f"{prefix}.head.weight", np.zeros((self.bands, hid, k, k)))
        params.add(f"{prefix}.head.bias", np.zeros(self.bands))
        return params

    def forward(self, params, ms_up: Tensor, pan: Tensor, prefix: str = "gen") -> Tensor:
        return self.forward_from(params, ad.concat_channels(ms_up, pan), ms_up, prefix)

    def forward_from(
        self, params, stacked: Tensor, ms_up: Tensor, prefix: str = "gen"
    ) -> Tensor:
        """Forward pass on a prebuilt (K+1, H, W) input; lets training loops
        reuse one constant input tensor across iterations."""
        h = ad.leaky_relu(
            ad.conv2d(stacked, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"]),
            self.slope,
        )
        h = ad.leaky_relu(
            ad.conv2d(h, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"]),
            self.slope,
        )
        residual = ad.conv2d(h, params[f"{prefix}.head.weight"], params[f"{prefix}.head.bias"])
        return ad.clamp_smooth(ad.add(ms_up, residual))


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Three strided 3x3 conv layers, then a mean-pooled sigmoid score in (0, 1)."""

    in_channels: int
    channels: tuple = (16, 32, 32)
    kernel_size: int = 3
    stride: int = 2
    slope: float = 0.2

    def init_params(self, rng: np.random.Generator, prefix: str) -> ParameterSet:
        k = self.kernel_size
        params = ParameterSet()
        c_in = self.in_channels
        for i, c_out in enumerate(self.channels, start=1):
            params.add(f"{prefix}.conv{i}.weight", _he_uniform(rng, c_out, c_in, k))
            params.add(f"{prefix}.conv{i}.bias", np.zeros(c_out))
            c_in = c_out
        return params

    def forward(self, params, x: Tensor, prefix: str) -> Tensor:
        h = x
        for i in range(1, len(self.channels) + 1):
            h = ad.leaky_relu(
                ad.conv2d(
                    h,
                    params[f"{prefix}.conv{i}.weight"],
                    params[f"{prefix}.conv{i}.bias"],
                    stride=self.stride,
                ),
                self.slope,
            )
        return ad.sigmoid(ad.mean(h))


@dataclass(frozen=True)
class TrainingConfig:
    """Iteration budget, learning rates and loss weights for :func:`train`."""

    iterations: int = 500
    lr_g: float = 5e-3
    lr_d: float = 1e-3
    lambda_spec: float = 1.0
    lambda_spat: float = 1.0
    lambda_adv_spec: float = 0.01
    lambda_adv_spat: float = 0.01
    seed: int = 0
    ratio: int = 4

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        for name in ("lambda_spec", "lambda_spat", "lambda_adv_spec", "lambda_adv_spat"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise InvalidInputError("learning rates must be positive")
        if self.ratio < 1:
            raise InvalidInputError("ratio must be >= 1")


LOG_COLUMNS = (
    "iteration",
    "L1",
    "L2",
    "adv_G_spec",
    "adv_G_spat",
    "D_spec_loss",
    "D_spat_loss",
    "total_G",
)


@dataclass
class TrainingLog:
    """Per-iteration loss record; L1/L2/adv columns are unweighted components."""

    rows: list = field(default_factory=list)

    def append(self, **values):
        self.rows.append(tuple(float(values[c]) for c in LOG_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        idx = LOG_COLUMNS.index(name)
        return np.array([row[idx] for row in self.rows])

    def to_csv(self) -> str:
        lines = [",".join(LOG_COLUMNS)]
        for row in self.rows:
            cells = [f"{int(row[0])}"] + [repr(v) for v in row[1:]]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_csv(text: str) -> "TrainingLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or tuple(lines[0].split(",")) != LOG_COLUMNS:
            raise InvalidInputError("unrecognized training-log header")
        log = TrainingLog()
        for ln in lines[1:]:
            cells = ln.split(",")
            log.rows.append(tuple(float(c) for c in cells))
        return log


# ---------------------------------------------------------------------------
# differentiable losses


def q_index(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable single-window Wang-Bovik similarity index.

    Algebraically identical to the three-factor product:
    4 * cov * mu_a * mu_b / ((var_a + var_b) * (mu_a^2 + mu_b^2)).
    """
    mu_a = ad.mean(a)
    mu_b = ad.mean(b)
    var_a = ad.variance(a)
    var_b = ad.variance(b)
    if float(var_a.data) + float(var_b.data) == 0.0:
        raise DegenerateInputError("similarity index undefined for two constant images")
    if float(mu_a.data) ** 2 + float(mu_b.data) ** 2 == 0.0:
        raise DegenerateInputError("similarity index undefined for two zero-mean images")
    cov = ad.covariance(a, b)
    num = 4.0 * cov * mu_a * mu_b
    den = (var_a + var_b) * (mu_a * mu_a + mu_b * mu_b)
    return num / den


def _as_tensor(fused) -> Tensor:
    if isinstance(fused, Tensor):
        return fused
    if isinstance(fused, FusionProduct):
        return Tensor(fused.to_array())
    if isinstance(fused, MultispectralImage):
        return Tensor(fused.to_array())
    raise InvalidInputError(f"cannot interpret {type(fused).__name__} as a fused image")


def spectral_loss(fused, ms: MultispectralImage, r: int) -> Tensor:
    """Mean over bands of 1 - Q(block-averaged fused band, original MS band).

    The fused image is degraded back to MS scale with a differentiable r x r
    block average, so the loss value lies in [0, 2].
    """
    fused_t = _as_tensor(fused)
    r = int(r)
    k, h, w = fused_t.shape
    if k != ms.band_count or h != ms.height * r or w != ms.width * r:
        raise InvalidInputError(
            f"fused {fused_t.shape} does not match {ms.band_count}x{ms.height}x{ms.width} "
            f"ms at ratio {r}"
        )
    degraded = ad.block_mean(fused_t, r)
    total = None
    for band_idx in range(k):
        q = q_index(
            ad.channel_slice(degraded, band_idx),
            Tensor(ms.bands[band_idx].data),
        )
        term = 1.0 - q
        total = term if total is None else total + term
    return ad.scalar_mul(total, 1.0 / k)


def intensity_of(fused, weights: IntensityWeights) -> Tensor:
    """Differentiable intensity component of a fused image: (1, H, W)."""
    return ad.channel_weighted_sum(_as_tensor(fused), weights.weights, weights.bias)


def _spatial_loss_from_intensity(intensity: Tensor, pan: RasterBand) -> Tensor:
    i_data = intensity.data
    sd_i = float(i_data.std(ddof=1))
    if sd_i == 0.0:
        raise DegenerateInputError("intensity of the fused image is constant")
    # PAN is moment-matched to the intensity; the matching statistics are
    # detached so gradients flow only through the intensity argument of Q.
    p = pan.data
    sd_p = float(p.std(ddof=1))
    if sd_p == 0.0:
        raise DegenerateInputError("pan band is constant")
    matched = (p - float(p.mean())) * (sd_i / sd_p) + float(i_data.mean())
    return 1.0 - q_index(intensity, Tensor(matched[None]))


def spatial_loss(fused, pan: RasterBand, weights: IntensityWeights) -> Tensor:
    """1 - Q between the fused intensity and the moment-matched PAN band."""
    fused_t = _as_tensor(fused)
    if fused_t.shape[1:] != (pan.height, pan.width):
        raise InvalidInputError(
            f"fused {fused_t.shape} and pan {pan.height}x{pan.width} dimensions differ"
        )
    return _spatial_loss_from_intensity(intensity_of(fused_t, weights), pan)


def _check_score(score: Tensor, name: str) -> None:
    v = float(score.data)
    if not (0.0 < v < 1.0):
        raise InvalidInputError(f"{name} score {v} outside (0, 1)")


def discriminator_loss(real_score: Tensor, fake_score: Tensor) -> Tensor:
    """Binary cross-entropy critic loss: -log D(real) - log(1 - D(fake))."""
    _check_score(real_score, "real")
    _check_score(fake_score, "fake")
    return ad.neg(ad.log(real_score)) + ad.neg(ad.log(1.0 - fake_score))


def generator_adversarial_loss(
    score_spec: Tensor, score_spat: Tensor, cfg: TrainingConfig
) -> Tensor:
    """Weighted non-saturating generator terms: -lambda * log D(fake), per critic."""
    _check_score(score_spec, "spectral fake")
    _check_score(score_spat, "spatial fake")
    return ad.scalar_mul(ad.neg(ad.log(score_spec)), cfg.lambda_adv_spec) + ad.scalar_mul(
        ad.neg(ad.log(score_spat)), cfg.lambda_adv_spat
    )


def generator_total_loss(l1: Tensor, l2: Tensor, adv: Tensor, cfg: TrainingConfig) -> Tensor:
    return ad.scalar_mul(l1, cfg.lambda_spec) + ad.scalar_mul(l2, cfg.lambda_spat) + adv


# ---------------------------------------------------------------------------
# training and inference


def train(
    ms: MultispectralImage, pan: RasterBand, cfg: TrainingConfig
) -> tuple[ParameterSet, TrainingLog]:
    """Alternating critic/generator optimization on a single MS/PAN pair.

    Per iteration: run the generator on (bicubic-upsampled MS, PAN); update the
    spectral critic on (real MS, degraded fused); update the spatial critic on
    (real PAN, fused intensity); then update the generator on the combined
    loss.  Everything is derived from ``cfg.seed``, so runs are reproducible
    bit for bit.
    """
    r = cfg.ratio
    if (pan.height, pan.width) != (ms.height * r, ms.width * r):
        raise InvalidInputError(
            f"pan {pan.height}x{pan.width} is not ms {ms.height}x{ms.width} times {r}"
        )
    k = ms.band_count
    rng = np.random.default_rng(cfg.seed)
    gen = GeneratorSpec(bands=k)
    disc_spec = DiscriminatorSpec(in_channels=k)
    disc_spat = DiscriminatorSpec(in_channels=1)
    g_params = gen.init_params(rng)
    ds_params = disc_spec.init_params(rng, "dspec")
    dt_params = disc_spat.init_params(rng, "dspat")

    ms_up = upsample(ms, r, "bicubic")
    weights = estimate_weights(ms_up, pan)
    ms_up_t = Tensor(ms_up.to_array())
    pan_t = Tensor(pan.data[None])
    ms_real = Tensor(ms.to_array())
    gen_input = ad.concat_channels(ms_up_t, pan_t)  # constant across iterations

    log = TrainingLog()
    for it in range(1, cfg.iterations + 1):
        try:
            _train_iteration(
                it, cfg, gen, disc_spec, disc_spat,
                g_params, ds_params, dt_params,
                gen_input, ms_up_t, pan_t, ms_real, ms, weights, pan, log,
            )
        except TrainingDivergenceError:
            raise
        except NumericalError as exc:
            raise TrainingDivergenceError(str(exc), iteration=it) from exc
    return g_params, log


def _train_iteration(
    it, cfg, gen, disc_spec, disc_spat,
    g_params, ds_params, dt_params,
    gen_input, ms_up_t, pan_t, ms_real, ms, weights, pan, log,
):
    r = cfg.ratio
    fused = gen.forward_from(g_params, gen_input, ms_up_t)
    fused_const = fused.detach()

    # spectral critic: original MS vs degraded generator output
    fake_ms = ad.block_mean(fused_const, r)
    d_spec_loss = discriminator_loss(
        disc_spec.forward(ds_params, ms_real, "dspec"),
        disc_spec.forward(ds_params, fake_ms, "dspec"),
    )
    ad.backward(d_spec_loss)
    ad.adam_step(ds_params, cfg.lr_d)

    # spatial critic: original PAN vs intensity of the generator output
    fake_intensity = intensity_of(fused_const, weights)
    d_spat_loss = discriminator_loss(
        disc_spat.forward(dt_params, pan_t, "dspat"),
        disc_spat.forward(dt_params, fake_intensity, "dspat"),
    )
    ad.backward(d_spat_loss)
    ad.adam_step(dt_params, cfg.lr_d)

    # generator: consistency losses plus adversarial terms with frozen critics
    l1 = spectral_loss(fused, ms, r)
    intensity = intensity_of(fused, weights)
    l2 = _spatial_loss_from_intensity(intensity, pan)
    ds_params.set_trainable(False)
    dt_params.set_trainable(False)
    try:
        score_spec = disc_spec.forward(ds_params, ad.block_mean(fused, r), "dspec")
        score_spat = disc_spat.forward(dt_params, intensity, "dspat")
        adv_spec = ad.neg(ad.log(score_spec))
        adv_spat = ad.neg(ad.log(score_spat))
        adv = ad.scalar_mul(adv_spec, cfg.lambda_adv_spec) + ad.scalar_mul(
            adv_spat, cfg.lambda_adv_spat
        )
        total = generator_total_loss(l1, l2, adv, cfg)
        if not math.isfinite(total.item()):
            raise TrainingDivergenceError("generator loss is non-finite", iteration=it)
        ad.backward(total)
    finally:
        ds_params.set_trainable(True)
        dt_params.set_trainable(True)
    ad.adam_step(g_params, cfg.lr_g)

    log.append(
        iteration=it,
        L1=l1.item(),
        L2=l2.item(),
        adv_G_spec=adv_spec.item(),
            adv_G_spat=adv_spat.item(),
            D_spec_loss=d_spec_loss.item(),
            D_spat_loss=d_spat_loss.item(),
            total_G=total.item(),
        )


def checkpoint_hash(params: ParameterSet) -> str:
    return hashlib.sha256(ad.checkpoint_bytes(params)).hexdigest()[:16]


def fuse(params: ParameterSet, ms: MultispectralImage, pan: RasterBand, r: int) -> FusionProduct:
    """Single deterministic forward pass with a frozen checkpoint."""
    r = int(r)
    k = ms.band_count
    if "gen.conv1.weight" not in params or "gen.head.weight" not in params:
        raise InvalidInputError("checkpoint does not contain generator parameters")
    c_in = params["gen.conv1.weight"].data.shape[1]
    c_out = params["gen.head.weight"].data.shape[0]
    if c_in != k + 1 or c_out != k:
        raise InvalidInputError(
            f"checkpoint expects {c_in - 1} bands, input has {k}"
        )
    if (pan.height, pan.width) != (ms.height * r, ms.width * r):
        raise InvalidInputError(
            f"pan {pan.height}x{pan.width} is not ms {ms.height}x{ms.width} times {r}"
        )
    frozen = {name: Tensor(p.data) for name, p in params.items()}
    gen = GeneratorSpec(bands=k, hidden_channels=params["gen.conv1.weight"].data.shape[0])
    ms_up = upsample(ms, r, "bicubic")
    out = gen.forward(frozen, Tensor(ms_up.to_array()), Tensor(pan.data[None]))
    image = MultispectralImage.from_array(out.data, scale_ratio=1)
    return FusionProduct(
        image, method="gan", provenance={"checkpoint_hash": checkpoint_hash(params)}
    )
