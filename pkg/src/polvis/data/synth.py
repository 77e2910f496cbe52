"""Procedural paired-modality face dataset.

Each identity gets a latent parameter vector plus ten binary attributes,
all drawn deterministically from the dataset seed. The visible image is a
composition of smooth blobs and bars on an elliptical face; the
polarimetric triple is derived from it analytically:

    S0 = gaussian-smoothed inverted-intensity transform of the visible
    S1 = horizontal gradient field of the smoothed visible (+ noise)
    S2 = vertical gradient field of the smoothed visible   (+ noise)

so a ground-truth cross-modal mapping exists by construction, and every
attribute toggles the amplitude or geometry of exactly one rendered
feature, which keeps attributes decodable from both modalities. The
`degradation` knob emulates longer capture distances with extra blur and
noise on the polarimetric channels.

Rendering is a pure function of the recorded parameters, which is what
makes the Bayes attribute oracle possible: re-render both hypotheses for
one bit with everything else fixed and pick the smaller residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

ATTRIBUTE_NAMES = (
    "Arched_Eyebrows",
    "Big_Lips",
    "Big_Nose",
    "Bushy_Eyebrows",
    "Bald",
    "Mustache",
    "Narrow_Eyes",
    "Beard",
    "Mouth_Slightly_Open",
    "Young",
)
N_ATTRIBUTES = len(ATTRIBUTE_NAMES)

VISIBLE_NOISE_STD = 0.008
POLAR_NOISE_STD = 0.02
GRADIENT_GAIN = 6.0
THERMAL_SLOPE = 0.82
POLAR_SMOOTHING = 1.2


@dataclass
class IdentityParams:
    face_cx: float
    face_cy: float
    face_rx: float
    face_ry: float
    skin: float
    eye_dx: float
    eye_y: float
    eye_rx: float
    eye_ry: float
    brow_gap: float
    nose_w: float
    nose_len: float
    mouth_y: float
    mouth_w: float
    hair_th: float
    tex_fx: float
    tex_fy: float
    tex_px: float
    tex_py: float
    tex_amp: float


@dataclass
class SampleParams:
    shift_x: float
    shift_y: float
    brightness: float
    contrast: float
    warp_px: float
    warp_py: float


@dataclass
class RenderParams:
    """Everything needed to re-render a sample's clean visible image."""

    identity: IdentityParams
    sample: SampleParams
    attributes: np.ndarray


@dataclass
class PairedSample:
    identity: int
    attributes: np.ndarray              # (T,) uint8
    visible: np.ndarray                 # (1, H, W) float32 in [-1, 1]
    polar: np.ndarray                   # (3, H, W) float32 in [-1, 1]
    render: Optional[RenderParams] = None  # kept in memory only, not serialized


@dataclass
class DatasetManifest:
    version: int
    n_samples: int
    height: int
    width: int
    n_attributes: int
    n_identities: int
    samples_per_identity: int
    train_identities: list
    test_identities: list
    seed: int
    degradation: float
    train_fraction: float
    attribute_names: list = field(default_factory=lambda: list(ATTRIBUTE_NAMES))

    def validate(self) -> None:
        train, test = set(self.train_identities), set(self.test_identities)
        if train & test:
            raise ValueError(f"train/test identity overlap: {sorted(train & test)}")
        if train | test != set(range(self.n_identities)):
            raise ValueError("train/test identities do not partition the identity set")
        if self.n_samples != self.n_identities * self.samples_per_identity:
            raise ValueError("sample count does not match identities x samples_per_identity")


@dataclass
class Dataset:
    manifest: DatasetManifest
    samples: list

    def train_samples(self) -> list:
        ids = set(self.manifest.train_identities)
        return [s for s in self.samples if s.identity in ids]

    def test_samples(self) -> list:
        ids = set(self.manifest.test_identities)
        return [s for s in self.samples if s.identity in ids]


def _draw_identity(rng: np.random.Generator) -> IdentityParams:
    u = rng.uniform
    return IdentityParams(
        face_cx=u(-0.05, 0.05), face_cy=u(-0.05, 0.05),
        face_rx=u(0.58, 0.72), face_ry=u(0.72, 0.88),
        skin=u(0.55, 0.75),
        eye_dx=u(0.24, 0.36), eye_y=u(-0.30, -0.16),
        eye_rx=u(0.07, 0.10), eye_ry=u(0.045, 0.065),
        brow_gap=u(0.11, 0.16),
        nose_w=u(0.045, 0.065), nose_len=u(0.20, 0.30),
        mouth_y=u(0.30, 0.44), mouth_w=u(0.18, 0.28),
        hair_th=u(0.08, 0.16),
        tex_fx=u(2.0, 4.5), tex_fy=u(2.0, 4.5),
        tex_px=u(0.0, 2 * np.pi), tex_py=u(0.0, 2 * np.pi),
        tex_amp=u(0.03, 0.07),
    )


def _draw_sample(rng: np.random.Generator) -> SampleParams:
    u = rng.uniform
    return SampleParams(
        shift_x=u(-0.06, 0.06), shift_y=u(-0.06, 0.06),
        brightness=u(-0.04, 0.04), contrast=u(0.93, 1.07),
        warp_px=u(0.0, 2 * np.pi), warp_py=u(0.0, 2 * np.pi),
    )


def _soft_box(t: np.ndarray) -> np.ndarray:
    """~1 for |t| < 1, smooth falloff outside."""
    return np.exp(-(t**4))


def render_clean_visible(params: RenderParams, height: int, width: int) -> np.ndarray:
    """Noise-free visible image in [0, 1] as a pure function of the parameters."""
    idp, sp, bits = params.identity, params.sample, params.attributes
    ys = np.linspace(-1.0, 1.0, height, dtype=np.float64)
    xs = np.linspace(-1.0, 1.0, width, dtype=np.float64)
    vgrid, ugrid = np.meshgrid(ys, xs, indexing="ij")
    u = ugrid - idp.face_cx - sp.shift_x
    v = vgrid - idp.face_cy - sp.shift_y

    rho2 = (u / idp.face_rx) ** 2 + (v / idp.face_ry) ** 2
    rho = np.sqrt(rho2)
    face = 1.0 / (1.0 + np.exp(-(1.0 - rho2) / 0.08))
    img = 0.10 + face * (idp.skin - 0.10)
    img += face * idp.tex_amp * np.sin(idp.tex_fx * u + idp.tex_px) * np.sin(idp.tex_fy * v + idp.tex_py)

    def blob(cx, cy, sx, sy):
        return np.exp(-(((u - cx) / sx) ** 2 + ((v - cy) / sy) ** 2))

    feat = np.zeros_like(img)

    # eyes; Narrow_Eyes squashes the vertical radius
    eye_ry = idp.eye_ry * (0.45 if bits[6] else 1.0)
    for s in (-1.0, 1.0):
        feat += 0.50 * blob(s * idp.eye_dx, idp.eye_y, idp.eye_rx, eye_ry)

    # brows; Arched_Eyebrows bows the center line, Bushy_Eyebrows thickens it
    brow_y = idp.eye_y - idp.brow_gap
    arch = 0.13 if bits[0] else 0.025
    brow_th = 0.050 if bits[3] else 0.022
    brow_amp = 0.55 if bits[3] else 0.38
    for s in (-1.0, 1.0):
        t = (u - s * idp.eye_dx) / 0.13
        line_y = brow_y - arch * (1.0 - t**2)
        feat += brow_amp * np.exp(-(((v - line_y) / brow_th) ** 2)) * _soft_box(t)

    # nose; Big_Nose scales width and length
    nscale = 1.65 if bits[2] else 1.0
    nose_w = idp.nose_w * nscale
    nose_top = idp.eye_y + 0.06
    nose_bot = nose_top + idp.nose_len * (0.85 + 0.15 * nscale)
    ybox = 1.0 / (1.0 + np.exp(-(v - nose_top) / 0.03)) / (1.0 + np.exp(-(nose_bot - v) / 0.03))
    feat += 0.22 * np.exp(-((u / nose_w) ** 2)) * ybox
    feat += 0.38 * blob(0.0, nose_bot, nose_w * 1.9, 0.028)

    # mouth; Big_Lips thickens, Mouth_Slightly_Open splits with a dark slit
    lip_th = 0.055 if bits[1] else 0.028
    mbox = _soft_box(u / idp.mouth_w)
    if bits[8]:
        feat += 0.60 * np.exp(-(((v - idp.mouth_y) / 0.018) ** 2)) * mbox
        for off in (-0.042, 0.042):
            feat += 0.40 * np.exp(-(((v - idp.mouth_y - off) / (lip_th * 0.75)) ** 2)) * mbox
    else:
        feat += 0.45 * np.exp(-(((v - idp.mouth_y) / lip_th) ** 2)) * mbox

    if bits[5]:  # Mustache
        feat += 0.50 * np.exp(-(((v - idp.mouth_y + 0.085) / 0.026) ** 2)) * _soft_box(u / (idp.mouth_w * 1.05))

    if bits[7]:  # Beard: band along the lower face boundary
        gate = 1.0 / (1.0 + np.exp(-(v - idp.mouth_y + 0.02) / 0.04))
        feat += 0.40 * np.exp(-(((rho - 0.88) / 0.10) ** 2)) * gate

    if not bits[4]:  # hair cap unless Bald
        gate = 1.0 / (1.0 + np.exp((v - idp.eye_y + 0.18) / 0.04))
        feat += 0.45 * np.exp(-(((rho - 0.92) / idp.hair_th) ** 2)) * gate

    if not bits[9]:  # forehead wrinkle lines unless Young
        for off in (0.14, 0.22):
            feat += 0.22 * np.exp(-(((v - brow_y + off) / 0.010) ** 2)) * _soft_box(u / 0.30)

    img -= feat * face
    img = sp.contrast * img + sp.brightness
    img += 0.02 * np.sin(3.1 * u + sp.warp_px) * np.sin(2.7 * v + sp.warp_py) * face
    return np.clip(img, 0.0, 1.0)


def polar_from_visible(clean01: np.ndarray, rng: np.random.Generator, degradation: float) -> np.ndarray:
    """Derive the (S0, S1, S2) triple from a clean [0, 1] visible image."""
    sigma = POLAR_SMOOTHING * (1.0 + degradation)
    thermal = 1.0 - THERMAL_SLOPE * clean01
    s0 = gaussian_filter(thermal, sigma, mode="reflect")
    smooth = gaussian_filter(clean01, 1.0, mode="reflect")
    gy, gx = np.gradient(smooth)
    noise_std = POLAR_NOISE_STD * (1.0 + degradation)
    n1 = rng.normal(0.0, noise_std, clean01.shape)
    n2 = rng.normal(0.0, noise_std, clean01.shape)
    s0 = np.clip(2.0 * s0 - 1.0, -1.0, 1.0)
    s1 = np.clip(GRADIENT_GAIN * gx + n1, -1.0, 1.0)
    s2 = np.clip(GRADIENT_GAIN * gy + n2, -1.0, 1.0)
    return np.stack([s0, s1, s2]).astype(np.float32)


def _check_dims(height: int, width: int) -> None:
    for name, dim in (("height", height), ("width", width)):
        if dim < 32 or dim & (dim - 1):
            raise ValueError(f"{name} must be a power of two >= 32, got {dim}")


def generate_synthetic_dataset(
    n_identities: int,
    samples_per_identity: int,
    height: int = 64,
    width: int = 64,
    seed: int = 0,
    degradation: float = 0.0,
    train_fraction: float = 0.7,
) -> Dataset:
    """Deterministically generate the paired-modality dataset for `seed`."""
    if n_identities < 2:
        raise ValueError(f"need at least 2 identities, got {n_identities}")
    if samples_per_identity < 1:
        raise ValueError("samples_per_identity must be positive")
    _check_dims(height, width)
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")

    from polvis.rng import stream

    rng = stream(seed, "data")
    identities = [_draw_identity(rng) for _ in range(n_identities)]
    attr_bits = [(rng.random(N_ATTRIBUTES) < 0.5).astype(np.uint8) for _ in range(n_identities)]

    samples = []
    for ident in range(n_identities):
        for _ in range(samples_per_identity):
            sp = _draw_sample(rng)
            render = RenderParams(identity=identities[ident], sample=sp, attributes=attr_bits[ident])
            clean = render_clean_visible(render, height, width)
            polar = polar_from_visible(clean, rng, degradation)
            noisy = clean + rng.normal(0.0, VISIBLE_NOISE_STD, clean.shape)
            visible = np.clip(2.0 * noisy - 1.0, -1.0, 1.0).astype(np.float32)[None]
            samples.append(
                PairedSample(identity=ident, attributes=attr_bits[ident], visible=visible,
                             polar=polar, render=render)
            )

    order = rng.permutation(n_identities)
    n_train = max(1, min(n_identities - 1, int(round(train_fraction * n_identities))))
    manifest = DatasetManifest(
        version=1,
        n_samples=len(samples),
        height=height,
        width=width,
        n_attributes=N_ATTRIBUTES,
        n_identities=n_identities,
        samples_per_identity=samples_per_identity,
        train_identities=sorted(int(i) for i in order[:n_train]),
        test_identities=sorted(int(i) for i in order[n_train:]),
        seed=seed,
        degradation=degradation,
        train_fraction=train_fraction,
    )
    manifest.validate()
    return Dataset(manifest=manifest, samples=samples)


def bayes_attribute_oracle(sample: PairedSample, height: int, width: int) -> np.ndarray:
    """Predict all attribute bits by analytic inversion of the renderer.

    For each attribute, re-render the clean image under both hypotheses
    (all other parameters at their true values) and pick the one closer to
    the observed visible image. This is the Bayes rule under the additive
    Gaussian pixel noise of the generator and upper-bounds any learned
    predictor. Requires the sample's in-memory render parameters.
    """
    if sample.render is None:
        raise ValueError("sample lacks render parameters (loaded from disk?); oracle needs an in-memory dataset")
    observed = (sample.visible[0].astype(np.float64) + 1.0) / 2.0
    out = np.zeros(N_ATTRIBUTES, dtype=np.uint8)
    for t in range(N_ATTRIBUTES):
        residuals = []
        for hypothesis in (0, 1):
            bits = sample.render.attributes.copy()
            bits[t] = hypothesis
            candidate = render_clean_visible(
                RenderParams(sample.render.identity, sample.render.sample, bits), height, width
            )
            residuals.append(np.sum((observed - candidate) ** 2))
        out[t] = int(residuals[1] < residuals[0])
    return out
