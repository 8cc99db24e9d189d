"""Training-time augmentation catalog.

Covers the geometric block (flips, rotation, zoom, translation, shear,
composed into one affine resample), photometric adjustments (channel shift,
intensity scaling, linear-stretch contrast, blur/unsharp sharpness), random
noise (gaussian, speckle, salt & pepper), multiplicative illumination
gradients (axial or radial), and simulated hair occlusion.

Every routine is a pure function of (input, params, seed); neutral
parameters are a pixel-exact identity. Geometric transforms move image and
mask through the same coordinate map (bilinear vs nearest sampling);
everything else leaves the mask alone. Out-of-canvas reads reflect at the
border without repeating the edge row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import distance_transform_edt, gaussian_filter

from .errors import ValidationError
from .rasters import BinaryMask, Image
from .seeding import derive_seed, rng_for

ROTATION_RANGE = (0.0, 40.0)
ZOOM_RANGE = (0.7, 1.3)
SHEAR_RANGE = (-0.3, 0.3)
INTENSITY_RANGE = (0.7, 1.3)
ILLUMINATION_MAX = 0.5
UNSHARP_SIGMA = 2.0
NOISE_KINDS = ("gaussian", "speckle", "salt_pepper")
ILLUMINATION_KINDS = ("axial", "radial")


@dataclass(frozen=True)
class GeometricParams:
    hflip: bool = False
    vflip: bool = False
    rotation_deg: float = 0.0
    zoom: float = 1.0
    translate: tuple[float, float] = (0.0, 0.0)  # (dx, dy) as fraction of (width, height)
    shear: float = 0.0

    def __post_init__(self) -> None:
        if not ROTATION_RANGE[0] <= self.rotation_deg <= ROTATION_RANGE[1]:
            raise ValidationError(f"rotation must lie in {ROTATION_RANGE}, got {self.rotation_deg}")
        if not ZOOM_RANGE[0] <= self.zoom <= ZOOM_RANGE[1]:
            raise ValidationError(f"zoom must lie in {ZOOM_RANGE}, got {self.zoom}")
        if not SHEAR_RANGE[0] <= self.shear <= SHEAR_RANGE[1]:
            raise ValidationError(f"shear must lie in {SHEAR_RANGE}, got {self.shear}")
        if max(abs(self.translate[0]), abs(self.translate[1])) > 1.0:
            raise ValidationError(f"translation fraction out of range: {self.translate}")


@dataclass(frozen=True)
class PhotometricParams:
    channel_shift: tuple[float, float, float] = (0.0, 0.0, 0.0)
    intensity_scale: float = 1.0
    contrast_delta: float = 0.0  # signed: toward (+) or away from (-) the stretched image
    sharpness: float = 0.0  # < 0: gaussian blur with sigma=|v|; > 0: unsharp amount

    def __post_init__(self) -> None:
        if not INTENSITY_RANGE[0] <= self.intensity_scale <= INTENSITY_RANGE[1]:
            raise ValidationError(
                f"intensity scale must lie in {INTENSITY_RANGE}, got {self.intensity_scale}"
            )
        if abs(self.contrast_delta) > 1.0:
            raise ValidationError(f"contrast strength must lie in [-1, 1], got {self.contrast_delta}")
        if max(abs(s) for s in self.channel_shift) > 255.0:
            raise ValidationError(f"channel shift out of range: {self.channel_shift}")


@dataclass(frozen=True)
class NoiseParams:
    kind: str = "gaussian"
    strength: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}")
        if self.strength < 0:
            raise ValidationError(f"noise strength must be >= 0, got {self.strength}")
        if self.kind == "salt_pepper" and self.strength > 1.0:
            raise ValidationError("salt_pepper strength is a pixel fraction, must be <= 1")


@dataclass(frozen=True)
class IlluminationParams:
    kind: str = "axial"
    strength: float = 0.0  # gradient map spans [1-s, 1+s]
    angle_deg: float = 0.0  # axial direction
    center: tuple[float, float] = (0.5, 0.5)  # radial center, fraction of (width, height)

    def __post_init__(self) -> None:
        if self.kind not in ILLUMINATION_KINDS:
            raise ValidationError(f"unknown illumination kind {self.kind!r}")
        if not 0.0 <= self.strength <= ILLUMINATION_MAX:
            raise ValidationError(f"illumination strength must lie in [0, {ILLUMINATION_MAX}]")


@dataclass(frozen=True)
class HairParams:
    count: int = 0
    thickness: tuple[float, float] = (1.0, 5.0)  # stroke width range, pixels
    darkness: float = 1.0  # 1 = black hair, negative values brighten (light hair)
    curliness: float = 0.15  # control-point jitter as a fraction of min(H, W)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValidationError(f"hair count must be >= 0, got {self.count}")
        if not 0 < self.thickness[0] <= self.thickness[1]:
            raise ValidationError(f"bad thickness range: {self.thickness}")
        if not -1.0 <= self.darkness <= 1.0:
            raise ValidationError(f"hair darkness must lie in [-1, 1], got {self.darkness}")
        if self.curliness < 0:
            raise ValidationError(f"curliness must be >= 0, got {self.curliness}")


# --- geometric ---------------------------------------------------------------


def _reflect101(c: np.ndarray, n: int) -> np.ndarray:
    """Fold real coordinates into [0, n-1] by mirroring without edge repeat."""
    if n == 1:
        return np.zeros_like(c)
    period = 2.0 * (n - 1)
    t = np.remainder(c, period)
    return np.where(t > n - 1, period - t, t)


def _affine_forward(p: GeometricParams, h: int, w: int) -> np.ndarray:
    """Forward 3x3 matrix mapping input (x, y, 1) to output coordinates."""
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = math.radians(p.rotation_deg)
    flip = np.diag([-1.0 if p.hflip else 1.0, -1.0 if p.vflip else 1.0])
    zoom = np.diag([p.zoom, p.zoom])
    shear = np.array([[1.0, p.shear], [0.0, 1.0]])
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    a = rot @ shear @ zoom @ flip
    center = np.array([cx, cy])
    shift = center + np.array([p.translate[0] * w, p.translate[1] * h]) - a @ center
    m = np.eye(3)
    m[:2, :2] = a
    m[:2, 2] = shift
    return m


def _warp(arr: np.ndarray, minv: np.ndarray, order: str) -> np.ndarray:
    """Resample arr through the inverse map with reflected borders."""
    h, w = arr.shape[:2]
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    sx = minv[0, 0] * xs + minv[0, 1] * ys + minv[0, 2]
    sy = minv[1, 0] * xs + minv[1, 1] * ys + minv[1, 2]
    sx = _reflect101(sx, w)
    sy = _reflect101(sy, h)
    if order == "nearest":
        xi = np.clip(np.floor(sx + 0.5), 0, w - 1).astype(np.intp)
        yi = np.clip(np.floor(sy + 0.5), 0, h - 1).astype(np.intp)
        return arr[yi, xi]
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    if arr.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    a00 = arr[y0, x0]
    a01 = arr[y0, x1]
    a10 = arr[y1, x0]
    a11 = arr[y1, x1]
    top = a00 + fx * (a01 - a00)
    bot = a10 + fx * (a11 - a10)
    return top + fy * (bot - top)


def apply_geometric(
    image: Image, p: GeometricParams, mask: BinaryMask | None = None
) -> tuple[Image, BinaryMask | None]:
    """One affine resample for the whole geometric block.

    Image samples bilinearly, the mask nearest-neighbor, both through the
    identical coordinate map, so the mask stays binary and aligned.
    """
    minv = np.linalg.inv(_affine_forward(p, image.height, image.width))
    out = _warp(image.data.astype(np.float64), minv, "bilinear")
    warped = Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    warped_mask = None
    if mask is not None:
        if mask.data.shape != image.data.shape[:2]:
            raise ValidationError("mask dimensions must match the image")
        warped_mask = BinaryMask(_warp(mask.data, minv, "nearest"))
    return warped, warped_mask


# --- photometric --------------------------------------------------------------


def _stretch(x: np.ndarray, lo_pct: float = 2.0, hi_pct: float = 98.0) -> np.ndarray:
    lo, hi = np.percentile(x, [lo_pct, hi_pct])
    if hi - lo < 1e-9:
        return x
    return (x - lo) * (255.0 / (hi - lo))


def apply_photometric(image: Image, p: PhotometricParams) -> Image:
    """Channel shift -> intensity scale -> contrast stretch -> sharpness, then clip."""
    x = image.data.astype(np.float64)
    x = x + np.asarray(p.channel_shift, dtype=np.float64)
    x = x * p.intensity_scale
    if p.contrast_delta != 0.0:
        x = x + p.contrast_delta * (_stretch(x) - x)
    if p.sharpness < 0.0:
        x = gaussian_filter(x, sigma=(-p.sharpness, -p.sharpness, 0.0), mode="mirror")
    elif p.sharpness > 0.0:
        blurred = gaussian_filter(x, sigma=(UNSHARP_SIGMA, UNSHARP_SIGMA, 0.0), mode="mirror")
        x = x + p.sharpness * (x - blurred)
    return Image(np.clip(np.rint(x), 0, 255).astype(np.uint8))


# --- noise --------------------------------------------------------------------


def apply_noise(image: Image, p: NoiseParams, seed: int) -> Image:
    if p.strength == 0.0:
        return image
    rng = np.random.default_rng(seed)
    x = image.data.astype(np.float64)
    if p.kind == "gaussian":
        x = x + rng.normal(0.0, p.strength, x.shape)
    elif p.kind == "speckle":
        x = x * (1.0 + p.strength * rng.standard_normal(x.shape))
    else:  # salt_pepper: flip a strength-fraction of pixels to 0 or 255
        hit = rng.random(x.shape[:2]) < p.strength
        salt = rng.random(x.shape[:2]) < 0.5
        x[hit & salt] = 255.0
        x[hit & ~salt] = 0.0
    return Image(np.clip(np.rint(x), 0, 255).astype(np.uint8))


# --- illumination --------------------------------------------------------------


def illumination_gradient(p: IlluminationParams, h: int, w: int) -> np.ndarray:
    """Multiplicative gain map with values in [1-s, 1+s]."""
    s = p.strength
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    if p.kind == "axial":
        theta = math.radians(p.angle_deg)
        proj = xs * math.cos(theta) + ys * math.sin(theta)
        lo, hi = proj.min(), proj.max()
        t = (proj - lo) / (hi - lo) if hi > lo else np.full_like(proj, 0.5)
        return (1.0 - s) + 2.0 * s * t
    cx, cy = p.center[0] * (w - 1), p.center[1] * (h - 1)
    r = np.hypot(xs - cx, ys - cy)
    rmax = r.max()
    if rmax == 0.0:
        return np.full((h, w), 1.0 + s)
    return (1.0 + s) - 2.0 * s * (r / rmax)


def apply_illumination(image: Image, p: IlluminationParams) -> Image:
    gain = illumination_gradient(p, image.height, image.width)
    out = image.data.astype(np.float64) * gain[..., None]
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))


# --- hair occlusion -------------------------------------------------------------


def render_hair_mask(p: HairParams, h: int, w: int) -> np.ndarray:
    """[0, 1] anti-aliased coverage of the simulated hair strokes.

    Each hair is a cubic spline through 3-5 control points jittered
    perpendicular to a random direction; coverage ramps off over one pixel
    at the stroke edge.
    """
    alpha = np.zeros((h, w), dtype=np.float64)
    if p.count == 0:
        return alpha
    rng = np.random.default_rng(p.seed)
    span = float(min(h, w))
    for _ in range(p.count):
        n_ctrl = int(rng.integers(3, 6))
        length = (0.4 + 0.6 * rng.random()) * span
        ang = rng.uniform(0.0, 2.0 * math.pi)
        direction = np.array([math.sin(ang), math.cos(ang)])  # (dy, dx)
        normal = np.array([-direction[1], direction[0]])
        start = np.array([rng.uniform(0.15, 0.85) * (h - 1), rng.uniform(0.15, 0.85) * (w - 1)])
        ts = np.linspace(0.0, 1.0, n_ctrl)
        jitter = rng.normal(0.0, p.curliness * span, size=n_ctrl)
        jitter[0] = 0.0
        ctrl = start + np.outer(ts * length, direction) + np.outer(jitter, normal)
        curve = CubicSpline(ts, ctrl, axis=0)(np.linspace(0.0, 1.0, max(int(length) * 3, 16)))
        iy = np.rint(curve[:, 0]).astype(np.intp)
        ix = np.rint(curve[:, 1]).astype(np.intp)
        inside = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        if not inside.any():
            continue
        off_curve = np.ones((h, w), dtype=bool)
        off_curve[iy[inside], ix[inside]] = False
        dist = distance_transform_edt(off_curve)
        thickness = rng.uniform(*p.thickness)
        alpha = np.maximum(alpha, np.clip(thickness / 2.0 + 0.5 - dist, 0.0, 1.0))
    return alpha


def simulate_hair(image: Image, p: HairParams) -> Image:
    if p.count == 0:
        return image
    alpha = render_hair_mask(p, image.height, image.width)
    out = image.data.astype(np.float64) * (1.0 - alpha * p.darkness)[..., None]
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))


# --- sampling and composition ----------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    """Enable flags, firing probability, and draw ranges for every routine."""

    geometric: bool = True
    photometric: bool = True
    noise: bool = True
    illumination: bool = True
    hair: bool = True
    probability: float = 0.5  # per-routine chance of firing on each sample

    rotation_range: tuple[float, float] = ROTATION_RANGE
    zoom_range: tuple[float, float] = ZOOM_RANGE
    shear_range: tuple[float, float] = SHEAR_RANGE
    translate_limit: float = 0.1

    channel_shift_limit: float = 25.0
    intensity_range: tuple[float, float] = INTENSITY_RANGE
    contrast_limit: float = 1.0
    blur_sigma_max: float = 3.0
    unsharp_max: float = 1.0

    noise_kinds: tuple[str, ...] = NOISE_KINDS
    gaussian_sigma_max: float = 15.0
    speckle_max: float = 0.15
    salt_pepper_max: float = 0.02

    illumination_strength_max: float = 0.3

    hair_count_max: int = 8
    hair_thickness: tuple[float, float] = (1.0, 5.0)
    hair_darkness: tuple[float, float] = (0.3, 1.0)
    hair_curliness: float = 0.15


@dataclass(frozen=True)
class AugmentationPlan:
    """Concrete parameter draw for one sample; None means the routine is skipped."""

    geometric: GeometricParams | None = None
    photometric: PhotometricParams | None = None
    noise: NoiseParams | None = None
    noise_seed: int = 0
    illumination: IlluminationParams | None = None
    hair: HairParams | None = None


def sample_augmentation(seed: int, config: AugmentConfig, case_id: str = "") -> AugmentationPlan:
    """Draw one plan; every routine uses its own derived stream, so toggling
    one routine never shifts another routine's draws."""
    plan: dict = {}

    rng = rng_for(seed, "augment/geometric", case_id)
    if config.geometric and rng.random() < config.probability:
        plan["geometric"] = GeometricParams(
            hflip=bool(rng.random() < 0.5),
            vflip=bool(rng.random() < 0.5),
            rotation_deg=float(rng.uniform(*config.rotation_range)),
            zoom=float(rng.uniform(*config.zoom_range)),
            translate=(
                float(rng.uniform(-config.translate_limit, config.translate_limit)),
                float(rng.uniform(-config.translate_limit, config.translate_limit)),
            ),
            shear=float(rng.uniform(*config.shear_range)),
        )

    rng = rng_for(seed, "augment/photometric", case_id)
    if config.photometric and rng.random() < config.probability:
        if rng.random() < 0.5:
            sharpness = -float(rng.uniform(0.0, config.blur_sigma_max))
        else:
            sharpness = float(rng.uniform(0.0, config.unsharp_max))
        plan["photometric"] = PhotometricParams(
            channel_shift=tuple(
                float(v) for v in rng.uniform(-config.channel_shift_limit, config.channel_shift_limit, 3)
            ),
            intensity_scale=float(rng.uniform(*config.intensity_range)),
            contrast_delta=float(rng.uniform(-config.contrast_limit, config.contrast_limit)),
            sharpness=sharpness,
        )

    rng = rng_for(seed, "augment/noise", case_id)
    if config.noise and rng.random() < config.probability:
        kind = str(rng.choice(list(config.noise_kinds)))
        strength_max = {
            "gaussian": config.gaussian_sigma_max,
            "speckle": config.speckle_max,
            "salt_pepper": config.salt_pepper_max,
        }[kind]
        plan["noise"] = NoiseParams(kind=kind, strength=float(rng.uniform(0.0, strength_max)))
        plan["noise_seed"] = derive_seed(seed, "augment/noise-draw", case_id)

    rng = rng_for(seed, "augment/illumination", case_id)
    if config.illumination and rng.random() < config.probability:
        plan["illumination"] = IlluminationParams(
            kind=str(rng.choice(list(ILLUMINATION_KINDS))),
            strength=float(rng.uniform(0.0, config.illumination_strength_max)),
            angle_deg=float(rng.uniform(0.0, 360.0)),
            center=(float(rng.uniform(0.25, 0.75)), float(rng.uniform(0.25, 0.75))),
        )

    rng = rng_for(seed, "augment/hair", case_id)
    if config.hair and rng.random() < config.probability:
        plan["hair"] = HairParams(
            count=int(rng.integers(1, config.hair_count_max + 1)),
            thickness=config.hair_thickness,
            darkness=float(rng.uniform(*config.hair_darkness)),
            curliness=config.hair_curliness,
            seed=derive_seed(seed, "augment/hair-render", case_id),
        )

    return AugmentationPlan(**plan)


def apply_plan(
    image: Image, plan: AugmentationPlan, mask: BinaryMask | None = None
) -> tuple[Image, BinaryMask | None]:
    """Run the plan: geometric, photometric, illumination, hair, then noise."""
    if plan.geometric is not None:
        image, mask = apply_geometric(image, plan.geometric, mask)
    if plan.photometric is not None:
        image = apply_photometric(image, plan.photometric)
    if plan.illumination is not None:
        image = apply_illumination(image, plan.illumination)
    if plan.hair is not None:
        image = simulate_hair(image, plan.hair)
    if plan.noise is not None:
        image = apply_noise(image, plan.noise, plan.noise_seed)
    return image, mask


def plan_to_dict(plan: AugmentationPlan) -> dict:
    out: dict = {"noise_seed": plan.noise_seed}
    for name in ("geometric", "photometric", "noise", "illumination", "hair"):
        p = getattr(plan, name)
        out[name] = None if p is None else {k: list(v) if isinstance(v, tuple) else v for k, v in vars(p).items()}
    return out


def plan_from_dict(obj: dict) -> AugmentationPlan:
    def tup(d: dict, *keys: str) -> dict:
        return {k: tuple(v) if k in keys and v is not None else v for k, v in d.items()}

    return AugmentationPlan(
        geometric=None if obj["geometric"] is None else GeometricParams(**tup(obj["geometric"], "translate")),
        photometric=None
        if obj["photometric"] is None
        else PhotometricParams(**tup(obj["photometric"], "channel_shift")),
        noise=None if obj["noise"] is None else NoiseParams(**obj["noise"]),
        noise_seed=int(obj.get("noise_seed", 0)),
        illumination=None
        if obj["illumination"] is None
        else IlluminationParams(**tup(obj["illumination"], "center")),
        hair=None if obj["hair"] is None else HairParams(**tup(obj["hair"], "thickness")),
    )
