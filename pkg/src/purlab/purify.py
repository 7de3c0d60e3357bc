"""Consistency-based purification and the post-processing baselines.

The purifier minimizes, per image,
    mean((x_pur - D(E(x_pur)))^2) + alpha * max(LPIPS(x_pur, x_ptb) - budget, 0)
from a lightly noised start, clipping pixels to [-1,1] after every
step. The consistency term is a per-pixel mean (not a raw sum) so the
published balance weights carry over to 32x32 images.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from purlab import tensor as T
from purlab.metrics import lpips_pair
from purlab.models import (AutoencoderParams, FeatureNetParams, decode,
                           encode, validate_image)
from purlab.optim import OptimizerState
from purlab.rng import SeedStream
from purlab.tensor import DiffTensor, Tape

__all__ = ["PurifyConfig", "PurifyResult", "PurifyDiverged", "STYLE_TASK",
           "EDIT_TASK", "impress_purify", "jpeg_baseline",
           "gaussian_noise_baseline", "resize_baseline", "lowpass_baseline",
           "combo_baseline", "BASELINES", "apply_baseline"]


class PurifyDiverged(RuntimeError):
    pass


@dataclass
class PurifyConfig:
    alpha: float = 0.1            # balance weight on the perceptual hinge
    lpips_budget: float = 0.1     # perceptual distance allowance
    lr: float = 1e-2
    steps: int = 3000
    init_sigma: float = 0.05
    optimizer: str = "adam"       # adam | pgd (plain gradient descent)
    seed: int = 0
    snapshot_every: int = 100

    def __post_init__(self):
        if min(self.alpha, self.lr, self.init_sigma, self.lpips_budget) < 0:
            raise ValueError("alpha, lr, init_sigma and lpips_budget must be >= 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.optimizer not in ("adam", "pgd"):
            raise ValueError(f"optimizer must be adam or pgd, got "
                             f"{self.optimizer!r}")


# published defaults for the two tasks
STYLE_TASK = PurifyConfig(alpha=0.1, lpips_budget=0.1, lr=1e-2, steps=3000)
EDIT_TASK = PurifyConfig(alpha=1e-2, lpips_budget=0.1, lr=5e-3, steps=1000)


@dataclass
class PurifyResult:
    x_pur: np.ndarray
    trajectory: np.ndarray           # (steps, 3): consistency, lpips, combined
    snapshots: list = field(default_factory=list)   # (step, images) pairs
    final_consistency: np.ndarray = None
    final_lpips: np.ndarray = None


def consistency_loss(ae: AutoencoderParams, x) -> np.ndarray:
    """Per-image mean squared encode-decode residual."""
    arr = np.asarray(x.data if isinstance(x, DiffTensor) else x)
    single = arr.ndim == 3
    batch = arr[None] if single else arr
    from purlab.tensor import no_tape
    with no_tape():
        rec = decode(ae, encode(ae, batch)).data
    vals = np.mean((batch - rec) ** 2, axis=(1, 2, 3))
    return float(vals[0]) if single else vals


def impress_purify(ae: AutoencoderParams, featurenet: FeatureNetParams,
                   x_ptb, config: PurifyConfig) -> PurifyResult:
    """Optimize the consistency condition under the perceptual budget.

    Starts from x_ptb plus N(0, init_sigma^2) noise; each iteration
    records (consistency, lpips, combined), steps, and clips to [-1,1].
    """
    xb, single = (np.asarray(x_ptb, dtype=np.float64), False)
    if xb.ndim == 3:
        xb, single = xb[None], True
    validate_image(xb)
    rng = SeedStream(config.seed).stream("purify-init")
    x_pur = DiffTensor(np.clip(xb + config.init_sigma * rng.normal(xb.shape),
                               -1.0, 1.0), requires_grad=True)
    opt = (OptimizerState([x_pur], kind="adam", lr=config.lr)
           if config.optimizer == "adam" else None)
    ref = DiffTensor(xb)
    trajectory = np.zeros((config.steps, 3))
    snapshots = [(0, x_pur.data.copy())]
    cons = dist = None
    for step in range(config.steps):
        x_pur.zero_grad()
        with Tape() as tape:
            rec = decode(ae, encode(ae, x_pur))
            cons = T.square(x_pur - rec).mean(axis=(1, 2, 3))
            dist = lpips_pair(featurenet, x_pur, ref)
            hinge = T.relu(dist - config.lpips_budget)
            combined = (cons + hinge * config.alpha).mean()
            if not np.isfinite(combined.data):
                raise PurifyDiverged(
                    f"non-finite purification loss at step {step}: "
                    f"consistency={cons.data}, lpips={dist.data}")
            tape.backward(combined)
        trajectory[step] = (cons.data.mean(), dist.data.mean(), combined.item())
        if opt is not None:
            opt.step()
        else:
            x_pur.data -= config.lr * x_pur.grad
        np.clip(x_pur.data, -1.0, 1.0, out=x_pur.data)
        step_no = step + 1
        if step_no == config.steps or (config.snapshot_every > 0 and
                                       step_no % config.snapshot_every == 0):
            snapshots.append((step_no, x_pur.data.copy()))

    final_cons = consistency_loss(ae, x_pur.data)
    final_lpips = lpips_pair(featurenet, x_pur.data, xb).data
    out = x_pur.data[0] if single else x_pur.data
    return PurifyResult(out, trajectory, snapshots,
                        np.atleast_1d(final_cons), final_lpips)


# ---------------------------------------------------------------------------
# post-processing baselines

def _per_image(x, fn) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 3:
        return fn(arr)
    return np.stack([fn(img) for img in arr])


def _to_u8(img: np.ndarray) -> np.ndarray:
    # (3,H,W) [-1,1] -> HWC uint8 BGR for the codec
    rgb = np.clip((img.transpose(1, 2, 0) + 1.0) * 127.5, 0.0, 255.0)
    return np.round(rgb).astype(np.uint8)[:, :, ::-1]


def _from_u8(bgr: np.ndarray) -> np.ndarray:
    rgb = bgr[:, :, ::-1].astype(np.float64)
    return (rgb / 127.5 - 1.0).transpose(2, 0, 1)


def jpeg_baseline(x, quality: int = 15) -> np.ndarray:
    """Round trip through the standard baseline codec at the given
    quality factor (default 15)."""
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"quality must lie in [1,100], got {quality}")

    def one(img):
        ok, buf = cv2.imencode(".jpg", _to_u8(img),
                               [cv2.IMWRITE_JPEG_QUALITY, int(quality)])
        if not ok:
            raise RuntimeError("codec failed to encode image")
        back = cv2.imdecode(buf, cv2.IMREAD_COLOR)
        if back is None:
            raise RuntimeError("codec failed to decode image")
        return _from_u8(back)

    return _per_image(x, one)


def gaussian_noise_baseline(x, variance: float = 0.15, seed: int = 0) -> np.ndarray:
    """Additive zero-mean Gaussian noise (default variance 0.15), clipped."""
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    arr = np.asarray(x, dtype=np.float64)
    noise = SeedStream(seed).stream("noise-baseline").normal(arr.shape)
    return np.clip(arr + np.sqrt(variance) * noise, -1.0, 1.0)


def _resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    hwc = img.transpose(1, 2, 0)
    out = cv2.resize(hwc, (size, size), interpolation=cv2.INTER_LINEAR)
    return out.transpose(2, 0, 1)


def resize_baseline(x) -> np.ndarray:
    """Bilinear 32 -> 16 -> 32 round trip."""

    def one(img):
        small = _resize_bilinear(img, 16)
        return np.clip(_resize_bilinear(small, 32), -1.0, 1.0)

    return _per_image(x, one)


def lowpass_baseline(x, sigma: float = 1.0) -> np.ndarray:
    """Gaussian blur, kernel size 2*ceil(3*sigma)+1, reflect padding."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1)
    kernel = np.exp(-(t ** 2) / (2.0 * sigma ** 2))
    kernel /= kernel.sum()

    def one(img):
        padded = np.pad(img, ((0, 0), (radius, radius), (radius, radius)),
                        mode="reflect")
        blur_h = np.apply_along_axis(
            lambda row: np.convolve(row, kernel, mode="valid"), 2, padded)
        blur = np.apply_along_axis(
            lambda col: np.convolve(col, kernel, mode="valid"), 1, blur_h)
        return np.clip(blur, -1.0, 1.0)

    return _per_image(x, one)


def combo_baseline(x, seed: int = 0) -> np.ndarray:
    """resize o horizontal-flip o jpeg(quality 15): jpeg first."""

    def one(img):
        out = jpeg_baseline(img, quality=15)
        out = out[:, :, ::-1]  # mirror width
        return resize_baseline(out)

    return _per_image(x, one)


BASELINES = {
    "jpeg": lambda x, seed: jpeg_baseline(x),
    "noise": lambda x, seed: gaussian_noise_baseline(x, seed=seed),
    "resize": lambda x, seed: resize_baseline(x),
    "lowpass": lambda x, seed: lowpass_baseline(x),
    "combo": lambda x, seed: combo_baseline(x, seed=seed),
}


def apply_baseline(name: str, x, seed: int = 0) -> np.ndarray:
    if name not in BASELINES:
        raise ValueError(f"unknown baseline {name!r}; choose from "
                         f"{sorted(BASELINES)}")
    return BASELINES[name](x, seed)
