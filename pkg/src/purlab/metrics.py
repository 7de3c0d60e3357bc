"""Reference-based image fidelity metrics and the latent diagnostic.

PSNR and SSIM average over RGB channels on [0,1]-mapped pixels; the
pixel-domain visual-information metric follows the reference
conventions (ITU-R 601 luma, 4 scales, sigma_nsq=2, Gaussian windows
halving per scale). The perceptual distance runs on the frozen feature
trunk and is differentiable through the tensor engine.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from purlab import tensor as T
from purlab.models import AutoencoderParams, FeatureNetParams, encode, feature_extract
from purlab.tensor import DiffTensor

__all__ = ["psnr", "ssim", "vifp", "lpips_proxy", "lpips_pair",
           "latent_distance", "latent_distance_trajectory", "MetricReport"]

PSNR_CAP = 100.0


def _to_unit(x: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def _check_pair(a, b):
    a = a.data if isinstance(a, DiffTensor) else np.asarray(a)
    b = b.data if isinstance(b, DiffTensor) else np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"metric inputs must share a shape, got "
                         f"{a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """10*log10(1/MSE) on [0,1]-mapped pixels, capped at 100 dB."""
    a, b = _check_pair(a, b)
    mse_val = float(np.mean((_to_unit(a) - _to_unit(b)) ** 2))
    if mse_val == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse_val))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", win, kernel)


def _filter_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # reflect padding keeps all four pyramid scales usable on 32x32 inputs
    kh, kw = kernel.shape
    padded = np.pad(img, ((kh // 2, kh - 1 - kh // 2),
                          (kw // 2, kw - 1 - kw // 2)), mode="reflect")
    return _filter_valid(padded, kernel)


def ssim(a, b) -> float:
    """Structural similarity: 11x11 Gaussian window sigma=1.5, K1=0.01,
    K2=0.03, L=1, computed per channel and averaged."""
    a, b = _check_pair(a, b)
    au, bu = _to_unit(a), _to_unit(b)
    if au.ndim == 2:
        au, bu = au[None], bu[None]
    kernel = _gaussian_kernel(11, 1.5)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for ch in range(au.shape[0]):
        x, y = au[ch], bu[ch]
        mu_x = _filter_valid(x, kernel)
        mu_y = _filter_valid(y, kernel)
        xx = _filter_valid(x * x, kernel) - mu_x ** 2
        yy = _filter_valid(y * y, kernel) - mu_y ** 2
        xy = _filter_valid(x * y, kernel) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def _luma255(x: np.ndarray) -> np.ndarray:
    u = _to_unit(x) * 255.0
    if u.ndim == 2:
        return u
    r, g, b = u[0], u[1], u[2]
    return 0.299 * r + 0.587 * g + 0.114 * b


def vifp(reference, distorted, sigma_nsq: float = 2.0) -> float:
    """Pixel-domain visual information fidelity of `distorted` against
    `reference` (not symmetric). 1.0 when identical; degenerate
    all-constant references yield 0.0 with a warning."""
    ra, da = _check_pair(reference, distorted)
    ref, dist = _luma255(ra), _luma255(da)
    eps = 1e-10
    num = den = 0.0
    for scale in range(1, 5):
        size = 2 ** (4 - scale + 1) + 1
        kernel = _gaussian_kernel(size, size / 5.0)
        if scale > 1:
            ref = _filter_same(ref, kernel)[::2, ::2]
            dist = _filter_same(dist, kernel)[::2, ::2]
        mu1 = _filter_same(ref, kernel)
        mu2 = _filter_same(dist, kernel)
        s1 = np.maximum(_filter_same(ref * ref, kernel) - mu1 ** 2, 0.0)
        s2 = np.maximum(_filter_same(dist * dist, kernel) - mu2 ** 2, 0.0)
        s12 = _filter_same(ref * dist, kernel) - mu1 * mu2

        g = s12 / (s1 + eps)
        sv = s2 - g * s12
        g[s1 < eps] = 0.0
        sv[s1 < eps] = s2[s1 < eps]
        s1[s1 < eps] = 0.0
        g[s2 < eps] = 0.0
        sv[s2 < eps] = 0.0
        sv[g < 0] = s2[g < 0]
        g[g < 0] = 0.0
        sv[sv <= eps] = eps

        num += np.sum(np.log10(1.0 + g * g * s1 / (sv + sigma_nsq)))
        den += np.sum(np.log10(1.0 + s1 / sigma_nsq))
    if den == 0.0:
        if np.array_equal(ra, da):
            return 1.0
        warnings.warn("all-constant reference: visual-information ratio "
                      "undefined, returning 0.0")
        return 0.0
    return float(num / den)


def lpips_pair(fn: FeatureNetParams, a, b) -> DiffTensor:
    """Differentiable perceptual distance, per image: for each trunk
    stage, channel-unit-normalize both feature maps, take the mean
    squared difference, and sum the three stage values."""
    from purlab.models import ensure_batch, IMG_SHAPE
    a_t, _ = ensure_batch(a, IMG_SHAPE)
    b_t, _ = ensure_batch(b, IMG_SHAPE)
    fa = feature_extract(fn, a_t)
    fb = feature_extract(fn, b_t)
    total = None
    for sa, sb in zip(fa, fb):
        diff = T.square(T.l2norm_channels(sa) - T.l2norm_channels(sb))
        stage = diff.mean(axis=(1, 2, 3))
        total = stage if total is None else total + stage
    return total


def lpips_proxy(fn: FeatureNetParams, a, b) -> float:
    """Scalar perceptual distance between two images (symmetric, >= 0)."""
    val = lpips_pair(fn, a, b).data
    return float(val.mean())


def _unit_latents(z: np.ndarray) -> np.ndarray:
    flat = z.reshape(z.shape[0], -1)
    norms = np.linalg.norm(flat, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm latent: normalized distance undefined")
    return flat / norms


def latent_distance(ae: AutoencoderParams, x_a, x_b) -> float:
    """L2 distance between unit-normalized latent codes of two images."""
    za = encode(ae, np.asarray(x_a)[None] if np.asarray(x_a).ndim == 3
                else x_a).data
    zb = encode(ae, np.asarray(x_b)[None] if np.asarray(x_b).ndim == 3
                else x_b).data
    return float(np.linalg.norm(_unit_latents(za) - _unit_latents(zb), axis=1).mean())


def latent_distance_trajectory(ae: AutoencoderParams, x_clean: np.ndarray,
                               snapshots: list[np.ndarray]) -> np.ndarray:
    """Per-snapshot normalized latent distance to the clean reference.

    Evaluation-only: the purification itself never sees x_clean.
    """
    clean = np.asarray(x_clean)
    single = clean.ndim == 3
    z_ref = encode(ae, clean[None] if single else clean).data
    ref = _unit_latents(z_ref)
    out = []
    for snap in snapshots:
        arr = np.asarray(snap)
        z = encode(ae, arr[None] if single else arr).data
        out.append(np.linalg.norm(_unit_latents(z) - ref, axis=1))
    traj = np.stack(out)  # (steps, batch)
    return traj[:, 0] if single else traj


@dataclass
class MetricReport:
    """Per-image metric records plus aggregates and run provenance."""

    task: str
    seed: int
    config_hash: str
    model_hashes: dict = field(default_factory=dict)
    records: list = field(default_factory=list)  # (image_id, condition, metric, value)

    def add(self, image_id: str, condition: str, metric: str, value: float):
        self.records.append((str(image_id), str(condition), str(metric),
                             float(value)))

    def values(self, condition: str, metric: str) -> np.ndarray:
        return np.array([v for (_, c, m, v) in self.records
                         if c == condition and m == metric])

    def aggregate(self, condition: str, metric: str) -> tuple[float, float]:
        vals = self.values(condition, metric)
        if vals.size == 0:
            raise KeyError(f"no records for ({condition}, {metric})")
        return float(np.mean(vals)), float(np.std(vals))

    def conditions(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, c, _, _ in self.records:
            seen.setdefault(c, None)
        return list(seen)

    def to_dict(self) -> dict:
        aggregates = {}
        for cond in self.conditions():
            metrics = sorted({m for (_, c, m, _) in self.records if c == cond})
            aggregates[cond] = {}
            for m in metrics:
                mean, std = self.aggregate(cond, m)
                aggregates[cond][m] = {"mean": mean, "std": std,
                                       "count": int(self.values(cond, m).size)}
        return {
            "task": self.task,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "model_hashes": self.model_hashes,
            "aggregates": aggregates,
            "records": [list(r) for r in self.records],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricReport":
        rep = cls(task=payload["task"], seed=payload["seed"],
                  config_hash=payload["config_hash"],
                  model_hashes=dict(payload.get("model_hashes", {})))
        for image_id, cond, metric, value in payload["records"]:
            rep.add(image_id, cond, metric, value)
        return rep
