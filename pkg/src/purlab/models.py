"""Toy networks: pixel autoencoder, latent denoiser, feature/style net.

All three are small conv nets over 3x32x32 images in [-1,1] with 4x8x8
latent codes. The feature net doubles as the style classifier and, with
frozen weights, as the backbone of the perceptual distance.
"""

from __future__ import annotations

import copy
from typing import Union

import numpy as np

from purlab import tensor as T
from purlab.rng import SeedStream
from purlab.tensor import DiffTensor, ShapeError

__all__ = [
    "IMG_SHAPE", "LATENT_SHAPE", "AutoencoderParams", "DenoiserParams",
    "FeatureNetParams", "encode", "decode", "denoiser_predict",
    "feature_extract", "classify_style", "cross_entropy", "ensure_batch",
    "timestep_embedding", "validate_image",
]

IMG_SHAPE = (3, 32, 32)
LATENT_SHAPE = (4, 8, 8)
TIME_EMBED_DIM = 32

ArrayLike = Union[np.ndarray, DiffTensor]


def validate_image(x: np.ndarray) -> None:
    """Reject arrays that are not [-1,1] images of the lab's geometry."""
    if x.shape[-3:] != IMG_SHAPE:
        raise ShapeError(f"expected image shape (...,{IMG_SHAPE}), got {x.shape}")
    if x.min() < -1.0 - 1e-9 or x.max() > 1.0 + 1e-9:
        raise ValueError(f"image values outside [-1,1]: "
                         f"min={x.min():.4f}, max={x.max():.4f}")


def ensure_batch(x: ArrayLike, tail: tuple) -> tuple[DiffTensor, bool]:
    t = x if isinstance(x, DiffTensor) else DiffTensor(x)
    if t.data.shape == tail:
        return T.reshape(t, (1,) + tail) if t.requires_grad else \
            DiffTensor(t.data[None]), True
    if t.data.ndim == len(tail) + 1 and t.data.shape[1:] == tail:
        return t, False
    raise ShapeError(f"expected shape {tail} or (B,)+{tail}, got {t.data.shape}")


def _maybe_squeeze(y: DiffTensor, squeeze: bool) -> DiffTensor:
    if not squeeze:
        return y
    return DiffTensor(y.data[0]) if not y.requires_grad else \
        T.reshape(y, y.data.shape[1:])


def _conv_init(rng: SeedStream, cout: int, cin: int, k: int) -> DiffTensor:
    bound = np.sqrt(1.0 / (cin * k * k))
    w = rng.uniform(-bound, bound, (cout, cin, k, k))
    return DiffTensor(w, requires_grad=True)


def _linear_init(rng: SeedStream, nin: int, nout: int) -> DiffTensor:
    bound = np.sqrt(1.0 / nin)
    return DiffTensor(rng.uniform(-bound, bound, (nin, nout)), requires_grad=True)


def _bias_init(n: int) -> DiffTensor:
    return DiffTensor(np.zeros(n), requires_grad=True)


class _ParamModel:
    """Shared plumbing: an ordered name->DiffTensor parameter dict."""

    def __init__(self, params: dict[str, DiffTensor]):
        self.params = params

    def tensors(self) -> list[DiffTensor]:
        return list(self.params.values())

    def set_requires_grad(self, flag: bool) -> "_ParamModel":
        for p in self.params.values():
            p.requires_grad = flag
        return self

    def clone(self):
        return type(self)({k: DiffTensor(v.data.copy(), requires_grad=v.requires_grad)
                           for k, v in self.params.items()})

    def state_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(p.data).tobytes()
                        for p in self.params.values())

    def __getitem__(self, name: str) -> DiffTensor:
        return self.params[name]

    @classmethod
    def from_params(cls, params: dict[str, DiffTensor]):
        model = cls.__new__(cls)
        _ParamModel.__init__(model, copy.copy(params))
        return model


class AutoencoderParams(_ParamModel):
    """Encoder 3->32->64 (stride 2) + 1x1 head to 4 channels; mirrored
    decoder with nearest upsampling and a tanh output."""

    @classmethod
    def init(cls, rng: SeedStream) -> "AutoencoderParams":
        r = rng.stream("autoencoder-init")
        p = {
            "enc.w1": _conv_init(r.stream("e1"), 32, 3, 3), "enc.b1": _bias_init(32),
            "enc.w2": _conv_init(r.stream("e2"), 64, 32, 3), "enc.b2": _bias_init(64),
            "enc.w3": _conv_init(r.stream("e3"), 4, 64, 1), "enc.b3": _bias_init(4),
            "dec.w1": _conv_init(r.stream("d1"), 64, 4, 1), "dec.b1": _bias_init(64),
            "dec.w2": _conv_init(r.stream("d2"), 32, 64, 3), "dec.b2": _bias_init(32),
            "dec.w3": _conv_init(r.stream("d3"), 3, 32, 3), "dec.b3": _bias_init(3),
        }
        return cls(p)


class DenoiserParams(_ParamModel):
    """U-shaped latent denoiser: two down levels (4->32->64), a
    bottleneck, two up levels with skip concatenation; a 32-d sinusoidal
    timestep embedding enters each level through a learned projection."""

    @classmethod
    def init(cls, rng: SeedStream) -> "DenoiserParams":
        r = rng.stream("denoiser-init")
        d = TIME_EMBED_DIM
        p = {
            "in.w": _conv_init(r.stream("in"), 32, 4, 3), "in.b": _bias_init(32),
            "in.tw": _linear_init(r.stream("in.t"), d, 32), "in.tb": _bias_init(32),
            "down.w": _conv_init(r.stream("down"), 64, 32, 3), "down.b": _bias_init(64),
            "down.tw": _linear_init(r.stream("down.t"), d, 64), "down.tb": _bias_init(64),
            "mid.w": _conv_init(r.stream("mid"), 64, 64, 3), "mid.b": _bias_init(64),
            "mid.tw": _linear_init(r.stream("mid.t"), d, 64), "mid.tb": _bias_init(64),
            "up2.w": _conv_init(r.stream("up2"), 64, 128, 3), "up2.b": _bias_init(64),
            "up2.tw": _linear_init(r.stream("up2.t"), d, 64), "up2.tb": _bias_init(64),
            "up1.w": _conv_init(r.stream("up1"), 32, 96, 3), "up1.b": _bias_init(32),
            "up1.tw": _linear_init(r.stream("up1.t"), d, 32), "up1.tb": _bias_init(32),
            "out.w": _conv_init(r.stream("out"), 4, 32, 3), "out.b": _bias_init(4),
        }
        return cls(p)


class FeatureNetParams(_ParamModel):
    """Three stride-2 conv stages (3->16->32->64) plus a linear head."""

    @classmethod
    def init(cls, rng: SeedStream, num_classes: int) -> "FeatureNetParams":
        r = rng.stream("featurenet-init")
        p = {
            "c1.w": _conv_init(r.stream("c1"), 16, 3, 3), "c1.b": _bias_init(16),
            "c2.w": _conv_init(r.stream("c2"), 32, 16, 3), "c2.b": _bias_init(32),
            "c3.w": _conv_init(r.stream("c3"), 64, 32, 3), "c3.b": _bias_init(64),
            "head.w": _linear_init(r.stream("head"), 64 * 4 * 4, num_classes),
            "head.b": _bias_init(num_classes),
        }
        return cls(p)

    @property
    def num_classes(self) -> int:
        return self.params["head.b"].data.shape[0]


# ---------------------------------------------------------------------------
# forward passes

def encode(ae: AutoencoderParams, x: ArrayLike) -> DiffTensor:
    """Deterministic 4x8x8 latent code of a [-1,1] image."""
    xb, squeeze = ensure_batch(x, IMG_SHAPE)
    h = T.silu(T.conv2d(xb, ae["enc.w1"], ae["enc.b1"], stride=2, padding=1))
    h = T.silu(T.conv2d(h, ae["enc.w2"], ae["enc.b2"], stride=2, padding=1))
    z = T.conv2d(h, ae["enc.w3"], ae["enc.b3"])
    return _maybe_squeeze(z, squeeze)


def decode(ae: AutoencoderParams, z: ArrayLike) -> DiffTensor:
    """Image in [-1,1] (tanh output) from a 4x8x8 latent code."""
    zb, squeeze = ensure_batch(z, LATENT_SHAPE)
    h = T.silu(T.conv2d(zb, ae["dec.w1"], ae["dec.b1"]))
    h = T.upsample2x(h)
    h = T.silu(T.conv2d(h, ae["dec.w2"], ae["dec.b2"], padding=1))
    h = T.upsample2x(h)
    x = T.tanh(T.conv2d(h, ae["dec.w3"], ae["dec.b3"], padding=1))
    return _maybe_squeeze(x, squeeze)


def timestep_embedding(t: np.ndarray, dim: int = TIME_EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _film(h: DiffTensor, emb: DiffTensor, dn: DenoiserParams, lvl: str) -> DiffTensor:
    shift = T.add_bias(T.matmul(emb, dn[f"{lvl}.tw"]), dn[f"{lvl}.tb"])
    return T.add_bias(h, shift)


def denoiser_predict(dn: DenoiserParams, z_t: ArrayLike, t, num_steps: int) -> DiffTensor:
    """Predicted noise for latents z_t at timestep(s) t in [1, num_steps]."""
    zb, squeeze = ensure_batch(z_t, LATENT_SHAPE)
    t_arr = np.atleast_1d(np.asarray(t))
    if t_arr.size == 1 and zb.data.shape[0] > 1:
        t_arr = np.full(zb.data.shape[0], t_arr[0])
    if t_arr.shape[0] != zb.data.shape[0]:
        raise ShapeError(f"t has {t_arr.shape[0]} entries for batch "
                         f"{zb.data.shape[0]}")
    if np.any(t_arr < 1) or np.any(t_arr > num_steps):
        raise ValueError(f"timestep out of range [1,{num_steps}]: {t_arr}")

    emb = DiffTensor(timestep_embedding(t_arr))
    h1 = T.silu(_film(T.conv2d(zb, dn["in.w"], dn["in.b"], padding=1),
                      emb, dn, "in"))
    h2 = T.silu(_film(T.conv2d(h1, dn["down.w"], dn["down.b"], stride=2,
                               padding=1), emb, dn, "down"))
    hb = T.silu(_film(T.conv2d(h2, dn["mid.w"], dn["mid.b"], padding=1),
                      emb, dn, "mid"))
    u2 = T.silu(_film(T.conv2d(T.concat_channels([hb, h2]), dn["up2.w"],
                               dn["up2.b"], padding=1), emb, dn, "up2"))
    u1 = T.silu(_film(T.conv2d(T.concat_channels([T.upsample2x(u2), h1]),
                               dn["up1.w"], dn["up1.b"], padding=1),
                      emb, dn, "up1"))
    eps = T.conv2d(u1, dn["out.w"], dn["out.b"], padding=1)
    return _maybe_squeeze(eps, squeeze)


def feature_extract(fn: FeatureNetParams, x: ArrayLike) -> list[DiffTensor]:
    """The three conv stage activations: (16,16,16), (32,8,8), (64,4,4)."""
    xb, squeeze = ensure_batch(x, IMG_SHAPE)
    f1 = T.relu(T.conv2d(xb, fn["c1.w"], fn["c1.b"], stride=2, padding=1))
    f2 = T.relu(T.conv2d(f1, fn["c2.w"], fn["c2.b"], stride=2, padding=1))
    f3 = T.relu(T.conv2d(f2, fn["c3.w"], fn["c3.b"], stride=2, padding=1))
    return [_maybe_squeeze(f, squeeze) for f in (f1, f2, f3)]


def _logits(fn: FeatureNetParams, xb: DiffTensor) -> DiffTensor:
    f3 = feature_extract(fn, xb)[2]
    flat = T.reshape(f3, (f3.data.shape[0], 64 * 4 * 4))
    return T.add_bias(T.matmul(flat, fn["head.w"]), fn["head.b"])


def classify_style(fn: FeatureNetParams, x: ArrayLike):
    """Softmax scores and argmax labels; ties break to the lowest index."""
    xb, squeeze = ensure_batch(x, IMG_SHAPE)
    logits = _logits(fn, xb).data
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    scores = e / e.sum(axis=1, keepdims=True)
    labels = np.argmax(scores, axis=1)
    if squeeze:
        return scores[0], int(labels[0])
    return scores, labels


def cross_entropy(fn: FeatureNetParams, x: DiffTensor,
                  labels: np.ndarray) -> DiffTensor:
    """Mean cross-entropy of the style head (differentiable)."""
    logits = _logits(fn, x)
    batch, k = logits.data.shape
    shift = -logits.data.max(axis=1)  # constant; the shift cancels in the grad
    shifted = T.add_rows(logits, shift)
    lse = T.log(T.exp(shifted).sum(axis=1))
    onehot = np.zeros((batch, k))
    onehot[np.arange(batch), labels] = 1.0
    true_logit = (shifted * DiffTensor(onehot)).sum(axis=1)
    return (lse - true_logit).mean()
