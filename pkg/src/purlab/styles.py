"""Procedural style families standing in for artist styles.

Four texture families (stripes, checkerboard, radial rings, blobs) with
strongly separated palettes. Every image is a pure function of its
style id and a geometry parameter vector, which is what lets the style
"transfer" proxy re-render the same geometry under a different family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from purlab.rng import SeedStream

__all__ = ["STYLE_NAMES", "StyleDatasetSpec", "StyleSample", "StyleDataset",
           "GateError", "render_style", "generate_style_dataset",
           "style_transfer_proxy"]

STYLE_NAMES = ("stripes", "checkerboard", "radial", "blob")

THETA_DIM = 10

# two anchor colors per style, RGB in [-1,1]
_PALETTES = np.array([
    [[0.85, -0.45, -0.55], [0.95, 0.75, -0.35]],   # stripes: red / amber
    [[-0.75, -0.35, 0.90], [0.90, 0.92, 0.95]],    # checkerboard: blue / white
    [[-0.85, -0.05, -0.60], [-0.25, 0.90, 0.10]],  # radial: dark / green
    [[0.75, -0.60, 0.80], [-0.15, -0.85, -0.10]],  # blob: magenta / deep purple
])


class GateError(RuntimeError):
    """Separability gate failure; carries the confusion matrix."""

    def __init__(self, accuracy: float, confusion: np.ndarray):
        self.accuracy = accuracy
        self.confusion = confusion
        super().__init__(f"style separability gate failed: held-out accuracy "
                         f"{accuracy:.3f} < 0.95\nconfusion matrix:\n{confusion}")


@dataclass
class StyleDatasetSpec:
    num_styles: int = 4
    images_per_style: int = 512
    seed: int = 0
    size: int = 32

    def __post_init__(self):
        if not 2 <= self.num_styles <= len(STYLE_NAMES):
            raise ValueError(f"num_styles must be in [2,{len(STYLE_NAMES)}], "
                             f"got {self.num_styles}")
        if self.images_per_style < 1:
            raise ValueError("images_per_style must be >= 1")
        if self.size != 32:
            raise ValueError("only 32x32 images are supported")


@dataclass
class StyleSample:
    image: np.ndarray          # (3, 32, 32) in [-1,1]
    label: int
    theta: np.ndarray          # (THETA_DIM,) geometry parameters in [0,1)


@dataclass
class StyleDataset:
    spec: StyleDatasetSpec
    images: np.ndarray         # (N, 3, 32, 32)
    labels: np.ndarray         # (N,)
    thetas: np.ndarray         # (N, THETA_DIM)

    def __len__(self) -> int:
        return self.images.shape[0]

    def sample(self, i: int) -> StyleSample:
        return StyleSample(self.images[i], int(self.labels[i]), self.thetas[i])

    def of_style(self, style: int) -> np.ndarray:
        return np.flatnonzero(self.labels == style)


def _grid(size: int):
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="xy")


def _field(style: int, theta: np.ndarray, size: int) -> np.ndarray:
    """Scalar texture field in [0,1] for one style family."""
    u, v = _grid(size)
    angle = theta[0] * np.pi
    phase = 2.0 * np.pi * theta[2]
    cx, cy = 0.2 + 0.6 * theta[3], 0.2 + 0.6 * theta[4]
    if style == 0:      # stripes
        freq = 2.0 + 3.0 * theta[1]
        d = np.cos(angle) * u + np.sin(angle) * v
        f = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * d + phase)
    elif style == 1:    # checkerboard
        freq = 2.0 + 2.0 * theta[1]
        sx = np.sin(2.0 * np.pi * freq * (u - cx))
        sy = np.sin(2.0 * np.pi * freq * (v - cy))
        f = 0.5 + 0.5 * np.tanh(8.0 * sx * sy)
    elif style == 2:    # radial rings
        freq = 3.5 + 3.0 * theta[1]
        r = np.sqrt((u - cx) ** 2 + (v - cy) ** 2)
        f = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * r + phase)
    elif style == 3:    # blobs: a few interfering plane waves
        g = np.zeros_like(u)
        for k in range(2):
            a_k = np.pi * (theta[0] + theta[6 + k])
            f_k = 1.0 + 1.2 * theta[(5 + k) % THETA_DIM]
            g += np.sin(2.0 * np.pi * f_k *
                        (np.cos(a_k) * u + np.sin(a_k) * v) + phase + 2.1 * k)
        f = 0.5 + 0.5 * np.tanh(1.6 * g)
    else:
        raise ValueError(f"unknown style id {style}")
    # mild per-image contrast jitter
    gamma = 0.8 + 0.4 * theta[5]
    return np.clip(f, 0.0, 1.0) ** gamma


def render_style(style: int, theta: np.ndarray, size: int = 32) -> np.ndarray:
    """Deterministic (3,size,size) image in [-1,1] for (style, theta)."""
    if not 0 <= style < len(STYLE_NAMES):
        raise ValueError(f"unknown style id {style}")
    f = _field(style, np.asarray(theta, dtype=np.float64), size)
    a = _PALETTES[style, 0][:, None, None]
    b = _PALETTES[style, 1][:, None, None]
    return np.clip(a + (b - a) * f[None], -1.0, 1.0)


def generate_style_dataset(spec: StyleDatasetSpec,
                           run_gate: bool = False) -> StyleDataset:
    """Seed-deterministic labeled image set; optionally runs the
    classifier separability gate (held-out accuracy >= 0.95)."""
    rng = SeedStream(spec.seed).stream("style-dataset")
    images, labels, thetas = [], [], []
    for style in range(spec.num_styles):
        sub = rng.stream(f"style:{style}")
        for i in range(spec.images_per_style):
            theta = sub.uniform(0.0, 1.0, THETA_DIM)
            images.append(render_style(style, theta, spec.size))
            labels.append(style)
            thetas.append(theta)
    ds = StyleDataset(spec, np.stack(images), np.array(labels, dtype=np.int64),
                      np.stack(thetas))
    if run_gate:
        run_separability_gate(ds)
    return ds


def run_separability_gate(ds: StyleDataset, steps: int = 1200) -> float:
    """Train a fresh classifier; raise GateError below 95% held-out."""
    from purlab.models import classify_style
    from purlab.training import ClassifierTrainConfig, train_style_classifier

    cfg = ClassifierTrainConfig(steps=steps, batch_size=32, lr=1e-3,
                                seed=ds.spec.seed)
    fn, accuracy, _ = train_style_classifier(ds.images, ds.labels, cfg)
    if accuracy < 0.95:
        k = ds.spec.num_styles
        confusion = np.zeros((k, k), dtype=np.int64)
        _, pred = classify_style(fn, ds.images)
        for truth, guess in zip(ds.labels, pred):
            confusion[truth, guess] += 1
        raise GateError(accuracy, confusion)
    return accuracy


def style_transfer_proxy(sample: StyleSample, target_style: int) -> np.ndarray:
    """Re-render the sample's geometry under the target style family.

    With target_style equal to the sample's own style this is exactly
    the identity, by construction.
    """
    if not 0 <= target_style < len(STYLE_NAMES):
        raise ValueError(f"unknown style id {target_style}")
    return render_style(target_style, sample.theta, sample.image.shape[-1])
