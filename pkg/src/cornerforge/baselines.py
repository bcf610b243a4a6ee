"""Comparison detectors: Harris, Shi-Tomasi, and a random scatter baseline.

Gradients are central differences on an edge-replicated border; the structure
tensor is smoothed with a Gaussian truncated at 3 sigma and renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import GrayImage
from .runtime import Keypoint, _nms_keep_field, top_n_by_score

HARRIS_K = 0.04  # standard free parameter for the det - k*trace^2 response


@dataclass(frozen=True)
class StructureTensor:
    """Per-pixel 2x2 symmetric matrix [[axx, axy], [axy, ayy]] of smoothed
    gradient products."""

    axx: np.ndarray
    axy: np.ndarray
    ayy: np.ndarray
    sigma: float


def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-d Gaussian truncated at 3 sigma and renormalized to unit sum."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    r = int(math.ceil(3.0 * sigma))
    xs = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma**2))
    return k / k.sum()


def _smooth_separable(field: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = len(kernel) // 2
    h, w = field.shape
    pad = np.pad(field, ((0, 0), (r, r)), mode="edge")
    out = np.zeros_like(field)
    for i, kv in enumerate(kernel):
        out += kv * pad[:, i : i + w]
    pad = np.pad(out, ((r, r), (0, 0)), mode="edge")
    out = np.zeros_like(field)
    for i, kv in enumerate(kernel):
        out += kv * pad[i : i + h, :]
    return out


def gradients(img: GrayImage) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference (gx, gy) with clamped-replication borders."""
    a = img.pixels.astype(np.float64)
    pad = np.pad(a, 1, mode="edge")
    gx = 0.5 * (pad[1:-1, 2:] - pad[1:-1, :-2])
    gy = 0.5 * (pad[2:, 1:-1] - pad[:-2, 1:-1])
    return gx, gy


def structure_tensor(img: GrayImage, sigma: float = 2.5) -> StructureTensor:
    gx, gy = gradients(img)
    k = gaussian_kernel(sigma)
    return StructureTensor(
        axx=_smooth_separable(gx * gx, k),
        axy=_smooth_separable(gx * gy, k),
        ayy=_smooth_separable(gy * gy, k),
        sigma=sigma,
    )


def harris_response(tensor: StructureTensor, k: float = HARRIS_K) -> np.ndarray:
    """det(H) - k * trace(H)^2 per pixel."""
    det = tensor.axx * tensor.ayy - tensor.axy**2
    trace = tensor.axx + tensor.ayy
    return det - k * trace**2


def shi_tomasi_response(tensor: StructureTensor) -> np.ndarray:
    """Smallest eigenvalue of the 2x2 tensor, in closed form."""
    half_tr = 0.5 * (tensor.axx + tensor.ayy)
    half_diff = 0.5 * (tensor.axx - tensor.ayy)
    return half_tr - np.sqrt(half_diff**2 + tensor.axy**2)


def detect_response(field: np.ndarray, n_features: int,
                    margin: int = 0) -> list[Keypoint]:
    """3x3 NMS over a response field, then the top n by response.

    Only strictly positive responses are candidates (feature-count control is
    equivalent to thresholding on the response). Non-maximal suppression uses
    the shared keep rule: survive iff no 8-neighbor is strictly greater and no
    raster-earlier neighbor is equal.
    """
    keep = _nms_keep_field(field) & (field > 0)
    if margin:
        inner = np.zeros_like(keep)
        if field.shape[0] > 2 * margin and field.shape[1] > 2 * margin:
            inner[margin:-margin, margin:-margin] = True
        keep &= inner
    ys, xs = np.nonzero(keep)
    kps = [Keypoint(int(x), int(y), float(field[y, x])) for x, y in zip(xs, ys)]
    return top_n_by_score(kps, n_features, split_ties=True)


def detect_random(img: GrayImage, n_features: int, seed,
                  margin: int = 3) -> list[Keypoint]:
    """n distinct uniform interior positions, deterministic per seed.

    Positions are independent of pixel content; all scores are 1.
    """
    iw = img.width - 2 * margin
    ih = img.height - 2 * margin
    if iw <= 0 or ih <= 0:
        raise ValueError("image too small for the interior margin")
    total = iw * ih
    if n_features > total:
        raise ValueError(f"requested {n_features} features from {total} interior pixels")
    if n_features <= 0:
        return []
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=n_features, replace=False)
    flat.sort()
    xs = flat % iw + margin
    ys = flat // iw + margin
    return [Keypoint(int(x), int(y), 1.0) for x, y in zip(xs, ys)]
