"""Classical image transforms: flips, quarter-turn rotations, radiometric
enhancement, and additive noise.

Images are (C, H, W) float64 arrays with values in [0, 1]; every transform
returns a fresh array in the same range. Geometric ops permute pixels
exactly (no resampling), so they preserve the pixel-value multiset.
"""

from __future__ import annotations

import numpy as np

FLIP_AXES = ("h", "v", "d45", "d135")
NOISE_KINDS = ("gaussian", "poisson", "salt_pepper")
ENHANCE_KINDS = ("laplacian", "gamma", "histeq")

HISTEQ_BINS = 256


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must be (C, H, W), got shape {img.shape}")
    return img


def flip(img: np.ndarray, axis: str) -> np.ndarray:
    """Mirror horizontally/vertically or reflect across a diagonal.

    ``d45`` is the main-diagonal transpose, ``d135`` the anti-diagonal one;
    both require a square image.
    """
    img = _check_image(img)
    if axis == "h":
        return np.ascontiguousarray(img[:, :, ::-1])
    if axis == "v":
        return np.ascontiguousarray(img[:, ::-1, :])
    if axis in ("d45", "d135"):
        if img.shape[1] != img.shape[2]:
            raise ValueError(f"diagonal flip needs a square image, got {img.shape[1]}x{img.shape[2]}")
        if axis == "d45":
            return np.ascontiguousarray(img.transpose(0, 2, 1))
        return np.ascontiguousarray(img[:, ::-1, ::-1].transpose(0, 2, 1))
    raise ValueError(f"unknown flip axis {axis!r}; expected one of {FLIP_AXES}")


def rotate(img: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Clockwise rotation by 90, 180, or 270 degrees (no resampling)."""
    img = _check_image(img)
    if quarter_turns not in (1, 2, 3):
        raise ValueError(f"quarter_turns must be 1, 2, or 3, got {quarter_turns}")
    return np.ascontiguousarray(np.rot90(img, k=-quarter_turns, axes=(1, 2)))


def enhance(img: np.ndarray, kind: str, gamma: float = 2.0, lap_weight: float = 1.0) -> np.ndarray:
    """Radiometric enhancement: Laplacian sharpening, gamma curve, or
    per-channel histogram equalization. Output is clipped to [0, 1]."""
    img = _check_image(img)
    if kind == "laplacian":
        padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
        response = (
            4.0 * img
            - padded[:, :-2, 1:-1]
            - padded[:, 2:, 1:-1]
            - padded[:, 1:-1, :-2]
            - padded[:, 1:-1, 2:]
        )
        return np.clip(img + lap_weight * response, 0.0, 1.0)
    if kind == "gamma":
        if gamma <= 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        return np.clip(img, 0.0, 1.0) ** gamma
    if kind == "histeq":
        return _histeq(img)
    raise ValueError(f"unknown enhancement {kind!r}; expected one of {ENHANCE_KINDS}")


def _histeq(img: np.ndarray) -> np.ndarray:
    out = np.empty_like(img)
    levels = HISTEQ_BINS - 1
    for c in range(img.shape[0]):
        chan = img[c]
        q = np.clip(np.floor(chan * levels + 0.5), 0, levels).astype(np.int64)
        hist = np.bincount(q.reshape(-1), minlength=HISTEQ_BINS)
        cdf = np.cumsum(hist)
        nonzero = cdf[hist > 0]
        cdf_min = nonzero[0]
        total = chan.size
        if total == cdf_min:
            # constant channel: the standard mapping divides by zero
            out[c] = chan
            continue
        mapping = (cdf - cdf_min) / (total - cdf_min)
        out[c] = mapping[q]
    return np.clip(out, 0.0, 1.0)


def add_noise(
    img: np.ndarray,
    kind: str,
    rng: np.random.Generator,
    sigma: float = 0.05,
    scale: float = 255.0,
    density: float = 0.02,
) -> np.ndarray:
    """Additive noise: Gaussian, Poisson (photon-count style), or salt and
    pepper. Deterministic for a given generator state."""
    img = _check_image(img)
    if kind == "gaussian":
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        return np.clip(img + rng.normal(0.0, sigma, size=img.shape), 0.0, 1.0)
    if kind == "poisson":
        if scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        counts = rng.poisson(np.clip(img, 0.0, 1.0) * scale)
        return np.clip(counts / scale, 0.0, 1.0)
    if kind == "salt_pepper":
        if not 0.0 <= density <= 1.0:
            raise ValueError(f"density must lie in [0, 1], got {density}")
        hit = rng.random(img.shape) < density
        salt = rng.random(img.shape) < 0.5
        return np.where(hit, np.where(salt, 1.0, 0.0), img)
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


def expand_geometric(img: np.ndarray) -> list[np.ndarray]:
    """All seven information-preserving geometric derivatives of a square
    image: the four flips plus the three rotations."""
    img = _check_image(img)
    return [
        flip(img, "h"),
        flip(img, "v"),
        flip(img, "d45"),
        flip(img, "d135"),
        rotate(img, 1),
        rotate(img, 2),
        rotate(img, 3),
    ]
