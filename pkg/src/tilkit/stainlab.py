"""Stain color-space machinery for H&E images.

RGB intensities are converted to optical densities (Beer-Lambert), projected
onto a stain basis (hematoxylin / eosin / DAB concentrations), optionally
perturbed with a per-channel linear augmentation, and reconverted to RGB.
All arithmetic is double precision; quantization happens only at RGB output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SingularMatrixError",
    "AugmentParams",
    "OD_MAX",
    "default_he_matrix",
    "rgb_to_od",
    "od_to_rgb",
    "rgb_to_hed",
    "hed_to_rgb",
    "hed_linear_augment",
]

# Optical density of the darkest representable 8-bit sample: -log10(1/256).
OD_MAX = float(np.log10(256.0))

# Stain absorbance rows (H, E, DAB) before unit normalization.
_HE_ROWS = np.array(
    [
        [0.650, 0.704, 0.286],
        [0.072, 0.990, 0.105],
        [0.268, 0.570, 0.776],
    ],
    dtype=np.float64,
)


class SingularMatrixError(ValueError):
    """Stain matrix cannot be inverted."""


def default_he_matrix() -> np.ndarray:
    """Unit-row-normalized H&E-DAB stain matrix (rows: H, E, D)."""
    rows = _HE_ROWS / np.linalg.norm(_HE_ROWS, axis=1, keepdims=True)
    return rows


def _check_invertible(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3):
        raise SingularMatrixError(f"stain matrix must be 3x3, got {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise SingularMatrixError("stain matrix has non-finite entries")
    if np.linalg.cond(matrix) > 1e12:
        raise SingularMatrixError("stain matrix is singular or near-singular")
    return matrix


def rgb_to_od(img: np.ndarray) -> np.ndarray:
    """Convert 8-bit RGB samples to optical densities.

    od = -log10((v + 1) / 256); the +1 keeps od finite at v = 0 and maps
    pure white to ~0.0017 rather than exactly zero.
    """
    v = np.asarray(img, dtype=np.float64)
    return -np.log10((v + 1.0) / 256.0)


def od_to_rgb(od: np.ndarray) -> np.ndarray:
    """Invert :func:`rgb_to_od`, clamping to the 8-bit range."""
    v = np.round(256.0 * np.power(10.0, -np.asarray(od, dtype=np.float64)) - 1.0)
    return np.clip(v, 0, 255).astype(np.uint8)


def rgb_to_hed(img: np.ndarray, matrix: np.ndarray | None = None) -> np.ndarray:
    """Deconvolve an RGB image into stain concentrations (H, E, D).

    Solves od = c @ matrix per pixel. Concentrations can be negative for
    colors outside the stain gamut; callers clip where that matters.
    """
    matrix = _check_invertible(default_he_matrix() if matrix is None else matrix)
    od = rgb_to_od(img)
    return od @ np.linalg.inv(matrix)


def hed_to_rgb(concentrations: np.ndarray, matrix: np.ndarray | None = None) -> np.ndarray:
    """Recombine stain concentrations into an 8-bit RGB image."""
    matrix = _check_invertible(default_he_matrix() if matrix is None else matrix)
    od = np.asarray(concentrations, dtype=np.float64) @ matrix
    return od_to_rgb(od)


def _as_intervals(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape == (2,):
        arr = np.tile(arr, (3, 1))
    if arr.shape != (3, 2):
        raise ValueError(f"{name} must be (lo, hi) or three (lo, hi) pairs")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ValueError(f"{name} intervals must be non-empty")
    return arr


@dataclass(frozen=True)
class AugmentParams:
    """Per-channel linear perturbation ranges for stain augmentation.

    alpha scales a channel, beta shifts it; both are drawn once per image,
    uniformly from their interval, using ``seed``. A single (lo, hi) pair
    applies to all three channels.
    """

    alpha_range: tuple = (0.95, 1.05)
    beta_range: tuple = (-0.05, 0.05)
    seed: int = 0
    _alpha: np.ndarray = field(init=False, repr=False, compare=False)
    _beta: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        alpha = _as_intervals(self.alpha_range, "alpha_range")
        beta = _as_intervals(self.beta_range, "beta_range")
        if np.any((alpha[:, 0] <= 0.0) & (alpha[:, 1] >= 0.0)):
            raise ValueError("alpha_range must exclude 0")
        object.__setattr__(self, "_alpha", alpha)
        object.__setattr__(self, "_beta", beta)

    def draw(self) -> tuple[np.ndarray, np.ndarray]:
        """Draw (alpha, beta) coefficient triples deterministically."""
        rng = np.random.default_rng(self.seed)
        alpha = rng.uniform(self._alpha[:, 0], self._alpha[:, 1])
        beta = rng.uniform(self._beta[:, 0], self._beta[:, 1])
        return alpha, beta


def hed_linear_augment(
    img: np.ndarray,
    params: AugmentParams,
    matrix: np.ndarray | None = None,
) -> np.ndarray:
    """Apply the stochastic linear stain augmentation to an RGB image.

    Each stain channel c_i becomes alpha_i * c_i + beta_i with coefficients
    drawn once per image from ``params``; the result is reconverted to RGB.
    Deterministic for a fixed (image, params) pair.
    """
    alpha, beta = params.draw()
    hed = rgb_to_hed(img, matrix)
    return hed_to_rgb(hed * alpha + beta, matrix)
