"""Supervised-pixel selection: uniform draws mixed with landmark-centered draws.

Training batches combine frame-uniform pixels with pixels scattered around
facial keypoints by an isotropic Gaussian, in a fixed 2:3 uniform:landmark
ratio.  Fitting reuses the landmark-centered part alone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import cameras
from .errors import InvalidInputError

N_LANDMARKS = 64
LANDMARK_SIGMA_FRAC = 0.025  # std of the Gaussian scatter, as a fraction of image size
UNIFORM_SHARE = (2, 5)       # 2 of every 5 samples are frame-uniform, rest landmark-based


@dataclass
class LandmarkSet:
    """64 facial keypoints: canonical 3D positions plus optional projections."""

    points3d: np.ndarray                 # (64, 3)
    points2d: np.ndarray | None = None   # (64, 2) as (row, col)
    visible: np.ndarray | None = None    # (64,) bool; False = occluded / behind camera

    def __post_init__(self):
        self.points3d = np.asarray(self.points3d, dtype=np.float64)
        if self.points3d.shape != (N_LANDMARKS, 3):
            raise InvalidInputError(f"expected ({N_LANDMARKS}, 3) landmarks, got {self.points3d.shape}")
        if self.points2d is not None:
            self.points2d = np.asarray(self.points2d, dtype=np.float64)
            if self.points2d.shape != (N_LANDMARKS, 2):
                raise InvalidInputError(f"expected ({N_LANDMARKS}, 2) projections, got {self.points2d.shape}")

    def in_frame(self, height: int, width: int) -> np.ndarray:
        """Projected landmarks usable for sampling: visible and inside the frame."""
        if self.points2d is None:
            raise InvalidInputError("landmarks have not been projected")
        ok = np.isfinite(self.points2d).all(axis=1)
        if self.visible is not None:
            ok &= self.visible
        ok &= (self.points2d[:, 0] >= 0) & (self.points2d[:, 0] <= height - 1)
        ok &= (self.points2d[:, 1] >= 0) & (self.points2d[:, 1] <= width - 1)
        return self.points2d[ok]


def split_counts(n: int) -> tuple[int, int]:
    """Exact deterministic partition of n draws into (uniform, landmark) counts."""
    num, den = UNIFORM_SHARE
    n_uniform = -(-num * n // den)  # ceil
    return n_uniform, n - n_uniform


def sample_landmark_pixels(
    image_size: tuple[int, int],
    landmarks2d: np.ndarray,
    n: int,
    rng: np.random.Generator,
    sigma: float | None = None,
) -> np.ndarray:
    """n integer pixels scattered around landmarks by an isotropic Gaussian.

    Each draw picks a landmark uniformly and adds N(0, sigma^2) per axis;
    out-of-frame results are rejected and redrawn.
    """
    height, width = image_size
    if sigma is None:
        sigma = LANDMARK_SIGMA_FRAC * min(height, width)
    landmarks2d = np.asarray(landmarks2d, dtype=np.float64)
    out = np.empty((n, 2), dtype=np.int64)
    todo = n
    while todo > 0:
        idx = rng.integers(0, len(landmarks2d), size=todo)
        pts = landmarks2d[idx] + rng.normal(0.0, sigma, size=(todo, 2))
        pix = np.rint(pts).astype(np.int64)
        ok = (pix[:, 0] >= 0) & (pix[:, 0] < height) & (pix[:, 1] >= 0) & (pix[:, 1] < width)
        accepted = pix[ok]
        out[n - todo : n - todo + len(accepted)] = accepted
        todo -= len(accepted)
    return out


def sample_pixels(
    image_size: tuple[int, int],
    landmarks: LandmarkSet | np.ndarray | None,
    n: int,
    rng: np.random.Generator,
    sigma_frac: float = LANDMARK_SIGMA_FRAC,
) -> np.ndarray:
    """Training pixel batch: ceil(2n/5) uniform draws, the rest landmark-based.

    Returns (n, 2) integer (row, col) pixels, uniform block first.  With no
    usable landmarks the whole batch is uniform (with a warning).
    """
    if n < 1:
        raise InvalidInputError(f"need at least one pixel, got {n}")
    height, width = image_size
    if isinstance(landmarks, LandmarkSet):
        lm2d = landmarks.in_frame(height, width)
    elif landmarks is None:
        lm2d = np.empty((0, 2))
    else:
        lm2d = np.asarray(landmarks, dtype=np.float64)
    n_uniform, n_landmark = split_counts(n)
    if len(lm2d) == 0 and n_landmark > 0:
        warnings.warn("no usable landmarks; falling back to uniform sampling", stacklevel=2)
        n_uniform, n_landmark = n, 0
    rows = rng.integers(0, height, size=n_uniform)
    cols = rng.integers(0, width, size=n_uniform)
    uniform = np.stack([rows, cols], axis=-1)
    if n_landmark == 0:
        return uniform
    around = sample_landmark_pixels(
        image_size, lm2d, n_landmark, rng, sigma=sigma_frac * min(height, width)
    )
    return np.concatenate([uniform, around], axis=0)


def project_landmarks(points3d: np.ndarray, cam: cameras.Camera) -> LandmarkSet:
    """Pinhole-project canonical landmarks; behind-camera points are flagged occluded."""
    points3d = np.asarray(points3d, dtype=np.float64)
    pix, visible = cameras.project_points(cam, points3d)
    return LandmarkSet(points3d=points3d, points2d=pix, visible=visible)
