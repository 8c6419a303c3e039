"""Volume rendering: depth sampling, compositing, full-frame rendering.

The quadrature follows the standard emission-absorption model: with sample
spacing delta_i, opacity a_i = 1 - exp(-sigma_i * delta_i), transmittance
T_i = prod_{j<i} (1 - a_j) and weight w_i = T_i * a_i; the pixel color is
sum_i w_i c_i plus (1 - sum_i w_i) times the background color.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from . import cameras
from .errors import InvalidInputError
from .field import FaceCodes, FaceFieldModel, RadianceField

# Keeps cumprod gradients finite at fully opaque samples; well below every
# tolerance used by callers.
_TRANSMITTANCE_FLOOR = 1e-10


@dataclass
class RaySampleBatch:
    """Per-ray quadrature state: depths, field outputs, compositing results."""

    z: Tensor          # (R, N) strictly ascending depths
    sigma: Tensor      # (R, N) densities, >= 0
    rgb: Tensor        # (R, N, 3) colors in [0, 1]
    weights: Tensor | None = None
    trans: Tensor | None = None


def stratified_sample(
    z_near: float,
    z_far: float,
    n_samples: int,
    n_rays: int = 1,
    jitter: bool = False,
    rng: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
    device=None,
) -> Tensor:
    """(n_rays, n_samples) depths, one per equal-width bin of [z_near, z_far].

    Bin midpoints when ``jitter`` is off, otherwise one uniform draw per bin.
    """
    if n_samples < 1:
        raise InvalidInputError(f"need at least one sample, got {n_samples}")
    edges = torch.linspace(z_near, z_far, n_samples + 1, dtype=dtype, device=device)
    lo, hi = edges[:-1], edges[1:]
    if jitter:
        u = torch.rand((n_rays, n_samples), generator=rng, dtype=dtype, device=device)
    else:
        u = torch.full((n_rays, n_samples), 0.5, dtype=dtype, device=device)
    return lo + u * (hi - lo)


def hierarchical_resample(
    z: Tensor, w: Tensor, n_new: int, rng: torch.Generator | None = None
) -> Tensor:
    """Importance-resample depths and merge them with the originals.

    Each input depth owns a bin bounded by the midpoints to its neighbours
    (end bins are reflected outward), and the piecewise-constant density is
    proportional to ``w`` per bin.  When a ray's weights sum to ~0 the density
    falls back to uniform.  Returns (R, N + n_new) sorted ascending, detached.
    """
    if z.shape != w.shape:
        raise InvalidInputError(f"depths {tuple(z.shape)} and weights {tuple(w.shape)} differ")
    if z.shape[-1] < 2:
        raise InvalidInputError("need at least two depths to resample")
    if (w < 0).any():
        raise InvalidInputError("weights must be non-negative")
    z = z.detach()
    w = w.detach()
    mids = 0.5 * (z[..., 1:] + z[..., :-1])
    first = z[..., :1] - (mids[..., :1] - z[..., :1])
    last = z[..., -1:] + (z[..., -1:] - mids[..., -1:])
    edges = torch.cat([first, mids, last], dim=-1)  # (R, N + 1)

    mass = w.sum(dim=-1, keepdim=True)
    uniform = torch.ones_like(w) / w.shape[-1]
    pdf = torch.where(mass > 1e-12, w / mass.clamp_min(1e-12), uniform)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)
    cdf[..., -1] = 1.0

    u = torch.rand((z.shape[0], n_new), generator=rng, dtype=z.dtype, device=z.device)
    idx = torch.searchsorted(cdf, u, right=True).clamp(1, z.shape[-1]) - 1
    cdf_lo = torch.gather(cdf, -1, idx)
    cdf_hi = torch.gather(cdf, -1, idx + 1)
    edge_lo = torch.gather(edges, -1, idx)
    edge_hi = torch.gather(edges, -1, idx + 1)
    frac = (u - cdf_lo) / (cdf_hi - cdf_lo).clamp_min(1e-12)
    new_z = edge_lo + frac * (edge_hi - edge_lo)
    merged, _ = torch.sort(torch.cat([z, new_z], dim=-1), dim=-1)
    return merged


def composite(
    z: Tensor,
    sigma: Tensor,
    rgb: Tensor,
    last_delta: float | Tensor | None = None,
    background: Tensor | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Composite per-ray samples into colors.

    ``last_delta`` is the width assigned to the final sample (callers supply
    the pass's nominal spacing; defaults to the ray's mean spacing).  Returns
    (color (R, 3), weights (R, N), transmittance (R, N)).
    """
    if (z.diff(dim=-1) <= 0).any():
        raise InvalidInputError("depths must be strictly ascending")
    if (sigma < 0).any():
        raise InvalidInputError("densities must be non-negative")
    deltas = z.diff(dim=-1)
    if last_delta is None:
        last = deltas.mean(dim=-1, keepdim=True)
    elif isinstance(last_delta, Tensor):
        last = last_delta.expand(z.shape[0], 1)
    else:
        last = torch.full((z.shape[0], 1), float(last_delta), dtype=z.dtype, device=z.device)
    deltas = torch.cat([deltas, last], dim=-1)

    alpha = 1.0 - torch.exp(-sigma * deltas)
    keep = (1.0 - alpha).clamp_min(_TRANSMITTANCE_FLOOR)
    trans = torch.cat(
        [torch.ones_like(alpha[..., :1]), torch.cumprod(keep, dim=-1)[..., :-1]], dim=-1
    )
    weights = trans * alpha
    color = (weights[..., None] * rgb).sum(dim=-2)
    if background is not None:
        color = color + (1.0 - weights.sum(dim=-1, keepdim=True)) * background
    return color, weights, trans


def composite_batch(batch: RaySampleBatch, last_delta=None, background=None) -> tuple[Tensor, RaySampleBatch]:
    """Composite a RaySampleBatch, filling its weights and transmittance."""
    color, weights, trans = composite(batch.z, batch.sigma, batch.rgb, last_delta, background)
    batch.weights = weights
    batch.trans = trans
    return color, batch


def render_rays(
    model: FaceFieldModel,
    origins: Tensor,
    dirs: Tensor,
    codes: FaceCodes,
    near: float,
    far: float,
    n_coarse: int = 64,
    n_fine: int = 64,
    jitter: bool = False,
    rng: torch.Generator | None = None,
    background: Tensor | None = None,
    coarse_only: bool = False,
) -> dict[str, Tensor]:
    """Two-pass (coarse then importance-refined fine) render of a ray bundle.

    ``origins``/``dirs`` are (R, 3); returns a dict with ``coarse`` and, unless
    ``coarse_only``, ``fine`` colors of shape (R, 3) plus the fine weights and
    depths for downstream probes.
    """
    n_rays = origins.shape[0]
    z_coarse = stratified_sample(
        near, far, n_coarse, n_rays, jitter=jitter, rng=rng, dtype=origins.dtype, device=origins.device
    )
    sigma_c, rgb_c = _query(model.coarse, origins, dirs, z_coarse, codes)
    color_c, weights_c, _ = composite(
        z_coarse, sigma_c, rgb_c, last_delta=(far - near) / n_coarse, background=background
    )
    out = {"coarse": color_c, "z_coarse": z_coarse, "weights_coarse": weights_c}
    if coarse_only:
        return out
    z_fine = hierarchical_resample(z_coarse, weights_c.detach(), n_fine, rng=rng)
    sigma_f, rgb_f = _query(model.fine, origins, dirs, z_fine, codes)
    color_f, weights_f, _ = composite(
        z_fine, sigma_f, rgb_f, last_delta=(far - near) / z_fine.shape[-1], background=background
    )
    out.update({"fine": color_f, "z_fine": z_fine, "weights_fine": weights_f})
    return out


def _query(field: RadianceField, origins: Tensor, dirs: Tensor, z: Tensor, codes: FaceCodes):
    n_rays, n_samples = z.shape
    pts = origins[:, None, :] + z[..., None] * dirs[:, None, :]
    d = dirs[:, None, :].expand(-1, n_samples, -1)
    sigma, rgb = field(
        pts.reshape(-1, 3), d.reshape(-1, 3), codes.beta, codes.alpha, codes.eps
    )
    return sigma.reshape(n_rays, n_samples), rgb.reshape(n_rays, n_samples, 3)


def render_image(
    model: FaceFieldModel,
    codes: FaceCodes,
    cam: cameras.Camera,
    n_coarse: int = 64,
    n_fine: int = 64,
    jitter: bool = False,
    rng: torch.Generator | None = None,
    background: Tensor | None = None,
    coarse_only: bool = False,
    chunk: int = 8192,
    dtype: torch.dtype = torch.float32,
) -> np.ndarray:
    """Render a full (H, W, 3) frame in [0, 1]; deterministic when jitter is off."""
    pixels = cameras.frame_pixels(cam)
    origins_np, dirs_np = cameras.generate_rays(cam, pixels)
    origins = torch.from_numpy(origins_np).to(dtype)
    dirs = torch.from_numpy(dirs_np).to(dtype)
    rows = []
    key = "coarse" if coarse_only else "fine"
    with torch.no_grad():
        for start in range(0, origins.shape[0], chunk):
            out = render_rays(
                model, origins[start : start + chunk], dirs[start : start + chunk], codes,
                near=cam.near, far=cam.far, n_coarse=n_coarse, n_fine=n_fine,
                jitter=jitter, rng=rng, background=background, coarse_only=coarse_only,
            )
            rows.append(out[key])
    img = torch.cat(rows, dim=0).reshape(cam.height, cam.width, 3)
    return img.clamp(0.0, 1.0).cpu().numpy()
