"""Procedural multi-view face corpus.

Subjects are analytic signed-distance heads: a skull ellipsoid blended with a
chin, nose, eyes, brows, lips and ears, all driven by a per-subject shape
factor vector through a fixed linear basis.  Appearance comes from a painted
UV atlas (lat-long mapping about the head center) that is independent of the
geometry; expressions are a small table of fixed displacement fields shared by
all subjects.  Ground-truth views are sphere-traced with flat diffuse shading
under a fixed front light, so the corpus is fully deterministic given a seed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import cameras
from .errors import InvalidInputError
from .sampling import N_LANDMARKS

SCHEMA_VERSION = 1

# Canonical geometry parameters (mean head) and their shape-driven deviations.
_GEO_NAMES = (
    "head_rx", "head_ry", "head_rz", "nose_w", "nose_h", "nose_l", "nose_y",
    "eye_dx", "eye_y", "eye_r", "mouth_w", "mouth_y", "lip_r", "chin",
)
_GEO_BASE = np.array([0.32, 0.40, 0.34, 0.055, 0.10, 0.10, -0.01,
                      0.125, 0.09, 0.048, 0.095, -0.16, 0.018, 0.0])
_GEO_SPAN = np.array([0.045, 0.05, 0.04, 0.018, 0.03, 0.035, 0.025,
                      0.018, 0.025, 0.009, 0.022, 0.025, 0.004, 0.03])
_GEO_LO = _GEO_BASE - 1.6 * _GEO_SPAN
_GEO_HI = _GEO_BASE + 1.6 * _GEO_SPAN

_LIGHT = np.array([0.0, 0.35, 1.0])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)
_AMBIENT, _DIFFUSE = 0.35, 0.65

_TRACE_STEPS = 96
_TRACE_TOL = 1e-4


@dataclass(frozen=True)
class RigSpec:
    """Orbit camera grid: evenly spaced pitch x yaw look-at-origin views."""

    n_pitch: int = 6
    n_yaw: int = 20
    pitch_range: tuple[float, float] = (-30.0, 45.0)
    yaw_range: tuple[float, float] = (-90.0, 90.0)
    radius: float = 1.5
    fov_deg: float = 45.0
    near: float = 0.5
    far: float = 2.5

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RigSpec":
        d = dict(d)
        d["pitch_range"] = tuple(d["pitch_range"])
        d["yaw_range"] = tuple(d["yaw_range"])
        return cls(**d)


def camera_rig(rig: RigSpec = RigSpec(), width: int = 256, height: int = 256) -> list[cameras.Camera]:
    """The full pitch x yaw camera grid (120 views with the default rig)."""
    if rig.n_pitch < 1 or rig.n_yaw < 1:
        raise InvalidInputError("rig needs at least one pitch and one yaw")
    pitches = np.linspace(rig.pitch_range[0], rig.pitch_range[1], rig.n_pitch)
    yaws = np.linspace(rig.yaw_range[0], rig.yaw_range[1], rig.n_yaw)
    out = []
    for pitch in pitches:
        for yaw in yaws:
            cam = cameras.orbit_camera(
                yaw, pitch, rig.radius, width=width, height=height,
                fov_deg=rig.fov_deg, near=rig.near, far=rig.far,
            )
            # center pixel grid about (W-1)/2 so mirrored yaws produce mirrored frames
            cam.cx = (width - 1) / 2.0
            cam.cy = (height - 1) / 2.0
            out.append(cam)
    return out


@dataclass(frozen=True)
class ExpressionParams:
    """One displacement field: label 0 is the neutral zero field."""

    jaw_open: float = 0.0
    smile: float = 0.0
    brow_raise: float = 0.0
    eye_open: float = 1.0


@dataclass
class SubjectSpec:
    """Ground-truth generative parameters of one synthetic subject."""

    subject_id: str
    shape_factors: np.ndarray        # (d_shape,), bounded in [-2, 2]
    texture_map: np.ndarray          # (S, S, 3) float32 in [0, 1]
    landmarks3d: np.ndarray          # (64, 3) neutral-expression anchors
    texture_seed: int = 0


class GeoParams(dict):
    """Named geometry parameters derived from a shape factor vector."""

    __getattr__ = dict.__getitem__


def _shape_basis(d_shape: int) -> np.ndarray:
    """Fixed (n_geo, d_shape) mixing matrix; every factor drives the geometry."""
    rng = np.random.default_rng(np.random.SeedSequence([20240214, d_shape]))
    basis = rng.normal(size=(len(_GEO_NAMES), d_shape))
    basis /= np.linalg.norm(basis, axis=1, keepdims=True)
    return basis * _GEO_SPAN[:, None]


def geo_from_factors(factors: np.ndarray) -> GeoParams:
    factors = np.asarray(factors, dtype=np.float64)
    raw = _GEO_BASE + _shape_basis(len(factors)) @ (factors / 2.0)
    vals = np.clip(raw, _GEO_LO, _GEO_HI)
    return GeoParams(zip(_GEO_NAMES, vals))


# ---------------------------------------------------------------------------
# signed-distance geometry


def _ellipsoid(p, center, semi):
    q = (p - center) / semi
    k0 = np.linalg.norm(q, axis=-1)
    k1 = np.linalg.norm(q / semi, axis=-1)
    return np.where(k1 > 1e-12, k0 * (k0 - 1.0) / np.maximum(k1, 1e-12), -np.min(semi))


def _sphere(p, center, r):
    return np.linalg.norm(p - center, axis=-1) - r


def _capsule(p, a, b, r):
    pa = p - a
    ba = np.asarray(b, dtype=np.float64) - a
    h = np.clip((pa @ ba) / (ba @ ba), 0.0, 1.0)
    return np.linalg.norm(pa - h[..., None] * ba, axis=-1) - r


def _smin(d1, d2, k):
    h = np.clip(0.5 + 0.5 * (d2 - d1) / k, 0.0, 1.0)
    return d2 + (d1 - d2) * h - k * h * (1.0 - h)


def _front_z(geo, x, y):
    """z of the skull surface at (x, y); 0 where the ellipse has no front point."""
    t = 1.0 - (x / geo["head_rx"]) ** 2 - (y / geo["head_ry"]) ** 2
    return geo["head_rz"] * np.sqrt(np.clip(t, 0.0, None))


def _lip_anchors(geo, expr: ExpressionParams):
    corner_y = geo["mouth_y"] + 0.022 * expr.smile
    gap = 0.012
    top_y = geo["mouth_y"] + gap
    bot_y = geo["mouth_y"] - gap - 0.035 * expr.jaw_open
    zc = _front_z(geo, 0.0, geo["mouth_y"]) - 0.004
    zcorner = _front_z(geo, geo["mouth_w"], corner_y) - 0.004
    return corner_y, top_y, bot_y, zc, zcorner


def head_sdf(points: np.ndarray, geo: GeoParams, expr: ExpressionParams) -> np.ndarray:
    """Signed distance of the expression-displaced head at (N, 3) points."""
    p = np.asarray(points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    pm = np.stack([np.abs(x), y, z], axis=-1)  # bilateral features live on +x

    d = _ellipsoid(p, np.zeros(3), np.array([geo["head_rx"], geo["head_ry"], geo["head_rz"]]))
    chin_c = np.array([0.0, -geo["head_ry"] * 0.82 - 0.02 * expr.jaw_open, geo["head_rz"] * 0.28 + geo["chin"]])
    d = _smin(d, _ellipsoid(p, chin_c, np.array([0.16, 0.12, 0.15])), 0.07)

    nose_c = np.array([0.0, geo["nose_y"], _front_z(geo, 0.0, geo["nose_y"]) + geo["nose_l"] * 0.15])
    d = _smin(d, _ellipsoid(p, nose_c, np.array([geo["nose_w"], geo["nose_h"], geo["nose_l"]])), 0.035)

    eye_c = np.array([geo["eye_dx"], geo["eye_y"], _front_z(geo, geo["eye_dx"], geo["eye_y"]) - 0.014])
    eye_semi = np.array([geo["eye_r"], geo["eye_r"] * (0.5 + 0.5 * expr.eye_open), geo["eye_r"] * 0.8])
    d = _smin(d, _ellipsoid(pm, eye_c, eye_semi), 0.02)

    brow_y = geo["eye_y"] + 0.07 + 0.025 * expr.brow_raise
    brow_a = np.array([geo["eye_dx"] - 0.05, brow_y - 0.008, _front_z(geo, geo["eye_dx"] - 0.05, brow_y)])
    brow_b = np.array([geo["eye_dx"] + 0.05, brow_y, _front_z(geo, geo["eye_dx"] + 0.05, brow_y)])
    d = _smin(d, _capsule(pm, brow_a, brow_b, 0.014), 0.02)

    corner_y, top_y, bot_y, zc, zcorner = _lip_anchors(geo, expr)
    corner = np.array([geo["mouth_w"], corner_y, zcorner])
    top_c = np.array([0.0, top_y, zc])
    bot_c = np.array([0.0, bot_y, zc])
    d = _smin(d, _capsule(pm, corner, top_c, geo["lip_r"]), 0.02)
    d = _smin(d, _capsule(pm, corner, bot_c, geo["lip_r"]), 0.02)

    ear_c = np.array([geo["head_rx"] * 0.98, 0.02, 0.02])
    d = _smin(d, _ellipsoid(pm, ear_c, np.array([0.035, 0.055, 0.045])), 0.02)
    return d


def landmarks_for(geo: GeoParams, expr: ExpressionParams) -> np.ndarray:
    """64 keypoints (brows 12, eyes 24, nose 8, mouth 20) on the displaced head."""
    pts = []
    brow_y = geo["eye_y"] + 0.07 + 0.025 * expr.brow_raise
    for side in (-1.0, 1.0):
        for t in np.linspace(-1.0, 1.0, 6):
            bx = side * (geo["eye_dx"] + t * 0.05)
            by = brow_y + 0.004 * t * side
            pts.append([bx, by, _front_z(geo, bx, by) + 0.012])
    eye_ry = geo["eye_r"] * (0.5 + 0.5 * expr.eye_open)
    for side in (-1.0, 1.0):
        cz = _front_z(geo, geo["eye_dx"], geo["eye_y"]) - 0.014 + geo["eye_r"] * 0.75
        for ang in np.linspace(0.0, 2 * math.pi, 12, endpoint=False):
            pts.append([
                side * geo["eye_dx"] + math.cos(ang) * geo["eye_r"] * 0.8,
                geo["eye_y"] + math.sin(ang) * eye_ry * 0.8,
                cz,
            ])
    nose_tip_z = _front_z(geo, 0.0, geo["nose_y"]) + geo["nose_l"] * 0.15 + geo["nose_l"]
    bridge_top = geo["nose_y"] + geo["nose_h"] * 0.85
    for frac in (0.85, 0.45):
        ny = geo["nose_y"] + geo["nose_h"] * frac
        pts.append([0.0, ny, _front_z(geo, 0.0, ny) + geo["nose_l"] * 0.35 * (1 - frac)])
    pts.append([0.0, geo["nose_y"], nose_tip_z])
    pts.append([0.0, geo["nose_y"] - geo["nose_h"] * 0.7, _front_z(geo, 0.0, geo["nose_y"]) + 0.01])
    for side in (-1.0, 1.0):
        pts.append([side * geo["nose_w"] * 0.95, geo["nose_y"] - geo["nose_h"] * 0.25,
                    _front_z(geo, geo["nose_w"], geo["nose_y"]) + 0.02])
        pts.append([side * geo["nose_w"] * 0.55, geo["nose_y"] - geo["nose_h"] * 0.55,
                    _front_z(geo, geo["nose_w"], geo["nose_y"]) + 0.015])
    corner_y, top_y, bot_y, zc, _ = _lip_anchors(geo, expr)
    mouth_cy = 0.5 * (top_y + bot_y)
    outer_ry = (top_y - bot_y) * 0.5 + geo["lip_r"] * 1.3
    for ang in np.linspace(0.0, 2 * math.pi, 12, endpoint=False):
        mx = math.cos(ang) * geo["mouth_w"]
        my = mouth_cy + math.sin(ang) * outer_ry + 0.022 * expr.smile * (abs(math.cos(ang)) ** 2)
        pts.append([mx, my, _front_z(geo, mx, my) + geo["lip_r"]])
    inner_ry = max((top_y - bot_y) * 0.5 - geo["lip_r"] * 0.3, 0.004)
    for ang in np.linspace(0.0, 2 * math.pi, 8, endpoint=False):
        mx = math.cos(ang) * geo["mouth_w"] * 0.6
        my = mouth_cy + math.sin(ang) * inner_ry
        pts.append([mx, my, _front_z(geo, mx, my) + geo["lip_r"]])
    out = np.array(pts)
    assert out.shape == (N_LANDMARKS, 3)
    return out


# ---------------------------------------------------------------------------
# UV atlas


def uv_of_points(points: np.ndarray) -> np.ndarray:
    """Lat-long UV about the origin: u wraps with azimuth, v runs top to bottom."""
    p = np.asarray(points, dtype=np.float64)
    r = np.linalg.norm(p, axis=-1)
    u = 0.5 + np.arctan2(p[..., 0], p[..., 2]) / (2 * math.pi)
    v = 0.5 - np.arcsin(np.clip(p[..., 1] / np.maximum(r, 1e-12), -1.0, 1.0)) / math.pi
    return np.stack([u, v], axis=-1)


def bilinear_sample(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample an (S, S, 3) texture at (N, 2) UVs; u wraps, v clamps."""
    size = tex.shape[0]
    fu = uv[..., 0] * size - 0.5
    fv = np.clip(uv[..., 1] * size - 0.5, 0.0, size - 1.0)
    u0 = np.floor(fu).astype(np.int64)
    v0 = np.floor(fv).astype(np.int64)
    du = (fu - u0)[..., None]
    dv = (fv - v0)[..., None]
    u0m, u1m = u0 % size, (u0 + 1) % size
    v0m, v1m = np.clip(v0, 0, size - 1), np.clip(v0 + 1, 0, size - 1)
    top = tex[v0m, u0m] * (1 - du) + tex[v0m, u1m] * du
    bot = tex[v1m, u0m] * (1 - du) + tex[v1m, u1m] * du
    return top * (1 - dv) + bot * dv


def _soft_disc(dist, radius, soft=0.25):
    return np.clip((radius - dist) / (radius * soft + 1e-9), 0.0, 1.0)


@dataclass(frozen=True)
class Palette:
    skin: tuple[float, float, float]
    lips: tuple[float, float, float]
    iris: tuple[float, float, float]
    brows: tuple[float, float, float]
    beard: float          # 0 = clean shaven
    blush: float


def sample_palette(rng: np.random.Generator) -> Palette:
    base = np.array([0.78, 0.60, 0.50]) + rng.uniform(-0.18, 0.14, 3)
    tone = rng.uniform(0.55, 1.15)
    skin = np.clip(base * tone, 0.12, 0.95)
    lips = np.clip(skin * np.array([1.12, 0.62, 0.62]) + rng.uniform(-0.05, 0.05, 3), 0.05, 0.95)
    iris_choices = np.array([[0.25, 0.18, 0.10], [0.12, 0.25, 0.38], [0.12, 0.32, 0.16], [0.20, 0.20, 0.22]])
    iris = iris_choices[rng.integers(0, len(iris_choices))] + rng.uniform(-0.03, 0.03, 3)
    brows = np.clip(skin * rng.uniform(0.25, 0.5), 0.02, 0.6)
    beard = float(rng.uniform(0.35, 0.75)) if rng.random() < 0.4 else 0.0
    blush = float(rng.uniform(0.0, 0.25))
    return Palette(tuple(skin), tuple(lips), tuple(np.clip(iris, 0.02, 0.9)), tuple(brows), beard, blush)


def paint_texture(palette: Palette, size: int, rng: np.random.Generator) -> np.ndarray:
    """Paint the UV atlas against the mean head so appearance stays geometry-free."""
    geo = GeoParams(zip(_GEO_NAMES, _GEO_BASE))
    # texture rows follow v, columns follow u
    uu, vv = np.meshgrid((np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size)
    tex = np.empty((size, size, 3))
    tex[...] = palette.skin

    # low-frequency skin mottling
    coarse = rng.normal(0.0, 1.0, (9, 9))
    yi = np.linspace(0, 8, size)
    xi = np.linspace(0, 8, size)
    y0 = np.clip(yi.astype(int), 0, 7)
    x0 = np.clip(xi.astype(int), 0, 7)
    wy = (yi - y0)[:, None]
    wx = (xi - x0)[None, :]
    noise = (coarse[y0][:, x0] * (1 - wy) * (1 - wx) + coarse[y0 + 1][:, x0] * wy * (1 - wx)
             + coarse[y0][:, x0 + 1] * (1 - wy) * wx + coarse[y0 + 1][:, x0 + 1] * wy * wx)
    tex += 0.02 * noise[..., None]

    def wrap_du(u_anchor):
        du = uu - u_anchor
        return (du + 0.5) % 1.0 - 0.5

    def anchor_uv(x, y, z):
        return uv_of_points(np.array([x, y, z]))

    # cheeks
    for side in (-1.0, 1.0):
        cx = side * geo["eye_dx"] * 1.1
        cy = geo["eye_y"] - 0.14
        au, av = anchor_uv(cx, cy, _front_z(geo, cx, cy))
        dist = np.hypot(wrap_du(au) * 2.2, vv - av)
        m = _soft_disc(dist, 0.05, soft=1.0) * palette.blush
        tex = tex * (1 - m[..., None] * 0.4) + np.array([0.75, 0.30, 0.30]) * (m[..., None] * 0.4)

    # beard zone below the mouth and along the jaw
    if palette.beard > 0:
        au, av = anchor_uv(0.0, geo["mouth_y"], _front_z(geo, 0.0, geo["mouth_y"]))
        m = np.clip((vv - (av - 0.015)) / 0.02, 0, 1) * np.clip((0.22 - np.abs(wrap_du(0.5))) / 0.03, 0, 1)
        m *= np.clip((av + 0.16 - vv) / 0.02, 0, 1)
        dark = np.clip(np.array(palette.skin) * 0.45, 0.02, 1.0)
        w = (m * palette.beard)[..., None]
        tex = tex * (1 - w) + dark * w

    # lips
    au, av = anchor_uv(0.0, geo["mouth_y"], _front_z(geo, 0.0, geo["mouth_y"]))
    lip_d = np.hypot(wrap_du(au) / 0.055, (vv - av) / 0.022)
    m = _soft_disc(lip_d, 1.0, soft=0.35)[..., None]
    tex = tex * (1 - m) + np.array(palette.lips) * m

    # brows
    for side in (-1.0, 1.0):
        bx = side * geo["eye_dx"]
        by = geo["eye_y"] + 0.07
        au, av = anchor_uv(bx, by, _front_z(geo, bx, by))
        m = (np.clip((0.030 - np.abs(wrap_du(au))) / 0.008, 0, 1)
             * np.clip((0.010 - np.abs(vv - av)) / 0.005, 0, 1))[..., None]
        tex = tex * (1 - m) + np.array(palette.brows) * m

    # eyes: sclera, iris, pupil
    for side in (-1.0, 1.0):
        ex = side * geo["eye_dx"]
        ez = _front_z(geo, ex, geo["eye_y"])
        au, av = anchor_uv(ex, geo["eye_y"], ez)
        dist = np.hypot(wrap_du(au), vv - av)
        m = _soft_disc(dist, 0.028, soft=0.2)[..., None]
        tex = tex * (1 - m) + np.array([0.93, 0.93, 0.92]) * m
        m = _soft_disc(dist, 0.014, soft=0.2)[..., None]
        tex = tex * (1 - m) + np.array(palette.iris) * m
        m = _soft_disc(dist, 0.006, soft=0.3)[..., None]
        tex = tex * (1 - m) + np.array([0.03, 0.03, 0.03]) * m

    return np.clip(tex, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# generator


class FaceGenerator:
    """Deterministic factory for subjects, expressions, and ground-truth views."""

    def __init__(self, d_shape: int = 50, texture_size: int = 256, n_expressions: int = 20, seed: int = 0):
        self.d_shape = d_shape
        self.texture_size = texture_size
        self.n_expressions = n_expressions
        self.seed = seed
        self.expressions = self._expression_table()

    def _expression_table(self) -> list[ExpressionParams]:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 977]))
        table = [ExpressionParams()]  # label 0: neutral
        for _ in range(self.n_expressions - 1):
            table.append(ExpressionParams(
                jaw_open=float(rng.uniform(0.0, 1.0)),
                smile=float(rng.uniform(-0.7, 1.0)),
                brow_raise=float(rng.uniform(-0.5, 1.0)),
                eye_open=float(rng.uniform(0.45, 1.0)),
            ))
        return table

    def expression(self, label: int) -> ExpressionParams:
        if not 0 <= label < self.n_expressions:
            raise InvalidInputError(f"expression label {label} outside [0, {self.n_expressions})")
        return self.expressions[label]

    def make_subject(self, subject_id: int) -> SubjectSpec:
        shape_rng = np.random.default_rng(np.random.SeedSequence([self.seed, 11, subject_id]))
        factors = shape_rng.uniform(-1.6, 1.6, self.d_shape)
        texture_seed = int(np.random.SeedSequence([self.seed, 23, subject_id]).generate_state(1)[0])
        return self.build_subject(subject_id, factors, texture_seed)

    def build_subject(self, subject_id: int, shape_factors: np.ndarray, texture_seed: int) -> SubjectSpec:
        tex_rng = np.random.default_rng(np.random.SeedSequence([texture_seed]))
        palette = sample_palette(tex_rng)
        texture = paint_texture(palette, self.texture_size, tex_rng)
        geo = geo_from_factors(shape_factors)
        return SubjectSpec(
            subject_id=f"s{subject_id:03d}",
            shape_factors=np.asarray(shape_factors, dtype=np.float64),
            texture_map=texture,
            landmarks3d=landmarks_for(geo, ExpressionParams()),
            texture_seed=texture_seed,
        )

    def landmarks(self, spec: SubjectSpec, label: int) -> np.ndarray:
        return landmarks_for(geo_from_factors(spec.shape_factors), self.expression(label))

    def render_ground_truth(
        self, spec: SubjectSpec, label: int, cam: cameras.Camera
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sphere-traced (image, mask); the background is removed (black)."""
        geo = geo_from_factors(spec.shape_factors)
        expr = self.expression(label)
        pixels = cameras.frame_pixels(cam)
        origins, dirs = cameras.generate_rays(cam, pixels)

        t = np.full(len(origins), cam.near)
        hit = np.zeros(len(origins), dtype=bool)
        active = np.ones(len(origins), dtype=bool)
        for _ in range(_TRACE_STEPS):
            if not active.any():
                break
            p = origins[active] + t[active, None] * dirs[active]
            d = head_sdf(p, geo, expr)
            newly = d < _TRACE_TOL
            idx = np.flatnonzero(active)
            hit[idx[newly]] = True
            active[idx[newly]] = False
            adv = idx[~newly]
            t[adv] += np.maximum(d[~newly] * 0.9, _TRACE_TOL)
            overshoot = t[adv] > cam.far
            active[adv[overshoot]] = False

        img = np.zeros((len(origins), 3))
        if hit.any():
            phit = origins[hit] + t[hit, None] * dirs[hit]
            eps = 1e-4
            grad = np.empty_like(phit)
            for axis in range(3):
                offset = np.zeros(3)
                offset[axis] = eps
                grad[:, axis] = head_sdf(phit + offset, geo, expr) - head_sdf(phit - offset, geo, expr)
            normals = grad / np.maximum(np.linalg.norm(grad, axis=-1, keepdims=True), 1e-12)
            albedo = bilinear_sample(spec.texture_map.astype(np.float64), uv_of_points(phit))
            shade = _AMBIENT + _DIFFUSE * np.clip(normals @ _LIGHT, 0.0, None)
            img[hit] = np.clip(albedo * shade[:, None], 0.0, 1.0)
        h, w = cam.height, cam.width
        return img.reshape(h, w, 3).astype(np.float32), hit.reshape(h, w)


# ---------------------------------------------------------------------------
# on-disk dataset


@dataclass
class ImageEntry:
    subject: int      # index into manifest subject list
    expression: int
    view: int         # index into the rig camera list
    image: str
    mask: str


@dataclass
class DatasetManifest:
    root: Path
    seed: int
    d_shape: int
    n_expressions: int
    image_size: int
    texture_size: int
    rig: RigSpec
    subject_ids: list[str]
    shape_factors: np.ndarray       # (n_subjects, d_shape)
    texture_seeds: list[int]
    entries: list[ImageEntry]
    views_used: list[int]
    holdout_views: list[int]
    train_subjects: list[int]
    test_subjects: list[int]


def _entry_name(subject_id: str, label: int, view: int) -> str:
    return f"{subject_id}_e{label:02d}_v{view:03d}"


def save_png(path: Path, array: np.ndarray):
    if array.dtype == bool:
        Image.fromarray((array * 255).astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray((np.clip(array, 0, 1) * 255.0).round().astype(np.uint8)).save(path)


def load_image(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("L")) > 127


def build_dataset(
    out_dir,
    n_subjects: int = 16,
    n_expressions: int = 4,
    views_per_pair: int = 30,
    image_size: int = 128,
    texture_size: int = 256,
    d_shape: int = 50,
    seed: int = 0,
    rig: RigSpec = RigSpec(),
    train_fraction: float = 1.0,
    holdout_views: tuple[int, ...] = (),
) -> DatasetManifest:
    """Generate and write the corpus; byte-reproducible for a fixed seed."""
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    gen = FaceGenerator(d_shape=d_shape, texture_size=texture_size, n_expressions=n_expressions, seed=seed)
    rig_cams = camera_rig(rig, width=image_size, height=image_size)
    if views_per_pair > len(rig_cams):
        raise InvalidInputError(f"asked for {views_per_pair} views from a {len(rig_cams)}-camera rig")
    views_used = sorted(set(np.linspace(0, len(rig_cams) - 1, views_per_pair).round().astype(int).tolist()))

    subjects, entries = [], []
    for i in range(n_subjects):
        spec = gen.make_subject(i)
        subjects.append(spec)
        sdir = root / "subjects" / spec.subject_id
        sdir.mkdir(parents=True, exist_ok=True)
        save_png(sdir / "texture.png", spec.texture_map)
        lm = {"schema": SCHEMA_VERSION,
              "expressions": [[[float(v) for v in row] for row in gen.landmarks(spec, e)]
                              for e in range(n_expressions)]}
        (sdir / "landmarks.json").write_text(json.dumps(lm, indent=2, sort_keys=True) + "\n")
        for label in range(n_expressions):
            for view in views_used:
                img, mask = gen.render_ground_truth(spec, label, rig_cams[view])
                name = _entry_name(spec.subject_id, label, view)
                save_png(root / "images" / f"{name}.png", img)
                save_png(root / "images" / f"{name}_mask.png", mask)
                entries.append(ImageEntry(i, label, view,
                                          f"images/{name}.png", f"images/{name}_mask.png"))

    split_rng = np.random.default_rng(np.random.SeedSequence([seed, 555]))
    order = split_rng.permutation(n_subjects).tolist()
    n_train = int(round(train_fraction * n_subjects))
    train_subjects = sorted(order[:n_train])
    test_subjects = sorted(order[n_train:])

    manifest = {
        "schema": SCHEMA_VERSION,
        "seed": seed,
        "d_shape": d_shape,
        "n_expressions": n_expressions,
        "image_size": image_size,
        "texture_size": texture_size,
        "rig": rig.to_dict(),
        "cameras": [cam.to_dict() for cam in rig_cams],
        "subjects": [
            {"id": s.subject_id, "index": i,
             "shape_factors": [float(v) for v in s.shape_factors],
             "texture_seed": s.texture_seed}
            for i, s in enumerate(subjects)
        ],
        "views_used": views_used,
        "holdout_views": list(holdout_views),
        "split": {"train": train_subjects, "test": test_subjects},
        "images": [dataclasses.asdict(e) for e in entries],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return load_dataset(root).manifest


class FaceDataset:
    """Loader over a built corpus; images decode lazily and cache in memory."""

    def __init__(self, root):
        root = Path(root)
        file = root / "manifest.json"
        if not file.exists():
            raise InvalidInputError(f"no dataset manifest under {root}")
        raw = json.loads(file.read_text())
        if raw.get("schema") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported dataset schema {raw.get('schema')!r}")
        entries = [ImageEntry(**e) for e in raw["images"]]
        for e in entries:
            if not (root / e.image).exists() or not (root / e.mask).exists():
                raise InvalidInputError(f"manifest references missing image {e.image}")
        self.manifest = DatasetManifest(
            root=root,
            seed=raw["seed"],
            d_shape=raw["d_shape"],
            n_expressions=raw["n_expressions"],
            image_size=raw["image_size"],
            texture_size=raw["texture_size"],
            rig=RigSpec.from_dict(raw["rig"]),
            subject_ids=[s["id"] for s in raw["subjects"]],
            shape_factors=np.array([s["shape_factors"] for s in raw["subjects"]]),
            texture_seeds=[s["texture_seed"] for s in raw["subjects"]],
            entries=entries,
            views_used=raw["views_used"],
            holdout_views=raw["holdout_views"],
            train_subjects=raw["split"]["train"],
            test_subjects=raw["split"]["test"],
        )
        self.cameras = [cameras.Camera.from_dict(d) for d in raw["cameras"]]
        self._landmarks = [
            np.array(json.loads((root / "subjects" / sid / "landmarks.json").read_text())["expressions"])
            for sid in self.manifest.subject_ids
        ]
        self._images: dict[str, np.ndarray] = {}

    @property
    def n_subjects(self) -> int:
        return len(self.manifest.subject_ids)

    def texture(self, subject: int) -> np.ndarray:
        key = f"tex:{subject}"
        if key not in self._images:
            sid = self.manifest.subject_ids[subject]
            self._images[key] = load_image(self.manifest.root / "subjects" / sid / "texture.png")
        return self._images[key]

    def landmarks3d(self, subject: int, expression: int) -> np.ndarray:
        return self._landmarks[subject][expression]

    def image(self, entry: ImageEntry) -> np.ndarray:
        if entry.image not in self._images:
            self._images[entry.image] = load_image(self.manifest.root / entry.image)
        return self._images[entry.image]

    def mask(self, entry: ImageEntry) -> np.ndarray:
        if entry.mask not in self._images:
            self._images[entry.mask] = load_mask(self.manifest.root / entry.mask)
        return self._images[entry.mask]

    def camera(self, entry: ImageEntry) -> cameras.Camera:
        return self.cameras[entry.view]

    def train_entries(self) -> list[ImageEntry]:
        hold = set(self.manifest.holdout_views)
        train = set(self.manifest.train_subjects)
        return [e for e in self.manifest.entries if e.subject in train and e.view not in hold]

    def holdout_entries(self) -> list[ImageEntry]:
        hold = set(self.manifest.holdout_views)
        train = set(self.manifest.train_subjects)
        return [e for e in self.manifest.entries if e.subject in train and e.view in hold]


def load_dataset(root) -> FaceDataset:
    return FaceDataset(root)
