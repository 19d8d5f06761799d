"""Synthetic atrium-like phantoms and spatial augmentation.

A phantom is a jittered ellipsoid body with a few tubular protrusions
(veins) attached to its surface, rendered as a bright blob over a darker
background, modulated by a smooth multiplicative bias field and corrupted
with Gaussian noise.  The paired ground truth is the clean geometry mask.
Everything is a pure function of the config, so a seed reproduces a case
bit for bit.

Augmentation applies one shared spatial transform (axis flips, small
rotations, a smooth elastic warp) to an image/mask pair: linear
interpolation for the image, nearest neighbor for the mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputError
from .volcore import BinaryMask, Volume, require_same_geometry

_SIX_CONN = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry and intensity model of one synthetic case.

    Ranges are (min, max) and inclusive; sizes are in voxels.  The body
    must fit inside the grid with >= 2 voxels of clearance.
    """

    dims: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    body_semiaxes: tuple[float, float] = (9.0, 14.0)
    vein_count: tuple[int, int] = (2, 4)
    vein_radius: tuple[float, float] = (1.5, 2.5)
    vein_length: tuple[float, float] = (6.0, 14.0)
    fg_mean: float = 1.0
    bg_mean: float = 0.2
    noise_sigma: float = 0.15
    bias_amplitude: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if len(self.dims) != 3 or any(d < 8 for d in self.dims):
            raise ConfigError(f"dims must be three ints >= 8, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ConfigError(f"spacing must be positive, got {self.spacing}")
        for name in ("body_semiaxes", "vein_count", "vein_radius", "vein_length"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is empty: {lo} > {hi}")
        if self.body_semiaxes[0] < 1:
            raise ConfigError(f"body semi-axes must be >= 1, got {self.body_semiaxes}")
        if self.vein_count[0] < 0:
            raise ConfigError(f"vein_count must be >= 0, got {self.vein_count}")
        if self.vein_radius[0] < 0.5:
            raise ConfigError(f"vein_radius must be >= 0.5, got {self.vein_radius}")
        if self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise ConfigError("noise_sigma and bias_amplitude must be >= 0")
        if self.body_semiaxes[1] > min(self.dims) / 2 - 2:
            raise ConfigError(
                f"largest semi-axis {self.body_semiaxes[1]} does not fit in dims "
                f"{self.dims} with 2 voxels of clearance"
            )


def _coord_grids(dims_xyz):
    nx, ny, nz = dims_xyz
    zz, yy, xx = np.ogrid[0:nz, 0:ny, 0:nx]
    return xx.astype(np.float64), yy.astype(np.float64), zz.astype(np.float64)


def _ellipsoid_mask(dims_xyz, center, axes) -> np.ndarray:
    xx, yy, zz = _coord_grids(dims_xyz)
    q = (((xx - center[0]) / axes[0]) ** 2
         + ((yy - center[1]) / axes[1]) ** 2
         + ((zz - center[2]) / axes[2]) ** 2)
    return q <= 1.0


def _capsule_mask(dims_xyz, p0, p1, radius) -> np.ndarray:
    """Voxels within ``radius`` of the segment p0-p1 (coordinates in (x, y, z))."""
    xx, yy, zz = _coord_grids(dims_xyz)
    v = np.asarray(p1, dtype=np.float64) - np.asarray(p0, dtype=np.float64)
    vv = float(v @ v)
    dx, dy, dz = xx - p0[0], yy - p0[1], zz - p0[2]
    if vv < 1e-12:
        t = 0.0
    else:
        t = np.clip((dx * v[0] + dy * v[1] + dz * v[2]) / vv, 0.0, 1.0)
    d2 = (dx - t * v[0]) ** 2 + (dy - t * v[1]) ** 2 + (dz - t * v[2]) ** 2
    return d2 <= radius * radius


def _smooth_bias(dims_xyz, amplitude, rng) -> np.ndarray:
    """Multiplicative field 1 + amplitude * q(x, y, z), |q| <= 1, q quadratic."""
    nx, ny, nz = dims_xyz
    if amplitude == 0.0:
        return np.ones((nz, ny, nx), dtype=np.float64)
    xx, yy, zz = _coord_grids(dims_xyz)
    u = 2.0 * xx / max(nx - 1, 1) - 1.0
    v = 2.0 * yy / max(ny - 1, 1) - 1.0
    w = 2.0 * zz / max(nz - 1, 1) - 1.0
    c = rng.uniform(-1.0, 1.0, size=9)
    q = (c[0] * u + c[1] * v + c[2] * w
         + c[3] * u * v + c[4] * u * w + c[5] * v * w
         + c[6] * u * u + c[7] * v * v + c[8] * w * w)
    peak = float(np.abs(q).max())
    if peak > 1e-12:
        q = q / peak
    return 1.0 + amplitude * q


def generate_phantom(cfg: PhantomConfig) -> tuple[Volume, BinaryMask]:
    """Render one case; returns the noisy image and its clean truth mask.

    The mask is always one 6-connected component: veins start strictly
    inside the body, and a connectivity re-draw guards the rare rounding
    case where a thin vein still detaches.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(cfg.seed)))
    dims = cfg.dims
    nx, ny, nz = dims

    axes = rng.uniform(cfg.body_semiaxes[0], cfg.body_semiaxes[1], size=3)
    center = np.array([nx / 2.0, ny / 2.0, nz / 2.0])
    slack = np.array([nx, ny, nz]) / 2.0 - axes - 2.0
    center += rng.uniform(-1.0, 1.0, size=3) * np.maximum(slack, 0.0)

    body = _ellipsoid_mask(dims, center, axes)
    for _ in range(8):
        mask = body.copy()
        n_veins = int(rng.integers(cfg.vein_count[0], cfg.vein_count[1] + 1))
        for _ in range(n_veins):
            u = rng.normal(size=3)
            u /= np.linalg.norm(u) + 1e-12
            # distance from the center to the ellipsoid surface along u
            t_surf = 1.0 / np.sqrt((u[0] / axes[0]) ** 2 + (u[1] / axes[1]) ** 2
                                   + (u[2] / axes[2]) ** 2)
            p0 = center + 0.8 * t_surf * u
            length = rng.uniform(cfg.vein_length[0], cfg.vein_length[1])
            radius = rng.uniform(cfg.vein_radius[0], cfg.vein_radius[1])
            mask |= _capsule_mask(dims, p0, p0 + length * u, radius)
        _, n_comp = ndimage.label(mask, structure=_SIX_CONN)
        if n_comp <= 1:
            break
    else:
        raise InputError(f"seed {cfg.seed}: could not draw a connected phantom")

    bias = _smooth_bias(dims, cfg.bias_amplitude, rng)
    image = (cfg.bg_mean + (cfg.fg_mean - cfg.bg_mean) * mask) * bias
    if cfg.noise_sigma > 0:
        image = image + rng.normal(0.0, cfg.noise_sigma, size=image.shape)
    return Volume(image, cfg.spacing), BinaryMask(mask, cfg.spacing)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    """One randomized spatial transform.

    ``flip_prob`` is per axis (x, y, z); ``rotation_deg`` bounds the
    rotation magnitude about each axis; the elastic warp draws nearest-
    interpolated smooth displacements with node spacing ``elastic_grid``
    voxels and standard deviation ``elastic_sigma`` voxels.  ``fill``
    pads exposed corners (None: the image median).
    """

    flip_prob: tuple[float, float, float] = (0.5, 0.5, 0.5)
    rotation_deg: float = 15.0
    elastic_grid: float = 8.0
    elastic_sigma: float = 2.0
    fill: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "flip_prob", tuple(float(p) for p in self.flip_prob))
        if any(not 0.0 <= p <= 1.0 for p in self.flip_prob):
            raise ConfigError(f"flip probabilities must be in [0, 1], got {self.flip_prob}")
        if self.rotation_deg < 0:
            raise ConfigError(f"rotation_deg must be >= 0, got {self.rotation_deg}")
        if self.elastic_grid < 1:
            raise ConfigError(f"elastic_grid must be >= 1 voxel, got {self.elastic_grid}")
        if self.elastic_sigma < 0:
            raise ConfigError(f"elastic_sigma must be >= 0, got {self.elastic_sigma}")


def _rotation_matrix(angles_rad) -> np.ndarray:
    """Rotation about x, then y, then z, acting on (x, y, z) column vectors."""
    ax, ay, az = angles_rad
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def augment(image: Volume, mask: BinaryMask, cfg: AugmentConfig) -> tuple[Volume, BinaryMask]:
    """Apply one seeded random transform to an image/mask pair.

    Flips are exact array reversals; with rotation and elastic disabled
    the null transform returns bit-identical data, which keeps
    augmentation safe to leave in fast ablation paths.
    """
    require_same_geometry(image, mask)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(cfg.seed)))
    img = image.data
    msk = mask.data
    # numpy axes are (z, y, x); flip_prob is (x, y, z)
    for xyz_axis, arr_axis in ((0, 2), (1, 1), (2, 0)):
        if rng.random() < cfg.flip_prob[xyz_axis]:
            img = np.flip(img, axis=arr_axis)
            msk = np.flip(msk, axis=arr_axis)

    if cfg.rotation_deg == 0.0 and cfg.elastic_sigma == 0.0:
        return Volume(img, image.spacing), BinaryMask(msk, mask.spacing)

    nz, ny, nx = img.shape
    zz, yy, xx = np.meshgrid(np.arange(nz, dtype=np.float64),
                             np.arange(ny, dtype=np.float64),
                             np.arange(nx, dtype=np.float64), indexing="ij")
    cx, cy, cz = (nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0

    if cfg.rotation_deg > 0:
        angles = np.deg2rad(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg, size=3))
        rot = _rotation_matrix(angles)
        # sample source = R^T (p - c) + c (inverse mapping)
        dx, dy, dz = xx - cx, yy - cy, zz - cz
        sx = rot[0, 0] * dx + rot[1, 0] * dy + rot[2, 0] * dz + cx
        sy = rot[0, 1] * dx + rot[1, 1] * dy + rot[2, 1] * dz + cy
        sz = rot[0, 2] * dx + rot[1, 2] * dy + rot[2, 2] * dz + cz
    else:
        sx, sy, sz = xx, yy, zz

    if cfg.elastic_sigma > 0:
        g = cfg.elastic_grid
        coarse = tuple(int(np.ceil(n / g)) + 1 for n in (nz, ny, nx))
        disp = rng.normal(0.0, cfg.elastic_sigma, size=(3,) + coarse)
        fine_coords = [zz / g, yy / g, xx / g]
        sz = sz + ndimage.map_coordinates(disp[0], fine_coords, order=3, mode="nearest")
        sy = sy + ndimage.map_coordinates(disp[1], fine_coords, order=3, mode="nearest")
        sx = sx + ndimage.map_coordinates(disp[2], fine_coords, order=3, mode="nearest")

    fill = float(np.median(img)) if cfg.fill is None else float(cfg.fill)
    out_img = ndimage.map_coordinates(img.astype(np.float64), [sz, sy, sx],
                                      order=1, mode="constant", cval=fill)
    out_msk = ndimage.map_coordinates(msk.astype(np.uint8), [sz, sy, sx],
                                      order=0, mode="constant", cval=0)
    return Volume(out_img, image.spacing), BinaryMask(out_msk.astype(bool), mask.spacing)
