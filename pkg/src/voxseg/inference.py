"""Whole-volume inference: ROI detection, tiled prediction, binarization.

Volumes larger than the training crop are processed as overlapping
windows whose sigmoid outputs are averaged uniformly; accumulation runs
in float64 so the stitched result does not depend on window visit order.
A cheap intensity-based ROI detector can restrict work to the bright
structure plus a safety margin.  Binarization compares the probability
map against the predicted per-voxel threshold map (or a scalar) and keeps
the largest 6-connected component to drop speckle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .net3d import Network, network_from_checkpoint
from .volcore import BinaryMask, RoiBox, Volume, normalize_zscore

_SIX_CONN = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True)
class TilingConfig:
    """Sliding-window geometry and binarization policy.

    ``window`` is (x, y, z) and must match the crop the network was
    trained on.  ``overlap`` is the fractional overlap between adjacent
    windows per axis.  ``threshold`` None means gate by the predicted
    threshold map; a float forces that scalar cut.  ``blend`` names the
    stitching rule; uniform averaging is the only one implemented.
    """

    window: tuple[int, int, int] = (32, 32, 32)
    overlap: float = 0.5
    threshold: float | None = None
    blend: str = "uniform"

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(w) for w in self.window))
        if len(self.window) != 3 or any(w < 1 for w in self.window):
            raise ConfigError(f"window must be three positive ints, got {self.window}")
        if not 0.0 <= self.overlap < 1.0:
            raise ConfigError(f"overlap must be in [0, 1), got {self.overlap}")
        if self.threshold is not None and not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"scalar threshold must be in (0, 1), got {self.threshold}")
        if self.blend != "uniform":
            raise ConfigError(f"unsupported blend mode {self.blend!r}")


def detect_roi(volume: Volume, percentile: float = 95.0, smooth_sigma: float = 1.0,
               margin: int = 4) -> RoiBox:
    """Bounding box of the dominant bright structure, expanded by ``margin``.

    Smooths, keeps voxels above the given intensity percentile, takes the
    largest 6-connected component and boxes it.  Falls back to the whole
    volume when thresholding selects nothing, so the result is always a
    valid box within the grid.
    """
    if not 0.0 < percentile < 100.0:
        raise ConfigError(f"percentile must be in (0, 100), got {percentile}")
    if margin < 0:
        raise ConfigError(f"margin must be >= 0, got {margin}")
    nx, ny, nz = volume.dims
    whole = RoiBox((0, 0, 0), (nx, ny, nz))

    data = volume.data.astype(np.float64)
    if smooth_sigma > 0:
        data = ndimage.gaussian_filter(data, sigma=smooth_sigma)
    bright = data > np.percentile(data, percentile)
    if not bright.any():
        return whole
    labels, n = ndimage.label(bright, structure=_SIX_CONN)
    if n == 0:
        return whole
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    keep = labels == (1 + int(np.argmax(sizes)))
    zs, ys, xs = np.nonzero(keep)
    lo = (max(0, int(xs.min()) - margin), max(0, int(ys.min()) - margin),
          max(0, int(zs.min()) - margin))
    hi = (min(nx, int(xs.max()) + 1 + margin), min(ny, int(ys.max()) + 1 + margin),
          min(nz, int(zs.max()) + 1 + margin))
    return RoiBox(lo, hi)


def _axis_starts(full: int, win: int, stride: int) -> list[int]:
    starts = list(range(0, full - win + 1, stride))
    if starts[-1] != full - win:
        starts.append(full - win)
    return starts


def sliding_window_predict(net: Network, volume: Volume,
                           tiling: TilingConfig) -> tuple[Volume, Volume]:
    """Tile the volume, run the network per window, average the overlaps.

    Returns the stitched (probability map, threshold map) at input
    geometry.  The volume is reflect-padded up to the window size when an
    axis is too small.
    """
    wz, wy, wx = tiling.window[2], tiling.window[1], tiling.window[0]
    expect = tuple(net.config.crop_dims)
    if tiling.window != expect:
        raise ConfigError(f"window {tiling.window} does not match the trained crop {expect}")
    data = volume.data
    nz, ny, nx = data.shape
    pads = (max(0, wz - nz), max(0, wy - ny), max(0, wx - nx))
    if any(pads):
        if any(p >= s for p, s in zip(pads, data.shape)):
            raise ConfigError(
                f"volume dims {volume.dims} are too small to reflect-pad to window {tiling.window}"
            )
        data = np.pad(data, [(0, p) for p in pads], mode="reflect")
    pz, py, px = data.shape

    acc_p = np.zeros(data.shape, dtype=np.float64)
    acc_t = np.zeros(data.shape, dtype=np.float64)
    count = np.zeros(data.shape, dtype=np.float64)
    strides = [max(1, int(round(w * (1.0 - tiling.overlap)))) for w in (wz, wy, wx)]
    for z0 in _axis_starts(pz, wz, strides[0]):
        for y0 in _axis_starts(py, wy, strides[1]):
            for x0 in _axis_starts(px, wx, strides[2]):
                crop = data[z0:z0 + wz, y0:y0 + wy, x0:x0 + wx]
                out = net.forward(crop, record_grad=False)
                sl = (slice(z0, z0 + wz), slice(y0, y0 + wy), slice(x0, x0 + wx))
                acc_p[sl] += out.main_prob.data[0, 0].astype(np.float64)
                acc_t[sl] += out.tm.data[0, 0].astype(np.float64)
                count[sl] += 1.0
    prob = (acc_p / count)[:nz, :ny, :nx]
    tm = (acc_t / count)[:nz, :ny, :nx]
    return Volume(prob, volume.spacing), Volume(tm, volume.spacing)


def binarize_and_filter(prob: Volume, tm: Volume | None, tiling: TilingConfig,
                        min_component_voxels: int | None = None) -> BinaryMask:
    """Threshold the probability map and drop small disconnected debris.

    Gate order: explicit scalar threshold if configured, else the
    voxelwise threshold map, else 0.5.  With ``min_component_voxels``
    None only the largest 6-connected component survives; otherwise every
    component at or above that size does.  An all-background map stays
    empty.
    """
    if tiling.threshold is not None:
        fg = prob.data > tiling.threshold
    elif tm is not None:
        if tm.data.shape != prob.data.shape:
            raise ConfigError(
                f"threshold map shape {tm.data.shape} does not match prob {prob.data.shape}"
            )
        fg = prob.data > tm.data
    else:
        fg = prob.data > 0.5
    if not fg.any():
        return BinaryMask(fg, prob.spacing)
    labels, n = ndimage.label(fg, structure=_SIX_CONN)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    if min_component_voxels is None:
        keep = labels == (1 + int(np.argmax(sizes)))
    else:
        if min_component_voxels < 1:
            raise ConfigError(f"min_component_voxels must be >= 1, got {min_component_voxels}")
        big = 1 + np.flatnonzero(sizes >= min_component_voxels)
        keep = np.isin(labels, big)
    return BinaryMask(keep, prob.spacing)


def predict_volume(checkpoints, volume: Volume,
                   tiling: TilingConfig) -> tuple[Volume, Volume]:
    """Full prediction through a refinement chain.

    ``checkpoints`` is the chain for levels 0..k ordered by level; level
    j sees the normalized volume plus the level j-1 probability map (the
    summation join), matching how the chain was trained.  Returns the
    final level's (probability map, threshold map).
    """
    chain = list(checkpoints)
    if not chain:
        raise ConfigError("predict_volume needs at least one checkpoint")
    if hasattr(chain[0], "forward"):
        nets = chain
    else:
        for lvl, c in enumerate(chain):
            if c.rrs_level != lvl:
                raise ConfigError(
                    f"checkpoint chain out of order: position {lvl} has level {c.rrs_level}"
                )
        nets = [network_from_checkpoint(c) for c in chain]

    base = normalize_zscore(volume)
    x = base
    prob = tm = None
    for net in nets:
        prob, tm = sliding_window_predict(net, x, tiling)
        x = Volume(base.data + prob.data, volume.spacing)
    return prob, tm
