"""Tour of the volume containers and the on-disk format.

Covers the three core value types (Volume, BinaryMask, RoiBox), z-score
normalization, the text-header + raw-payload file pair, and the
crop/paste round trip used by ROI-restricted inference.
"""

import os
import tempfile

import numpy as np

from voxseg import (BinaryMask, RoiBox, Volume, crop_with_margin, load,
                    normalize_zscore, paste_back, save)

# ----------------------------------------------------------------------
# Containers.  Arrays are stored (z, y, x); dims / spacing are reported
# (x, y, z).  Data is frozen (read-only) so geometry cannot drift.
# ----------------------------------------------------------------------
rng = np.random.default_rng(7)
vol = Volume(rng.normal(0.3, 0.1, size=(20, 16, 12)).astype(np.float32),
             spacing=(0.8, 1.0, 1.25))
print("volume dims (x,y,z):", vol.dims)
print("array shape (z,y,x):", vol.data.shape)
print("spacing mm:         ", vol.spacing)

mask = BinaryMask(vol.data > 0.35, spacing=vol.spacing)
print("mask foreground voxels:", mask.voxel_count)

# ----------------------------------------------------------------------
# Normalization: zero mean, unit variance, computed over the whole grid.
# ----------------------------------------------------------------------
norm = normalize_zscore(vol)
print(f"normalized: mean={norm.data.mean():+.2e} std={norm.data.std():.4f}")

# ----------------------------------------------------------------------
# Disk round trip.  Each grid is a pair of files: <stem>.hdr (readable
# text header) and <stem>.raw (raw little-endian payload).
# ----------------------------------------------------------------------
with tempfile.TemporaryDirectory() as d:
    stem = os.path.join(d, "case000_img")
    save(stem, vol)
    print("\nheader contents:")
    with open(stem + ".hdr") as fh:
        for line in fh:
            print("   ", line.rstrip())
    back = load(stem)
    assert isinstance(back, Volume)
    assert np.array_equal(back.data, vol.data), "payload must survive bit-exactly"
    assert back.spacing == vol.spacing
    print("round trip: bit-exact")

    save(os.path.join(d, "case000_msk"), mask)
    mback = load(os.path.join(d, "case000_msk"))
    assert isinstance(mback, BinaryMask)
    print("mask round trip: bit-exact,", mback.voxel_count, "voxels")

# ----------------------------------------------------------------------
# ROI crop / paste.  Boxes are half-open [lo, hi) in (x, y, z); the
# margin is clamped at the grid edge.  paste_back is the exact inverse
# of crop_with_margin on the same box.
# ----------------------------------------------------------------------
box = RoiBox(lo=(2, 3, 4), hi=(10, 12, 16))
print("\nbox", box.lo, "->", box.hi, "shape", box.shape_xyz)

crop, clamped = crop_with_margin(vol, box, margin=2)
print("crop dims with margin 2:", crop.dims, "clamped box:", clamped.lo, clamped.hi)

blank = Volume(np.zeros_like(vol.data), spacing=vol.spacing)
patched = paste_back(blank, clamped, crop)
inside = patched.data[clamped.lo[2]:clamped.hi[2],
                      clamped.lo[1]:clamped.hi[1],
                      clamped.lo[0]:clamped.hi[0]]
assert np.array_equal(inside, crop.data)
print("paste_back restores the crop region exactly")
