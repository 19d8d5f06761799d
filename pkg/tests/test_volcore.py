"""Grid types, file IO, normalization, crop/paste."""

import os
import struct

import numpy as np
import pytest

from voxseg import volcore
from voxseg.errors import FormatError, InputError, RoiError, ShapeError, TruncationError
from voxseg.volcore import BinaryMask, RoiBox, Volume

from oracles import zscore_loop


def test_volume_dims_are_xyz_of_zyx_array():
    vol = Volume(np.zeros((2, 3, 4), dtype=np.float32))
    assert vol.dims == (4, 3, 2)
    assert vol.data.shape == (2, 3, 4)


def test_volume_copies_and_freezes():
    src = np.ones((2, 2, 2), dtype=np.float32)
    vol = Volume(src)
    src[0, 0, 0] = 5.0
    assert vol.data[0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        vol.data[0, 0, 0] = 9.0


def test_volume_rejects_nonfinite_and_bad_geometry():
    with pytest.raises(InputError):
        Volume(np.array([[[np.nan]]], dtype=np.float32))
    with pytest.raises(InputError):
        Volume(np.full((2, 2, 2), np.inf, dtype=np.float32))
    with pytest.raises(InputError):
        Volume(np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(InputError):
        Volume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(1.0, 0.0, 1.0))


def test_mask_voxel_count():
    m = np.zeros((3, 3, 3), dtype=bool)
    m[1, 1, 1] = m[0, 2, 2] = True
    assert BinaryMask(m).voxel_count == 2


def test_roibox_validation_and_shape():
    box = RoiBox((1, 2, 3), (4, 6, 8))
    assert box.shape_xyz == (3, 4, 5)
    with pytest.raises(RoiError):
        RoiBox((2, 0, 0), (2, 4, 4))


def test_require_same_geometry():
    a = Volume(np.zeros((2, 2, 2), dtype=np.float32))
    b = Volume(np.zeros((2, 2, 2), dtype=np.float32), spacing=(2.0, 1.0, 1.0))
    with pytest.raises(ShapeError):
        volcore.require_same_geometry(a, b)


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

def test_save_load_roundtrip_f32(tmp_path):
    rng = np.random.default_rng(0)
    vol = Volume(rng.normal(size=(3, 4, 5)).astype(np.float32),
                 spacing=(0.5, np.pi, 2.0))
    stem = str(tmp_path / "vol")
    volcore.save(stem, vol)
    back = volcore.load(stem)
    assert isinstance(back, Volume)
    assert back.data.tobytes() == vol.data.tobytes()
    assert back.spacing == vol.spacing  # %.17g survives the round trip


def test_save_load_roundtrip_mask(tmp_path):
    mask = BinaryMask(np.random.default_rng(1).random((4, 4, 4)) < 0.5)
    stem = str(tmp_path / "msk")
    volcore.save(stem, mask)
    back = volcore.load(stem + ".hdr")  # either stem or header path works
    assert isinstance(back, BinaryMask)
    assert np.array_equal(back.data, mask.data)


def test_payload_bytes_are_little_endian_ieee754(tmp_path):
    # 2x2x2 volume with hand-picked values whose float32 encodings are known
    values = [0.5, -1.25, 2.0, 0.0, 1.0, -0.0, 3.5, 100.0]
    expected = b"".join(struct.pack("<f", v) for v in values)
    vol = Volume(np.array(values, dtype=np.float32).reshape(2, 2, 2))
    stem = str(tmp_path / "hex")
    volcore.save(stem, vol)
    with open(stem + ".raw", "rb") as f:
        assert f.read() == expected
    # spot-check two known bit patterns inside the payload
    assert expected[0:4] == bytes.fromhex("0000003f")    # 0.5
    assert expected[4:8] == bytes.fromhex("0000a0bf")    # -1.25


def test_header_is_plain_text_with_expected_fields(tmp_path):
    vol = Volume(np.zeros((2, 3, 4), dtype=np.float32), spacing=(1.0, 1.5, 2.0))
    stem = str(tmp_path / "hdr")
    volcore.save(stem, vol)
    text = open(stem + ".hdr").read().splitlines()
    assert text[0].startswith("# voxseg-grid")
    fields = dict(line.split(" = ", 1) for line in text[1:])
    assert fields["dims"] == "4 3 2"
    assert fields["elem"] == "f32"
    assert fields["order"] == "little"
    assert [float(s) for s in fields["spacing_mm"].split()] == [1.0, 1.5, 2.0]


def test_load_rejects_truncated_payload(tmp_path):
    vol = Volume(np.zeros((2, 2, 2), dtype=np.float32))
    stem = str(tmp_path / "trunc")
    volcore.save(stem, vol)
    raw = open(stem + ".raw", "rb").read()
    with open(stem + ".raw", "wb") as f:
        f.write(raw[:-3])
    with pytest.raises(TruncationError):
        volcore.load(stem)


@pytest.mark.parametrize("mutate, needle", [
    (lambda t: t.replace("dims = 2 2 2", "dims = 2 2"), "dims"),
    (lambda t: t.replace("elem = f32", "elem = f64"), "elem"),
    (lambda t: t.replace("order = little", "order = big"), "order"),
    (lambda t: t.replace("voxseg-grid", "binary-grid"), "header"),
    (lambda t: "\n".join(l for l in t.splitlines() if "spacing" not in l) + "\n",
     "spacing_mm"),
])
def test_load_names_the_offending_header_field(tmp_path, mutate, needle):
    vol = Volume(np.zeros((2, 2, 2), dtype=np.float32))
    stem = str(tmp_path / "bad")
    volcore.save(stem, vol)
    text = open(stem + ".hdr").read()
    with open(stem + ".hdr", "w") as f:
        f.write(mutate(text))
    with pytest.raises(FormatError) as exc:
        volcore.load(stem)
    assert needle in str(exc.value)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    vol = Volume(np.zeros((2, 2, 2), dtype=np.float32))
    volcore.save(str(tmp_path / "a"), vol)
    names = sorted(os.listdir(tmp_path))
    assert names == ["a.hdr", "a.raw"]


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def test_zscore_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    data = rng.normal(3.0, 2.5, size=(4, 5, 6)).astype(np.float32)
    got = volcore.normalize_zscore(Volume(data)).data.reshape(-1)
    want = zscore_loop(data)
    np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)
    assert abs(float(np.mean(got))) < 1e-6
    assert abs(float(np.std(got)) - 1.0) < 1e-5


def test_zscore_constant_volume_maps_to_zeros():
    vol = Volume(np.full((3, 3, 3), 7.25, dtype=np.float32))
    out = volcore.normalize_zscore(vol)
    assert np.all(out.data == 0.0)


def test_zscore_needs_two_voxels():
    with pytest.raises(InputError):
        volcore.normalize_zscore(Volume(np.zeros((1, 1, 1), dtype=np.float32)))


# ---------------------------------------------------------------------------
# Crop / paste
# ---------------------------------------------------------------------------

def test_crop_paste_roundtrip():
    rng = np.random.default_rng(3)
    vol = Volume(rng.normal(size=(6, 7, 8)).astype(np.float32))
    box = RoiBox((1, 2, 0), (5, 6, 4))
    crop, actual = volcore.crop_with_margin(vol, box)
    assert actual == box
    assert crop.data.shape == (4, 4, 4)  # (z, y, x) of shape_xyz reversed
    back = volcore.paste_back(vol, actual, crop)
    np.testing.assert_array_equal(back.data, vol.data)


def test_crop_margin_clamps_to_grid():
    vol = Volume(np.zeros((6, 6, 6), dtype=np.float32))
    box = RoiBox((0, 0, 0), (2, 2, 2))
    crop, actual = volcore.crop_with_margin(vol, box, margin=3)
    assert actual.lo == (0, 0, 0)
    assert actual.hi == (5, 5, 5)
    assert crop.data.shape == (5, 5, 5)


def test_crop_values_come_from_the_right_place():
    data = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
    vol = Volume(data)
    crop, actual = volcore.crop_with_margin(vol, RoiBox((1, 0, 2), (2, 1, 3)))
    # single voxel at x=1, y=0, z=2 -> array index [2, 0, 1]
    assert crop.data.reshape(-1).tolist() == [data[2, 0, 1]]
    assert actual.lo == (1, 0, 2)


def test_crop_rejects_degenerate_and_negative_margin():
    vol = Volume(np.zeros((4, 4, 4), dtype=np.float32))
    with pytest.raises(RoiError):
        volcore.crop_with_margin(vol, RoiBox((10, 10, 10), (12, 12, 12)))
    with pytest.raises(InputError):
        volcore.crop_with_margin(vol, RoiBox((0, 0, 0), (2, 2, 2)), margin=-1)


def test_paste_back_shape_check():
    vol = Volume(np.zeros((4, 4, 4), dtype=np.float32))
    crop = Volume(np.ones((2, 2, 2), dtype=np.float32))
    with pytest.raises(ShapeError):
        volcore.paste_back(vol, RoiBox((0, 0, 0), (3, 3, 3)), crop)
