"""Overlap and boundary-distance metrics against brute-force oracles."""

import json
import math

import numpy as np
import pytest

from voxseg.errors import EmptyMaskError, InputError, ShapeError
from voxseg.metrics import (boundary_distances, build_report, evaluate_pair,
                            extract_boundary, overlap_metrics)
from voxseg.volcore import BinaryMask

from oracles import (allpairs_boundary_distances, boundary_voxels_loop,
                     overlap_counts_loop)


def _mask(data, spacing=(1.0, 1.0, 1.0)):
    return BinaryMask(np.asarray(data, dtype=bool), spacing)


def _random_pair(rng):
    shape = tuple(int(s) for s in rng.integers(2, 9, size=3))
    a = rng.random(shape) < rng.uniform(0.1, 0.9)
    b = rng.random(shape) < rng.uniform(0.1, 0.9)
    return _mask(a), _mask(b)


# ---------------------------------------------------------------------------
# Overlap scores
# ---------------------------------------------------------------------------

def test_overlap_scores_match_counting_oracle():
    rng = np.random.default_rng(42)
    for _ in range(60):
        pred, truth = _random_pair(rng)
        na, nb, ni = overlap_counts_loop(pred.data, truth.data)
        dice, jaccard, conform = overlap_metrics(pred, truth)
        if na == 0 and nb == 0:
            assert (dice, jaccard, conform) == (1.0, 1.0, 1.0)
            continue
        assert dice == pytest.approx(2.0 * ni / (na + nb), abs=1e-12)
        if na + nb - ni:
            assert jaccard == pytest.approx(ni / (na + nb - ni), abs=1e-12)


def test_score_identities_hold():
    rng = np.random.default_rng(7)
    for _ in range(60):
        pred, truth = _random_pair(rng)
        dice, jaccard, conform = overlap_metrics(pred, truth)
        if dice == 0.0:
            assert jaccard == 0.0 and math.isnan(conform)
            continue
        assert jaccard == pytest.approx(dice / (2.0 - dice), abs=1e-9)
        assert conform == pytest.approx((3.0 * dice - 2.0) / dice, abs=1e-9)


def test_identical_masks_score_perfectly():
    m = _mask(np.eye(4)[None].repeat(3, axis=0))
    assert overlap_metrics(m, m) == (1.0, 1.0, 1.0)


def test_hand_worked_overlap():
    # |A| = 2, |B| = 3, |A & B| = 1  ->  d = 2/5, j = 1/4, c = (6/5 - 2)/(2/5)
    a = np.zeros((1, 1, 5), dtype=bool)
    b = np.zeros((1, 1, 5), dtype=bool)
    a[0, 0, :2] = True
    b[0, 0, 1:4] = True
    dice, jaccard, conform = overlap_metrics(_mask(a), _mask(b))
    assert dice == pytest.approx(0.4)
    assert jaccard == pytest.approx(0.25)
    assert conform == pytest.approx(-2.0)


def test_overlap_requires_same_geometry():
    a = _mask(np.ones((2, 2, 2)))
    b = _mask(np.ones((2, 2, 3)))
    with pytest.raises(ShapeError):
        overlap_metrics(a, b)
    c = _mask(np.ones((2, 2, 2)), spacing=(1.0, 1.0, 2.0))
    with pytest.raises(ShapeError):
        overlap_metrics(a, c)


# ---------------------------------------------------------------------------
# Boundary extraction and distances
# ---------------------------------------------------------------------------

def test_boundary_matches_neighbor_scan():
    rng = np.random.default_rng(3)
    for _ in range(25):
        shape = tuple(int(s) for s in rng.integers(3, 9, size=3))
        data = rng.random(shape) < 0.5
        if not data.any():
            data[0, 0, 0] = True
        got = {tuple(r) for r in extract_boundary(_mask(data))}
        assert got == boundary_voxels_loop(data)


def test_solid_block_boundary_is_its_shell():
    data = np.zeros((6, 6, 6), dtype=bool)
    data[1:5, 1:5, 1:5] = True
    coords = extract_boundary(_mask(data))
    assert len(coords) == 4 ** 3 - 2 ** 3
    inner = (coords > 1).all(axis=1) & (coords < 4).all(axis=1)
    assert not inner.any()


def test_boundary_of_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        extract_boundary(_mask(np.zeros((3, 3, 3))))


def test_distances_match_all_pairs_oracle():
    rng = np.random.default_rng(11)
    for spacing in ((1.0, 1.0, 1.0), (0.7, 1.3, 2.0)):
        for _ in range(10):
            shape = tuple(int(s) for s in rng.integers(3, 8, size=3))
            a = rng.random(shape) < 0.4
            b = rng.random(shape) < 0.4
            a[0, 0, 0] = b[-1, -1, -1] = True
            pred, truth = _mask(a, spacing), _mask(b, spacing)
            want_avg, want_max = allpairs_boundary_distances(
                boundary_voxels_loop(a), boundary_voxels_loop(b), spacing)
            got_avg, got_max = boundary_distances(pred, truth)
            assert got_avg == pytest.approx(want_avg, abs=1e-9)
            assert got_max == pytest.approx(want_max, abs=1e-9)


def test_two_single_voxels_give_their_separation():
    a = np.zeros((5, 5, 5), dtype=bool)
    b = np.zeros((5, 5, 5), dtype=bool)
    a[0, 0, 0] = True
    b[0, 0, 3] = True  # 3 voxels apart along x
    avg, hmax = boundary_distances(_mask(a), _mask(b))
    assert avg == pytest.approx(3.0)
    assert hmax == pytest.approx(3.0)
    # anisotropic spacing scales the same gap
    avg, hmax = boundary_distances(_mask(a, (2.0, 1.0, 1.0)),
                                   _mask(b, (2.0, 1.0, 1.0)))
    assert avg == pytest.approx(6.0)
    assert hmax == pytest.approx(6.0)


def test_identical_masks_have_zero_distance():
    data = np.zeros((4, 4, 4), dtype=bool)
    data[1:3, 1:3, 1:3] = True
    avg, hmax = boundary_distances(_mask(data), _mask(data))
    assert avg == 0.0 and hmax == 0.0


# ---------------------------------------------------------------------------
# Per-case evaluation and reports
# ---------------------------------------------------------------------------

def test_both_empty_is_flagged_perfect_agreement():
    empty = _mask(np.zeros((3, 3, 3)))
    c = evaluate_pair("e", empty, empty)
    assert (c.dice, c.jaccard, c.conform) == (1.0, 1.0, 1.0)
    assert math.isnan(c.adb_mm) and math.isnan(c.hdb_mm)
    assert c.degenerate and "empty" in c.note


def test_disjoint_masks_have_nan_conformity():
    a = np.zeros((3, 3, 3), dtype=bool)
    b = np.zeros((3, 3, 3), dtype=bool)
    a[0, 0, 0] = True
    b[2, 2, 2] = True
    c = evaluate_pair("d", _mask(a), _mask(b))
    assert c.dice == 0.0 and c.jaccard == 0.0
    assert math.isnan(c.conform)
    assert np.isfinite(c.adb_mm)  # boundaries exist, distances are fine
    assert c.degenerate


def test_one_empty_mask_degrades_gracefully():
    a = np.zeros((3, 3, 3), dtype=bool)
    a[1, 1, 1] = True
    c = evaluate_pair("h", _mask(a), _mask(np.zeros((3, 3, 3))))
    assert c.dice == 0.0
    assert math.isnan(c.adb_mm) and math.isnan(c.hdb_mm)
    assert c.degenerate


def test_report_aggregates_skip_undefined_values():
    a = np.zeros((3, 3, 3), dtype=bool)
    a[1, 1, 1] = True
    good = evaluate_pair("g", _mask(a), _mask(a))
    bad = evaluate_pair("b", _mask(a), _mask(np.zeros((3, 3, 3))))
    report = build_report([good, bad])
    assert report.aggregate["dice"] == pytest.approx(0.5)  # (1 + 0) / 2
    assert report.aggregate["adb_mm"] == pytest.approx(0.0)  # only the good case
    assert report.degenerate_count == 1


def test_report_csv_layout():
    a = np.zeros((3, 3, 3), dtype=bool)
    a[1, 1, 1] = True
    report = build_report([evaluate_pair("c0", _mask(a), _mask(a))])
    lines = report.to_csv().strip().split("\n")
    assert lines[0] == "case,dice,jaccard,conform,adb_mm,hdb_mm,degenerate,note"
    assert lines[1].startswith("c0,1.000000,1.000000,1.000000,")
    assert lines[-1].startswith("mean,")


def test_report_json_roundtrip(tmp_path):
    a = np.zeros((3, 3, 3), dtype=bool)
    a[1, 1, 1] = True
    report = build_report([evaluate_pair("c0", _mask(a), _mask(a))])
    stem = str(tmp_path / "scores")
    report.save(stem)
    payload = json.loads(open(stem + ".json").read())
    assert payload["cases"][0]["case"] == "c0"
    assert payload["aggregate"]["dice"] == pytest.approx(1.0)
    assert open(stem + ".csv").read() == report.to_csv()


def test_report_needs_at_least_one_case():
    with pytest.raises(InputError):
        build_report([])
