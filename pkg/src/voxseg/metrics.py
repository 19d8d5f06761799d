"""Segmentation quality metrics and per-case evaluation reports.

Voxel-overlap scores (Dice, Jaccard, Conformity) come straight from the
foreground counts; boundary scores (average and maximum symmetric
boundary distance, in millimeters) use exact nearest-neighbor distances
between the 6-connectivity boundary voxel sets of the two masks, scaled
by the physical voxel spacing.

Conventions for degenerate inputs: two empty masks agree perfectly
(Dice 1) but the case is flagged; Conformity is undefined at Dice 0 and
reported as NaN; boundary distances require both masks nonempty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyMaskError, InputError
from .volcore import BinaryMask, atomic_write_text, require_same_geometry


def overlap_metrics(pred: BinaryMask, truth: BinaryMask) -> tuple[float, float, float]:
    """(dice, jaccard, conformity) from foreground voxel counts.

    Jaccard and Conformity are the exact algebraic transforms
    ``j = d / (2 - d)`` and ``c = (3d - 2) / d`` of the same counts, so
    the three values are mutually consistent by construction.  Two empty
    masks return (1, 1, 1); Dice 0 yields NaN conformity.
    """
    require_same_geometry(pred, truth)
    np_, nt = pred.voxel_count, truth.voxel_count
    if np_ == 0 and nt == 0:
        return 1.0, 1.0, 1.0
    ni = int(np.count_nonzero(pred.data & truth.data))
    dice = 2.0 * ni / (np_ + nt)
    jaccard = ni / (np_ + nt - ni)
    conform = (3.0 * dice - 2.0) / dice if dice > 0 else float("nan")
    return dice, jaccard, conform


def extract_boundary(mask: BinaryMask) -> np.ndarray:
    """(n, 3) integer (x, y, z) coordinates of boundary voxels.

    A foreground voxel is boundary when any of its six face neighbors is
    background or lies outside the grid.
    """
    fg = mask.data
    if not fg.any():
        raise EmptyMaskError("cannot extract the boundary of an empty mask")
    padded = np.pad(fg, 1)
    interior = np.ones_like(fg)
    nz, ny, nx = fg.shape
    for axis, n in ((0, nz), (1, ny), (2, nx)):
        lo = [slice(1, 1 + s) for s in fg.shape]
        hi = [slice(1, 1 + s) for s in fg.shape]
        lo[axis] = slice(0, n)
        hi[axis] = slice(2, 2 + n)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    coords_zyx = np.argwhere(fg & ~interior)
    return coords_zyx[:, ::-1].astype(np.int64)


def boundary_distances(pred: BinaryMask, truth: BinaryMask) -> tuple[float, float]:
    """(average, maximum) symmetric boundary distance in millimeters.

    Exact nearest neighbors in physical coordinates; the average pools
    both directions over the union of boundary voxels, the maximum is the
    symmetric Hausdorff distance of the boundary sets.
    """
    require_same_geometry(pred, truth)
    scale = np.asarray(pred.spacing, dtype=np.float64)
    a = extract_boundary(pred).astype(np.float64) * scale
    b = extract_boundary(truth).astype(np.float64) * scale
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    avg = (float(d_ab.sum()) + float(d_ba.sum())) / (len(a) + len(b))
    return avg, max(float(d_ab.max()), float(d_ba.max()))


@dataclass(frozen=True)
class CaseMetrics:
    """All five scores for one prediction/truth pair."""

    case_id: str
    dice: float
    jaccard: float
    conform: float
    adb_mm: float
    hdb_mm: float
    degenerate: bool = False
    note: str = ""


def evaluate_pair(case_id: str, pred: BinaryMask, truth: BinaryMask) -> CaseMetrics:
    """Score one pair, downgrading to NaN + a degeneracy note where a
    metric is undefined instead of raising."""
    dice, jaccard, conform = overlap_metrics(pred, truth)
    notes = []
    if pred.voxel_count == 0 and truth.voxel_count == 0:
        notes.append("both masks empty")
    elif dice == 0.0:
        notes.append("no overlap; conformity undefined")
    if pred.voxel_count == 0 or truth.voxel_count == 0:
        adb = hdb = float("nan")
        if not notes:
            notes.append("empty mask; boundary distances undefined")
    else:
        adb, hdb = boundary_distances(pred, truth)
    return CaseMetrics(case_id=case_id, dice=dice, jaccard=jaccard, conform=conform,
                       adb_mm=adb, hdb_mm=hdb, degenerate=bool(notes),
                       note="; ".join(notes))


_FIELDS = ("dice", "jaccard", "conform", "adb_mm", "hdb_mm")


@dataclass(frozen=True)
class MetricsReport:
    """Per-case scores plus aggregate means.

    Aggregates are means over the cases where each metric is defined;
    ``degenerate_count`` says how many cases carried a degeneracy note.
    """

    cases: tuple[CaseMetrics, ...]
    aggregate: dict
    degenerate_count: int

    def to_csv(self) -> str:
        lines = ["case,dice,jaccard,conform,adb_mm,hdb_mm,degenerate,note"]
        for c in self.cases:
            vals = ",".join(f"{getattr(c, f):.6f}" for f in _FIELDS)
            lines.append(f"{c.case_id},{vals},{int(c.degenerate)},{c.note}")
        agg = ",".join(f"{self.aggregate[f]:.6f}" for f in _FIELDS)
        lines.append(f"mean,{agg},{self.degenerate_count},")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "cases": [
                {"case": c.case_id, **{f: getattr(c, f) for f in _FIELDS},
                 "degenerate": c.degenerate, "note": c.note}
                for c in self.cases
            ],
            "aggregate": self.aggregate,
            "degenerate_count": self.degenerate_count,
        }
        return json.dumps(payload, indent=1, allow_nan=True) + "\n"

    def save(self, stem: str) -> None:
        atomic_write_text(stem + ".csv", self.to_csv())
        atomic_write_text(stem + ".json", self.to_json())


def build_report(cases) -> MetricsReport:
    """Aggregate per-case metrics into a report.

    Each aggregate value is the mean of the *defined* (finite) per-case
    values; cases where a metric is undefined (NaN) are skipped for that
    metric only.  Note the algebraic identities linking Dice, Jaccard
    and Conformity hold exactly per case but only approximately on the
    aggregate row: a mean of transforms is not the transform of the
    mean.  Deriving one aggregate score from another is therefore good
    to a few tenths of a point at typical score spreads, not exact.
    """
    cases = tuple(cases)
    if not cases:
        raise InputError("cannot build a report over zero cases")
    aggregate = {}
    for f in _FIELDS:
        vals = np.asarray([getattr(c, f) for c in cases], dtype=np.float64)
        defined = vals[np.isfinite(vals)]
        aggregate[f] = float(defined.mean()) if defined.size else float("nan")
    return MetricsReport(cases=cases, aggregate=aggregate,
                         degenerate_count=sum(c.degenerate for c in cases))
