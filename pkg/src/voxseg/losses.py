"""Segmentation losses and their deeply supervised composite.

Four ingredients: a plain cross-entropy baseline, soft Dice, an overlap
penalty that drives per-voxel probabilities away from 0.5 to sharpen
fuzzy boundaries, and a focal-positive term that trains a per-voxel
threshold map to suppress weak positives.  The composite wires them into
the supervised main path plus weighted auxiliary paths, with an L2 term
over all parameters.

All losses are pure functions over tensors and permutation-invariant over
voxels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DomainError, ShapeError

CEL_EPS = 1e-7
DICE_EPS = 1e-5

# logit floor used when the literal gate form suppresses a voxel
_GATE_NEG = 40.0


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the composite loss.

    ``beta`` weights the auxiliary side-path losses; ``gamma_ovl`` and
    ``delta_fpl`` blend the overlap and focal-positive terms into each
    supervised loss; ``lambda_l2`` scales weight decay; ``tau_gate`` is
    the soft-gate temperature used while training the threshold map.
    ``use_cel`` switches the whole composite to the cross-entropy
    baseline (no side supervision).
    """

    beta: tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    lambda_l2: float = 1e-4
    gamma_ovl: float = 0.5
    delta_fpl: float = 0.5
    tau_gate: float = 0.05
    use_cel: bool = False

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if any(b < 0 for b in self.beta):
            raise ConfigError(f"side-path weights must be >= 0, got {self.beta}")
        for name in ("lambda_l2", "gamma_ovl", "delta_fpl"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.tau_gate <= 0:
            raise ConfigError(f"tau_gate must be > 0, got {self.tau_gate}")


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar components of one composite-loss evaluation.

    ``total`` is the optimized value; the invariant
    ``total == weighted_sum(weights)`` holds to 1e-6 relative.
    """

    total: float
    cel: float
    dcl_main: float
    ovl_main: float
    fpl: float
    side_dcl: tuple[float, ...]
    side_ovl: tuple[float, ...]
    l2: float

    def weighted_sum(self, weights: LossWeights) -> float:
        """Recombine the components under ``weights``."""
        out = self.cel + self.dcl_main + weights.gamma_ovl * self.ovl_main
        out += weights.delta_fpl * self.fpl
        for b, d, o in zip(weights.beta, self.side_dcl, self.side_ovl):
            out += b * (d + weights.gamma_ovl * o)
        return out + weights.lambda_l2 * self.l2

    @staticmethod
    def csv_header(n_sides: int) -> list[str]:
        cols = ["total", "cel", "dcl_main", "ovl_main", "fpl"]
        cols += [f"dcl_side{i + 1}" for i in range(n_sides)]
        cols += [f"ovl_side{i + 1}" for i in range(n_sides)]
        return cols + ["l2"]

    def csv_row(self) -> list[float]:
        return [self.total, self.cel, self.dcl_main, self.ovl_main, self.fpl,
                *self.side_dcl, *self.side_ovl, self.l2]


def _as_target(y, like: Tensor) -> Tensor:
    if isinstance(y, Tensor):
        return y
    return Tensor(np.asarray(y, dtype=like.data.dtype))


def _check_same_shape(a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")


def cel(p: Tensor, y) -> Tensor:
    """Mean binary cross entropy of a probability map against a 0/1 target."""
    y = _as_target(y, p)
    _check_same_shape(p, y)
    pos = ad.mul(y, ad.log(p + CEL_EPS))
    neg = ad.mul(1.0 - y, ad.log(1.0 - p + CEL_EPS))
    return -ad.mean(pos + neg)


def dice_loss(p: Tensor, y) -> Tensor:
    """Soft Dice loss: 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps)."""
    y = _as_target(y, p)
    _check_same_shape(p, y)
    inter = ad.sum(ad.mul(p, y))
    denom = ad.sum(p) + ad.sum(y)
    return 1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)


def overlap_loss(p: Tensor, reduction: str = "mean") -> Tensor:
    """Overlap between foreground and background probabilities.

    With a single foreground channel the background probability is
    ``1 - p``, so the per-voxel overlap is ``p * (1 - p)``: zero exactly
    when the map is binary, maximal (0.25) at p = 0.5.  The default
    reduces by mean so the value is crop-size-invariant; ``reduction="sum"``
    keeps the plain voxel sum.
    """
    if reduction not in ("mean", "sum"):
        raise ConfigError(f"reduction must be 'mean' or 'sum', got {reduction!r}")
    lo, hi = float(p.data.min()), float(p.data.max())
    if lo < 0.0 or hi > 1.0:
        raise DomainError(f"probabilities outside [0, 1]: min={lo}, max={hi}")
    per_voxel = ad.mul(p, 1.0 - p)
    return ad.mean(per_voxel) if reduction == "mean" else ad.sum(per_voxel)


def focal_positive_loss(
    logit: Tensor,
    tm: Tensor,
    y,
    training: bool = True,
    tau: float = 0.05,
    literal_gate: bool = False,
) -> Tensor:
    """Dice-form loss on the threshold-gated probability map.

    The gate keeps a voxel when its probability exceeds the learned
    threshold map.  In evaluation mode the gate is the hard condition
    ``p > tm``; in training mode it is the soft surrogate
    ``sigmoid((p - tm) / tau)`` so gradients reach both the logits and
    the threshold map.

    The gated map defaults to ``p * gate`` (so perfect predictions reach
    zero loss).  ``literal_gate=True`` instead applies the logistic
    function to the gated probability itself, which bounds kept voxels to
    [0.5, 0.73) and keeps zero loss unreachable; it exists for comparison
    only.
    """
    y = _as_target(y, logit)
    _check_same_shape(logit, tm)
    _check_same_shape(logit, y)
    # float32 sigmoids saturate to exact 0/1, so the closed interval is the
    # right domain; the gate still behaves (p > 1 never fires, p > 0 always)
    tlo, thi = float(tm.data.min()), float(tm.data.max())
    if tlo < 0.0 or thi > 1.0:
        raise DomainError(f"threshold map must lie in [0, 1]: min={tlo}, max={thi}")
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")

    p = ad.sigmoid(logit)
    if training:
        gate = ad.sigmoid(ad.scale(ad.sub(p, tm), 1.0 / tau))
    else:
        gate = Tensor((p.data > tm.data).astype(p.data.dtype))
    if literal_gate:
        gated = ad.sigmoid(ad.mul(gate, p) - ad.scale(1.0 - gate, _GATE_NEG))
    else:
        gated = ad.mul(p, gate)
    inter = ad.sum(ad.mul(gated, y))
    denom = ad.sum(gated) + ad.sum(y)
    return 1.0 - (2.0 * inter + DICE_EPS) / (denom + DICE_EPS)


def l2_penalty(params) -> Tensor:
    """Sum of squared entries over an iterable of parameter tensors."""
    terms = [ad.sum(ad.mul(t, t)) for t in params]
    if not terms:
        raise ConfigError("l2_penalty needs at least one parameter tensor")
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def composite_loss(outputs, y, params, weights: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Total training loss for one supervised forward pass.

    ``outputs`` must expose ``main_logit``, ``main_prob``, ``tm`` and
    ``side_probs``; ``params`` is a name -> Tensor mapping whose values
    enter the L2 term.  Returns the scalar graph node (for backward) and
    the frozen numeric breakdown.
    """
    y = _as_target(y, outputs.main_prob)
    param_list = list(params.values()) if hasattr(params, "values") else list(params)

    if weights.use_cel:
        cel_t = cel(outputs.main_prob, y)
        total = cel_t
        breakdown = dict(cel=cel_t.item(), dcl_main=0.0, ovl_main=0.0, fpl=0.0,
                         side_dcl=(), side_ovl=())
    else:
        sides = list(outputs.side_probs)
        if len(weights.beta) < len(sides):
            raise ConfigError(
                f"{len(sides)} side paths but only {len(weights.beta)} beta weights"
            )
        dcl_m = dice_loss(outputs.main_prob, y)
        ovl_m = overlap_loss(outputs.main_prob)
        fpl_t = focal_positive_loss(outputs.main_logit, outputs.tm, y,
                                    training=True, tau=weights.tau_gate)
        total = dcl_m + weights.gamma_ovl * ovl_m + weights.delta_fpl * fpl_t
        side_dcl, side_ovl = [], []
        for b, sp in zip(weights.beta, sides):
            dcl_s = dice_loss(sp, y)
            ovl_s = overlap_loss(sp)
            total = total + b * (dcl_s + weights.gamma_ovl * ovl_s)
            side_dcl.append(dcl_s.item())
            side_ovl.append(ovl_s.item())
        breakdown = dict(cel=0.0, dcl_main=dcl_m.item(), ovl_main=ovl_m.item(),
                         fpl=fpl_t.item(), side_dcl=tuple(side_dcl),
                         side_ovl=tuple(side_ovl))

    if weights.lambda_l2 > 0:
        l2_t = l2_penalty(param_list)
        total = total + weights.lambda_l2 * l2_t
        l2_val = l2_t.item()
    else:
        l2_val = float(np.sum([np.sum(np.square(t.data, dtype=np.float64)) for t in param_list])) \
            if param_list else 0.0

    return total, LossBreakdown(total=total.item(), l2=l2_val, **breakdown)
