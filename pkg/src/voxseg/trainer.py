"""Iteration-based training with Adam and recursive refinement stages.

One iteration samples a case, cuts a (biased) random crop, augments it,
runs the supervised forward pass, backpropagates the composite loss and
applies an Adam update.  Per-iteration randomness derives from
``(seed, refinement level, step index)`` alone, so resuming from a
checkpoint replays exactly the stream a longer uninterrupted run would
have seen -- checkpoints do not need to carry generator state.

Refinement wraps the same loop: level k trains on the normalized image
plus the level k-1 prediction (summation join), starting from the level
k-1 weights at a reduced learning rate.
"""

from __future__ import annotations

import fnmatch
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import volcore
from .errors import ConfigError, ContractError, InputError, TrainingError
from .inference import TilingConfig, sliding_window_predict
from .losses import LossBreakdown, LossWeights, composite_loss
from .net3d import (Checkpoint, Network, UNetConfig, build_unet,
                    checkpoint_from_network, network_from_checkpoint,
                    save_checkpoint)
from .phantom import AugmentConfig, augment
from .volcore import BinaryMask, Volume, atomic_write_text, normalize_zscore

MANIFEST_FORMAT = "voxseg-manifest"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and sampling policy.

    ``lr_multipliers`` maps glob patterns over parameter names to
    factors; the first matching pattern wins, unmatched names use factor
    1.  ``fg_crop_bias`` is the probability of centering a crop on a
    foreground voxel instead of sampling uniformly.  ``augment`` None
    disables augmentation entirely.
    """

    iterations: int = 2000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_multipliers: tuple[tuple[str, float], ...] = ()
    fg_crop_bias: float = 0.5
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError(f"Adam betas must be in (0, 1), got {self.beta1}, {self.beta2}")
        if self.adam_eps <= 0:
            raise ConfigError(f"adam_eps must be > 0, got {self.adam_eps}")
        if not 0.0 <= self.fg_crop_bias <= 1.0:
            raise ConfigError(f"fg_crop_bias must be in [0, 1], got {self.fg_crop_bias}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        mults = tuple((str(p), float(f)) for p, f in self.lr_multipliers)
        if any(f <= 0 for _, f in mults):
            raise ConfigError(f"lr multipliers must be > 0, got {mults}")
        object.__setattr__(self, "lr_multipliers", mults)


def lr_multiplier(name: str, multipliers) -> float:
    """First-match-wins glob lookup; 1.0 when nothing matches."""
    for pattern, factor in multipliers:
        if fnmatch.fnmatchcase(name, pattern):
            return factor
    return 1.0


def adam_step(params: dict, grads: dict, m: dict, v: dict, step: int,
              cfg: TrainConfig) -> None:
    """One in-place Adam update over every parameter (step counts from 1).

    Missing gradients count as zero (the moments still decay).  A
    non-finite gradient aborts with the offending parameter named, so a
    diverging run fails loudly instead of poisoning the weights.
    """
    if step < 1:
        raise ContractError(f"Adam step index counts from 1, got {step}")
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r} at step {step}")
        if name not in m:
            m[name] = np.zeros_like(p.data)
            v[name] = np.zeros_like(p.data)
        m[name] *= cfg.beta1
        m[name] += (1.0 - cfg.beta1) * g
        v[name] *= cfg.beta2
        v[name] += (1.0 - cfg.beta2) * np.square(g)
        lr = cfg.learning_rate * lr_multiplier(name, cfg.lr_multipliers)
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


# ---------------------------------------------------------------------------
# Cases and crop sampling
# ---------------------------------------------------------------------------

@dataclass
class Case:
    """One training example held in memory, already normalized/joined."""

    case_id: str
    image: np.ndarray  # float32 (nz, ny, nx)
    mask: np.ndarray   # bool   (nz, ny, nx)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.image.shape != self.mask.shape:
            raise InputError(
                f"case {self.case_id}: image {self.image.shape} vs mask {self.mask.shape}"
            )
        self.fg_zyx = np.argwhere(self.mask)


def case_from_grids(case_id: str, image: Volume, mask: BinaryMask,
                    normalize: bool = True) -> Case:
    volcore.require_same_geometry(image, mask)
    img = normalize_zscore(image).data if normalize else image.data
    return Case(case_id=case_id, image=img, mask=mask.data, spacing=image.spacing)


def sample_crop(case: Case, crop_dims: tuple[int, int, int], fg_bias: float,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Cut one (cz, cy, cx) crop, biased toward foreground.

    With probability ``fg_bias`` (and a nonempty mask) the crop is
    centered on a uniformly drawn foreground voxel, clamped to the grid;
    otherwise the origin is uniform over all valid positions.  Cases
    smaller than the crop are reflect-padded first.
    """
    want = tuple(crop_dims[::-1])  # (cz, cy, cx)
    img, msk = case.image, case.mask
    fg = case.fg_zyx
    pads = [max(0, w - s) for w, s in zip(want, img.shape)]
    if any(pads):
        pad_spec = [(0, p) for p in pads]
        img = np.pad(img, pad_spec, mode="reflect")
        msk = np.pad(msk, pad_spec, mode="reflect")
        fg = np.argwhere(msk)
    dims = img.shape

    use_fg = len(fg) > 0 and rng.random() < fg_bias
    if use_fg:
        center = fg[int(rng.integers(len(fg)))]
        origin = [int(np.clip(c - w // 2, 0, d - w)) for c, w, d in zip(center, want, dims)]
    else:
        origin = [int(rng.integers(0, d - w + 1)) for w, d in zip(want, dims)]
    sl = tuple(slice(o, o + w) for o, w in zip(origin, want))
    return img[sl].copy(), msk[sl].copy()


def _iteration_rng(seed: int, level: int, step: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(level), int(step)))
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[LossBreakdown]


def train_cases(cases, train_cfg: TrainConfig, unet_cfg: UNetConfig | None = None,
                start: Checkpoint | None = None, rrs_level: int = 0,
                log_path: str | None = None,
                checkpoint_path: str | None = None) -> TrainResult:
    """Run ``train_cfg.iterations`` updates over the given cases.

    Exactly one of ``unet_cfg`` (fresh start) or ``start`` (resume /
    fine-tune) selects the initial weights; resuming continues the step
    counter and Adam moments, and the per-step seeding makes N+M resumed
    iterations bit-identical to N+M uninterrupted ones.
    """
    cases = list(cases)
    if not cases:
        raise InputError("training needs at least one case")
    if (start is None) == (unet_cfg is None):
        raise ConfigError("pass exactly one of unet_cfg or start")
    if start is not None:
        if start.rrs_level != rrs_level:
            raise ContractError(
                f"checkpoint is for refinement level {start.rrs_level}, not {rrs_level}"
            )
        net = network_from_checkpoint(start)
        m = {k: a.copy() for k, a in start.adam_m.items()}
        v = {k: a.copy() for k, a in start.adam_v.items()}
        step0 = start.step
    else:
        net = build_unet(unet_cfg, seed=train_cfg.seed)
        m, v = {}, {}
        step0 = 0
    cfg = net.config
    crop = cfg.crop_dims
    for c in cases:
        if any(s < 1 for s in c.image.shape):
            raise InputError(f"case {c.case_id} is empty")

    history: list[LossBreakdown] = []
    log_lines = []
    if log_path:
        n_sides = 0 if train_cfg.loss.use_cel else cfg.n_side_outputs
        log_lines.append("step," + ",".join(LossBreakdown.csv_header(n_sides)))

    for step in range(step0 + 1, step0 + train_cfg.iterations + 1):
        rng = _iteration_rng(train_cfg.seed, rrs_level, step)
        case = cases[int(rng.integers(len(cases)))]
        img, msk = sample_crop(case, crop, train_cfg.fg_crop_bias, rng)
        if train_cfg.augment is not None:
            aug = replace(train_cfg.augment, seed=int(rng.integers(2 ** 63)))
            vol_a, msk_a = augment(Volume(img, case.spacing), BinaryMask(msk, case.spacing), aug)
            img, msk = vol_a.data, msk_a.data

        net.zero_grad()
        outputs = net.forward(img.astype(np.float32))
        target = msk.astype(np.float32)[None, None]
        total, breakdown = composite_loss(outputs, target, net.params, train_cfg.loss)
        if not np.isfinite(breakdown.total):
            raise TrainingError(f"non-finite loss {breakdown.total} at step {step}")
        total.backward()
        grads = {k: t.grad for k, t in net.params.items() if t.grad is not None}
        adam_step(net.params, grads, m, v, step, train_cfg)

        history.append(breakdown)
        if log_path:
            row = ",".join(f"{x:.6g}" for x in breakdown.csv_row())
            log_lines.append(f"{step},{row}")
        if (checkpoint_path and train_cfg.checkpoint_every
                and step % train_cfg.checkpoint_every == 0):
            save_checkpoint(checkpoint_path,
                            checkpoint_from_network(net, m, v, step, rrs_level))

    final = checkpoint_from_network(net, m, v, step0 + train_cfg.iterations, rrs_level)
    if checkpoint_path:
        save_checkpoint(checkpoint_path, final)
    if log_path:
        atomic_write_text(log_path, "\n".join(log_lines) + "\n")
    return TrainResult(checkpoint=final, history=history)


# ---------------------------------------------------------------------------
# Recursive refinement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RRSConfig:
    """Refinement schedule: how many extra levels, and how gently to tune.

    Each level fine-tunes a copy of the previous level's weights for
    ``iterations_per_level`` steps at ``lr_scale`` times the base
    learning rate, on inputs joined with the previous level's
    predictions.  ``join`` names the combination rule; elementwise
    summation is the only one implemented.
    """

    levels: int = 2
    iterations_per_level: int = 500
    lr_scale: float = 0.1
    join: str = "sum"
    tiling: TilingConfig = field(default_factory=TilingConfig)

    def __post_init__(self):
        if self.levels < 0:
            raise ConfigError(f"levels must be >= 0, got {self.levels}")
        if self.iterations_per_level < 0:
            raise ConfigError(f"iterations_per_level must be >= 0, got {self.iterations_per_level}")
        if self.lr_scale <= 0:
            raise ConfigError(f"lr_scale must be > 0, got {self.lr_scale}")
        if self.join != "sum":
            raise ConfigError(f"unsupported join mode {self.join!r}")


def joined_cases(chain, cases, tiling: TilingConfig) -> list[Case]:
    """Inputs for the next refinement level: normalized image + last prediction.

    ``cases`` must hold the *normalized* images of level 0.  Predictions
    are rebuilt level by level exactly as ``predict_volume`` chains them.
    """
    nets = [network_from_checkpoint(c) for c in chain]
    out = []
    for case in cases:
        base = Volume(case.image, case.spacing)
        x = base
        for net in nets:
            prob, _ = sliding_window_predict(net, x, tiling)
            x = Volume(base.data + prob.data, case.spacing)
        out.append(Case(case_id=case.case_id, image=x.data, mask=case.mask,
                        spacing=case.spacing))
    return out


def rrs_level(chain, cases, rrs_cfg: RRSConfig, train_cfg: TrainConfig,
              log_path: str | None = None,
              checkpoint_path: str | None = None) -> TrainResult:
    """Train refinement level ``len(chain)`` on top of an existing chain.

    ``chain`` holds the checkpoints for levels 0..k-1 in order; the new
    level starts from the level k-1 weights with fresh optimizer state
    and a scaled-down learning rate.  Zero iterations reproduce the
    previous level's parameters bit for bit at the new level index.
    """
    chain = list(chain)
    if not chain:
        raise ContractError("refinement needs the level-0 checkpoint")
    for lvl, c in enumerate(chain):
        if c.rrs_level != lvl:
            raise ContractError(
                f"chain position {lvl} holds a level-{c.rrs_level} checkpoint"
            )
    k = len(chain)
    prev = chain[-1]
    tuned = replace(train_cfg,
                    learning_rate=train_cfg.learning_rate * rrs_cfg.lr_scale,
                    iterations=rrs_cfg.iterations_per_level)
    start = Checkpoint(config=prev.config,
                       params={n: a.copy() for n, a in prev.params.items()},
                       step=0, rrs_level=k)
    level_cases = joined_cases(chain, cases, rrs_cfg.tiling)
    return train_cases(level_cases, tuned, start=start, rrs_level=k,
                       log_path=log_path, checkpoint_path=checkpoint_path)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

def write_manifest(path: str, records: list[dict]) -> None:
    """Records need ``id``, ``split``, ``image``, ``mask`` (paths relative
    to the manifest) and may carry extras such as ``seed``."""
    payload = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "cases": records}
    atomic_write_text(path, json.dumps(payload, indent=1) + "\n")


def read_manifest(path: str) -> list[dict]:
    with open(path, "r", encoding="ascii") as f:
        data = json.load(f)
    if data.get("format") != MANIFEST_FORMAT:
        raise InputError(f"bad manifest format tag: {data.get('format')!r}")
    if data.get("version") != MANIFEST_VERSION:
        raise InputError(f"unsupported manifest version: {data.get('version')!r}")
    return list(data["cases"])


def load_cases(manifest_path: str, split: str = "train",
               normalize: bool = True) -> list[Case]:
    """Load and normalize every case of one split listed in a manifest."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for rec in read_manifest(manifest_path):
        if rec.get("split") != split:
            continue
        image = volcore.load(os.path.join(base, rec["image"]))
        mask = volcore.load(os.path.join(base, rec["mask"]))
        if not isinstance(image, Volume) or not isinstance(mask, BinaryMask):
            raise InputError(f"case {rec['id']}: expected a f32 image and a u8 mask")
        out.append(case_from_grids(rec["id"], image, mask, normalize=normalize))
    if not out:
        raise InputError(f"manifest {manifest_path} has no cases in split {split!r}")
    return out
