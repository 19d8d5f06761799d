"""Miniature volumetric U-Net with dense side supervision and a threshold head.

The encoder halves resolution per stage and doubles channels; the decoder
mirrors it with nearest-neighbor upsampling, a 1x1x1 channel reduction and
an additive skip merge.  Besides the main sigmoid output the network
exposes a per-voxel threshold map (a parallel 1x1x1 head on the final
features) and one auxiliary sigmoid output per tapped stage, each brought
to full resolution by nearest-neighbor upsampling.  Auxiliary taps cover
the first three encoder stages and the last two decoder stages (fewer on
shallower configurations).

Parameters live in a flat name -> Tensor mapping; names are stable and
ordered, which makes optimizer state, checkpoints and per-layer learning
rate patterns straightforward.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, FormatError, ShapeError, TruncationError
from .volcore import atomic_write_bytes, atomic_write_text

CHECKPOINT_FORMAT = "voxseg-checkpoint"
CHECKPOINT_VERSION = 1

# bias of the main logit head at initialization; biases fresh nets toward background
_LOGIT_BIAS0 = -1.0


@dataclass(frozen=True)
class UNetConfig:
    """Architecture hyperparameters.

    ``crop_dims`` is the (x, y, z) training crop; every entry must be
    divisible by ``2**(levels - 1)`` so pooling stays exact.
    """

    levels: int = 3
    base_channels: int = 8
    in_channels: int = 1
    crop_dims: tuple[int, int, int] = (32, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "crop_dims", tuple(int(c) for c in self.crop_dims))
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if len(self.crop_dims) != 3 or any(c < 1 for c in self.crop_dims):
            raise ConfigError(f"crop_dims must be three positive ints, got {self.crop_dims}")
        f = 2 ** (self.levels - 1)
        if any(c % f for c in self.crop_dims):
            raise ConfigError(
                f"crop_dims {self.crop_dims} must be divisible by {f} (levels={self.levels})"
            )

    def channels(self, stage: int) -> int:
        return self.base_channels * 2 ** (stage - 1)

    @property
    def encoder_taps(self) -> tuple[int, ...]:
        return tuple(range(1, min(3, self.levels) + 1))

    @property
    def decoder_taps(self) -> tuple[int, ...]:
        n = min(2, self.levels - 1)
        return tuple(range(self.levels - 1, self.levels - 1 - n, -1))

    @property
    def n_side_outputs(self) -> int:
        return len(self.encoder_taps) + len(self.decoder_taps)

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "base_channels": self.base_channels,
            "in_channels": self.in_channels,
            "crop_dims": list(self.crop_dims),
        }

    @staticmethod
    def from_dict(d: dict) -> "UNetConfig":
        known = {"levels", "base_channels", "in_channels", "crop_dims"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown UNetConfig keys: {sorted(extra)}")
        kw = dict(d)
        if "crop_dims" in kw:
            kw["crop_dims"] = tuple(kw["crop_dims"])
        return UNetConfig(**kw)


def parameter_specs(cfg: UNetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs for every learnable tensor.

    The order is fixed and defines both the seeded initialization stream
    and the checkpoint payload layout.
    """
    specs: list[tuple[str, tuple[int, ...]]] = []

    def conv(name, cin, cout, k):
        specs.append((f"{name}.w", (cout, cin, k, k, k)))
        specs.append((f"{name}.b", (cout,)))

    for i in range(1, cfg.levels + 1):
        cin = cfg.in_channels if i == 1 else cfg.channels(i - 1)
        conv(f"enc{i}.conv1", cin, cfg.channels(i), 3)
        conv(f"enc{i}.conv2", cfg.channels(i), cfg.channels(i), 3)
    for i in range(cfg.levels - 1, 0, -1):
        conv(f"dec{i}.reduce", cfg.channels(i + 1), cfg.channels(i), 1)
        conv(f"dec{i}.conv1", cfg.channels(i), cfg.channels(i), 3)
        conv(f"dec{i}.conv2", cfg.channels(i), cfg.channels(i), 3)
    conv("head.logit", cfg.channels(1), 1, 1)
    conv("head.tm", cfg.channels(1), 1, 1)
    for i in cfg.encoder_taps:
        conv(f"side.enc{i}", cfg.channels(i), 1, 1)
    for i in cfg.decoder_taps:
        conv(f"side.dec{i}", cfg.channels(i), 1, 1)
    return specs


def parameter_count(cfg: UNetConfig) -> int:
    return int(np.sum([int(np.prod(shape)) for _, shape in parameter_specs(cfg)]))


@dataclass
class NetworkOutputs:
    """Everything one supervised forward pass produces."""

    main_logit: Tensor
    main_prob: Tensor
    tm: Tensor
    side_probs: tuple[Tensor, ...]


class Network:
    """A built network: config plus its parameter tensors."""

    def __init__(self, config: UNetConfig, params: dict[str, Tensor]):
        expected = [name for name, _ in parameter_specs(config)]
        if list(params) != expected:
            raise ConfigError(
                "parameter names do not match the architecture; expected "
                f"{len(expected)} tensors starting {expected[:3]}"
            )
        for name, shape in parameter_specs(config):
            if params[name].data.shape != shape:
                raise ShapeError(
                    f"parameter {name} has shape {params[name].data.shape}, expected {shape}"
                )
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).data.dtype

    def parameter_count(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def _conv(self, x, name, pf, stride=1):
        return ad.conv3d(x, pf[f"{name}.w"], pf[f"{name}.b"], stride=stride)

    def forward(self, x, record_grad: bool = True) -> NetworkOutputs:
        """Run the network on one crop.

        ``x`` may be a (D, H, W) array, a (N, C, D, H, W) array or an
        already five-dimensional Tensor; spatial dims must match
        ``config.crop_dims`` reversed into (z, y, x) order.  With ``record_grad=False`` the
        parameters enter the graph as constants, so no backward closures
        or column caches are retained -- use this for inference.
        """
        cfg = self.config
        if isinstance(x, Tensor):
            xt = x
        else:
            arr = np.asarray(x, dtype=self.dtype)
            if arr.ndim == 3:
                arr = arr[None, None]
            xt = Tensor(arr)
        if xt.data.ndim != 5:
            raise ShapeError(
                f"forward needs a 5-dim (N, C, D, H, W) input at this point, got shape "
                f"{xt.data.shape}; plain 3-dim arrays are promoted, Tensors are not"
            )
        expect = tuple(cfg.crop_dims[::-1])
        if xt.data.shape[1] != cfg.in_channels or xt.data.shape[2:] != expect:
            raise ShapeError(
                f"forward expects (N, {cfg.in_channels}, {expect[0]}, {expect[1]}, "
                f"{expect[2]}), got {xt.data.shape}"
            )
        pf = self.params if record_grad else {k: Tensor(t.data) for k, t in self.params.items()}

        enc_feats = []
        feats = xt
        for i in range(1, cfg.levels + 1):
            if i > 1:
                feats = ad.max_pool2(feats)
            feats = ad.relu(self._conv(feats, f"enc{i}.conv1", pf))
            feats = ad.relu(self._conv(feats, f"enc{i}.conv2", pf))
            enc_feats.append(feats)

        dec_feats = {}
        d = enc_feats[-1]
        for i in range(cfg.levels - 1, 0, -1):
            up = ad.upsample2x(d)
            red = self._conv(up, f"dec{i}.reduce", pf)
            skip = enc_feats[i - 1]
            if red.data.shape != skip.data.shape:
                raise ShapeError(
                    f"skip merge shape mismatch at stage {i}: {red.data.shape} vs {skip.data.shape}"
                )
            d = ad.relu(self._conv(ad.add(red, skip), f"dec{i}.conv1", pf))
            d = ad.relu(self._conv(d, f"dec{i}.conv2", pf))
            dec_feats[i] = d

        main_logit = self._conv(d, "head.logit", pf)
        main_prob = ad.sigmoid(main_logit)
        tm = ad.sigmoid(self._conv(d, "head.tm", pf))

        sides = []
        for i in cfg.encoder_taps:
            t = self._conv(enc_feats[i - 1], f"side.enc{i}", pf)
            for _ in range(i - 1):
                t = ad.upsample2x(t)
            sides.append(ad.sigmoid(t))
        for i in cfg.decoder_taps:
            t = self._conv(dec_feats[i], f"side.dec{i}", pf)
            for _ in range(i - 1):
                t = ad.upsample2x(t)
            sides.append(ad.sigmoid(t))
        return NetworkOutputs(main_logit=main_logit, main_prob=main_prob,
                              tm=tm, side_probs=tuple(sides))


def build_unet(cfg: UNetConfig, seed: int = 0, dtype=np.float32) -> Network:
    """Seeded He-uniform initialization; biases start at zero except the
    main logit bias, which starts negative so fresh networks predict
    background."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    params: dict[str, Tensor] = {}
    for name, shape in parameter_specs(cfg):
        if name.endswith(".b"):
            data = np.zeros(shape, dtype=dtype)
            if name == "head.logit.b":
                data[:] = _LOGIT_BIAS0
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return Network(cfg, params)


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest + raw little-endian float32 payload
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Snapshot of a training run: parameters, optimizer moments, counters."""

    config: UNetConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    rrs_level: int = 0


def checkpoint_paths(path: str) -> tuple[str, str]:
    stem, ext = os.path.splitext(path)
    if ext not in (".json", ".bin"):
        stem = path
    return stem + ".json", stem + ".bin"


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    """Write ``<stem>.json`` (manifest) and ``<stem>.bin`` (payload) atomically."""
    json_path, bin_path = checkpoint_paths(path)
    entries = []
    chunks = []
    offset = 0
    for kind, table in (("param", ckpt.params), ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name, arr in table.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = arr.tobytes()
            entries.append({
                "name": name, "kind": kind,
                "shape": list(arr.shape), "offset": offset, "nbytes": len(raw),
            })
            chunks.append(raw)
            offset += len(raw)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": int(ckpt.step),
        "rrs_level": int(ckpt.rrs_level),
        "config": ckpt.config.to_dict(),
        "payload": os.path.basename(bin_path),
        "payload_nbytes": offset,
        "entries": entries,
    }
    atomic_write_bytes(bin_path, b"".join(chunks))
    atomic_write_text(json_path, json.dumps(manifest, indent=1) + "\n")


def load_checkpoint(path: str) -> Checkpoint:
    json_path, bin_path = checkpoint_paths(path)
    try:
        with open(json_path, "r", encoding="ascii") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"checkpoint manifest is not valid JSON: {e}") from e
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"bad checkpoint format tag: {manifest.get('format')!r}")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version: {manifest.get('version')!r}")
    cfg = UNetConfig.from_dict(manifest["config"])
    with open(bin_path, "rb") as f:
        payload = f.read()
    expect = int(manifest["payload_nbytes"])
    if len(payload) != expect:
        raise TruncationError(
            f"checkpoint payload holds {len(payload)} bytes, manifest expects {expect}"
        )
    tables = {"param": {}, "adam_m": {}, "adam_v": {}}
    for e in manifest["entries"]:
        kind = e["kind"]
        if kind not in tables:
            raise FormatError(f"unknown checkpoint entry kind {kind!r}")
        lo, hi = int(e["offset"]), int(e["offset"]) + int(e["nbytes"])
        if hi > len(payload):
            raise TruncationError(f"entry {e['name']!r} overruns the payload")
        arr = np.frombuffer(payload[lo:hi], dtype="<f4").reshape(e["shape"]).copy()
        tables[kind][e["name"]] = arr
    ckpt = Checkpoint(config=cfg, params=tables["param"], adam_m=tables["adam_m"],
                      adam_v=tables["adam_v"], step=int(manifest["step"]),
                      rrs_level=int(manifest["rrs_level"]))
    expected_names = [name for name, _ in parameter_specs(cfg)]
    if list(ckpt.params) != expected_names:
        raise FormatError("checkpoint parameter table does not match its config")
    return ckpt


def network_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> Network:
    params = {
        name: Tensor(arr.astype(dtype, copy=True), requires_grad=True, name=name)
        for name, arr in ckpt.params.items()
    }
    return Network(ckpt.config, params)


def checkpoint_from_network(net: Network, adam_m=None, adam_v=None,
                            step: int = 0, rrs_level: int = 0) -> Checkpoint:
    return Checkpoint(
        config=net.config,
        params={k: t.data.copy() for k, t in net.params.items()},
        adam_m={} if adam_m is None else {k: v.copy() for k, v in adam_m.items()},
        adam_v={} if adam_v is None else {k: v.copy() for k, v in adam_v.items()},
        step=step, rrs_level=rrs_level,
    )
