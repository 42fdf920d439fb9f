"""Configuration dataclasses and the flat ``section.key`` config file format.

A config file is a JSON object whose keys are dotted paths such as
``"window.L"`` or ``"train.lr"``.  Every key has a default; unknown keys are
rejected so typos in sweep files fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass
class WindowConfig:
    L: int = 48
    H: int = 48
    stride: int = 1


@dataclass
class PatchConfig:
    P: int = 16
    S: int = 8


@dataclass
class TransformerConfig:
    layers: int = 2
    heads: int = 4
    d_m: int = 64
    ffn_width: int = 128
    adapter_rank: int = 0
    ln_eps: float = 1e-5


@dataclass
class MixPropConfig:
    K: int = 2
    alpha: float = 0.05
    gated: bool = False


@dataclass
class SpatialFusionConfig:
    gamma: float = 0.5
    st_blocks: int = 1
    epsilon_init: float = 0.0
    tblock_channels: int = 16
    tblock_kernel: int = 2
    tblock_dilations: tuple[int, ...] = (1, 2, 4)


@dataclass
class GraphConfig:
    embed_dim: int = 8
    alpha: float = 3.0
    sigma: float | None = None
    threshold: float = 0.1
    use_incident: bool = True
    # S-Block neighbourhood: union | adaptive | incident | none
    sblock_support: str = "union"


@dataclass
class HypergraphConfig:
    k: int = 3
    mode: str = "knn"  # knn | hop
    rebuild: str = "epoch"  # epoch | batch
    normalize: bool = False


@dataclass
class ModelSwitches:
    temporal: bool = True
    force_gate: float | None = None


@dataclass
class TrainConfig:
    loss: str = "mae"
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    grad_clip: float = 5.0
    seed: int = 0
    patience: int | None = None
    train_stride: int = 1


@dataclass
class DataConfig:
    values: str | None = None
    coords: str | None = None
    edges: str | None = None
    split: tuple[float, ...] = (0.7, 0.1, 0.2)


@dataclass
class SynthConfig:
    N: int = 8
    T: int = 2048
    seed: int = 7
    rank: int = 2
    periods: tuple[float, ...] = (24.0, 168.0)
    rho: float = 0.5
    drift_at: int = 1024
    noise_std: float = 0.1
    neighbors: int = 2
    start: str = "2024-01-01T00:00:00"

    def validate(self) -> None:
        if self.N < 1 or self.T < 2:
            raise ConfigError(f"synth needs N >= 1 and T >= 2, got N={self.N}, T={self.T}")
        if not 0 <= self.rho < 1:
            raise ConfigError(f"synth.rho must lie in [0, 1) for a stable recursion, got {self.rho}")
        if not 0 < self.drift_at < self.T:
            raise ConfigError(f"synth.drift_at must lie in (0, T={self.T}), got {self.drift_at}")
        if self.rank < 1:
            raise ConfigError("synth.rank must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("synth.noise_std must be >= 0")
        if not 1 <= self.neighbors <= max(self.N - 1, 1):
            raise ConfigError(f"synth.neighbors must lie in [1, N-1], got {self.neighbors}")


@dataclass
class ModelConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    mixprop: MixPropConfig = field(default_factory=MixPropConfig)
    fusion: SpatialFusionConfig = field(default_factory=SpatialFusionConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    hypergraph: HypergraphConfig = field(default_factory=HypergraphConfig)
    model: ModelSwitches = field(default_factory=ModelSwitches)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self, n_nodes: int | None = None) -> None:
        w, p, t = self.window, self.patch, self.transformer
        _require(w.L >= 1 and w.H >= 1 and w.stride >= 1, "window.L, window.H, window.stride must be >= 1")
        _require(w.L >= 8, "window.L must be >= 8 for the statistics prompt")
        _require(1 <= p.P <= w.L, f"patch.P must lie in [1, L={w.L}]")
        _require(1 <= p.S <= p.P, "patch.S must lie in [1, patch.P]")
        _require(t.layers >= 1 and t.heads >= 1, "transformer.layers and transformer.heads must be >= 1")
        _require(t.d_m % t.heads == 0, f"transformer.d_m={t.d_m} is not divisible by heads={t.heads}")
        _require(t.ffn_width >= 1, "transformer.ffn_width must be >= 1")
        _require(t.adapter_rank >= 0, "transformer.adapter_rank must be >= 0")
        if t.adapter_rank:
            _require(
                t.adapter_rank <= min(t.d_m, t.ffn_width),
                f"transformer.adapter_rank={t.adapter_rank} exceeds min(d_m, ffn_width)",
            )
        m = self.mixprop
        _require(m.K >= 1, "mixprop.K must be >= 1")
        _require(0.0 <= m.alpha <= 1.0, "mixprop.alpha must lie in [0, 1]")
        f = self.fusion
        _require(0.0 <= f.gamma <= 1.0, f"fusion.gamma must lie in [0, 1], got {f.gamma}")
        _require(f.st_blocks >= 1, "fusion.st_blocks must be >= 1")
        _require(f.tblock_channels >= 1 and f.tblock_kernel >= 1, "T-Block channels and kernel must be >= 1")
        _require(len(f.tblock_dilations) >= 1 and all(d >= 1 for d in f.tblock_dilations),
                 "fusion.tblock_dilations must be a non-empty list of positive ints")
        for d in f.tblock_dilations:
            _require((f.tblock_kernel - 1) * d < w.L,
                     f"T-Block kernel {f.tblock_kernel} with dilation {d} exceeds window length {w.L}")
        g = self.graph
        _require(g.embed_dim >= 1 and g.alpha > 0, "graph.embed_dim >= 1 and graph.alpha > 0 required")
        _require(0.0 <= g.threshold < 1.0, "graph.threshold must lie in [0, 1)")
        _require(g.sigma is None or g.sigma > 0, "graph.sigma must be positive")
        _require(g.sblock_support in ("union", "adaptive", "incident", "none"),
                 f"unknown graph.sblock_support {g.sblock_support!r}")
        h = self.hypergraph
        _require(h.k >= 2, "hypergraph.k must be >= 2")
        _require(h.mode in ("knn", "hop"), f"unknown hypergraph.mode {h.mode!r}")
        _require(h.rebuild in ("epoch", "batch"), f"unknown hypergraph.rebuild {h.rebuild!r}")
        if n_nodes is not None and h.mode == "knn":
            _require(h.k <= n_nodes, f"hypergraph.k={h.k} exceeds node count {n_nodes}")
        fg = self.model.force_gate
        _require(fg is None or 0.0 <= fg <= 1.0, "model.force_gate must lie in [0, 1]")
        tr = self.train
        _require(tr.loss in ("mae", "mse"), f"unknown train.loss {tr.loss!r}")
        _require(tr.lr > 0 and tr.epochs >= 1 and tr.batch_size >= 1, "train.lr, epochs, batch_size must be positive")
        _require(tr.grad_clip > 0, "train.grad_clip must be positive")
        _require(tr.train_stride >= 1, "train.train_stride must be >= 1")

    # ------------------------------------------------------------ flat form

    def to_flat(self) -> dict[str, Any]:
        flat = {}
        for sec in dataclasses.fields(self):
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                v = getattr(obj, f.name)
                flat[f"{sec.name}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return flat

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> ModelConfig:
        cfg = cls()
        cfg.update(flat)
        return cfg

    def update(self, flat: dict[str, Any]) -> ModelConfig:
        sections = {f.name: f for f in dataclasses.fields(self)}
        for key, value in flat.items():
            sec_name, _, name = key.partition(".")
            if sec_name not in sections or not name:
                raise ConfigError(f"unknown config key {key!r}")
            obj = getattr(self, sec_name)
            fields = {f.name: f for f in dataclasses.fields(obj)}
            if name not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(obj, name, _coerce(key, value, getattr(type(obj)(), name)))
        return self

    def copy(self) -> ModelConfig:
        return ModelConfig.from_flat(self.to_flat())


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} expects a list, got {value!r}")
        return tuple(value)
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    return value


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object of dotted keys")
    return ModelConfig.from_flat(raw)


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_flat(), indent=2) + "\n", encoding="utf-8")
