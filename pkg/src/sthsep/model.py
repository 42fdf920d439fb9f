"""Full network: graph parameters, both branches, gated fusion and checkpoints."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .config import ModelConfig
from .errors import CheckpointError, ShapeError
from .graphs import (
    Hypergraph,
    adaptive_adjacency,
    gaussian_incident,
    hop_hyperedges,
    hyperedge_features,
    incidence,
    knn_hyperedges,
)
from .spatial import SpatialSupports, init_spatial_params, spatial_branch
from .temporal import init_temporal_params, temporal_branch

MAGIC = "STHSEP1"


@dataclass
class FusionTensors:
    O1: Tensor | None
    O2: Tensor
    gate: Tensor | None
    O_tilde: Tensor


def gated_fusion(O1, O2, W=None, b=None, force_gate: float | None = None):
    """Gate = sigmoid(FFN([O1, O2])); fused = O1 * Gate + O2 * (1 - Gate).

    Inputs are (B, H, N) or (H, N).  The FFN is shared across nodes and maps
    the concatenated 2H horizon vector of each node to H gate values.
    ``force_gate`` replaces the learned gate with a constant.
    """
    O1, O2 = ad.as_tensor(O1), ad.as_tensor(O2)
    if O1.shape != O2.shape:
        raise ShapeError("gated_fusion", O1.shape, O2.shape)
    if force_gate is not None:
        gate = Tensor(np.full(O1.shape, float(force_gate)))
        if force_gate == 1.0:
            return O1, gate
        if force_gate == 0.0:
            return O2, gate
        return O1 * gate + O2 * (1.0 - gate), gate
    squeeze = O1.ndim == 2
    if squeeze:
        O1, O2 = O1.reshape(1, *O1.shape), O2.reshape(1, *O2.shape)
    cat = ad.concat([O1.transpose(0, 2, 1), O2.transpose(0, 2, 1)], axis=-1)  # (B, N, 2H)
    gate = ad.sigmoid(cat @ W + b).transpose(0, 2, 1)
    fused = O1 * gate + O2 * (1.0 - gate)
    if squeeze:
        return fused.reshape(fused.shape[1:]), gate.reshape(gate.shape[1:])
    return fused, gate


def _uniform(rng: np.random.Generator):
    def draw(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)
    return draw


class STHSepNet:
    """Spatio-temporal forecaster over ``n_nodes`` series.

    ``distances`` (N, N) feed the distance-kernel support; without them the
    adaptive supports stand alone.
    """

    def __init__(self, cfg: ModelConfig, n_nodes: int, distances: np.ndarray | None = None):
        cfg.validate(n_nodes)
        self.cfg = cfg
        self.N = n_nodes
        self.store = ParamStore()
        rng = np.random.default_rng(cfg.train.seed)
        uniform = _uniform(rng)
        g = cfg.graph
        d = g.embed_dim
        for name in ("E1", "E2", "E3"):
            self.store.add(f"graph.{name}", uniform((n_nodes, d), 1))
        self.store.add("graph.adj.W", uniform((d, n_nodes), d))
        self.store.add("graph.adj.b", uniform((n_nodes,), d))
        self.store.add("graph.hyp.W", uniform((d, d), d))
        self.store.add("graph.hyp.b", uniform((d,), d))
        init_temporal_params(self.store, cfg, rng, uniform)
        init_spatial_params(self.store, cfg, rng, uniform)
        H = cfg.window.H
        self.store.add("fusion.gate.W", uniform((2 * H, H), 2 * H))
        self.store.add("fusion.gate.b", uniform((H,), 2 * H))
        self.distances = distances
        self.incident = None
        if distances is not None and g.use_incident:
            self.incident = gaussian_incident(distances, g.sigma, g.threshold)

    # ------------------------------------------------------------ graphs

    def adaptive_adjacency(self) -> Tensor:
        s = self.store
        return adaptive_adjacency(s["graph.E1"], s["graph.E2"], s["graph.adj.W"], s["graph.adj.b"],
                                  self.cfg.graph.alpha)

    def hyperedge_features(self) -> np.ndarray:
        s = self.store
        return hyperedge_features(s["graph.E3"].data, s["graph.hyp.W"].data, s["graph.hyp.b"].data,
                                  self.cfg.graph.alpha).data

    def build_hypergraph(self, A_adp: np.ndarray | None = None) -> Hypergraph:
        h = self.cfg.hypergraph
        if h.mode == "knn":
            return knn_hyperedges(self.hyperedge_features(), h.k)
        if self.incident is not None:
            support = self.incident > 0
        else:
            A = self.adaptive_adjacency().data if A_adp is None else A_adp
            support = (A > 0) | (A.T > 0)
        return hop_hyperedges(support.astype(float), h.k)

    def sblock_support(self, A_adp: np.ndarray) -> np.ndarray:
        mode = self.cfg.graph.sblock_support
        S = np.zeros((self.N, self.N), dtype=bool)
        if mode in ("union", "adaptive"):
            S |= A_adp > 0
        if mode in ("union", "incident") and self.incident is not None:
            S |= self.incident > 0
        np.fill_diagonal(S, False)
        return S.astype(float)

    def build_supports(self) -> SpatialSupports:
        """Snapshot of the discrete graph structures from the current parameters."""
        A = self.adaptive_adjacency().data
        hg = self.build_hypergraph(A)
        return SpatialSupports(incidence(hg), self.incident, self.sblock_support(A))

    # ------------------------------------------------------------ forward

    def forward(self, X, supports: SpatialSupports, force_gate: float | None = None,
                stats: np.ndarray | None = None) -> FusionTensors:
        """Windows (B, L, N) -> fused forecast (B, H, N) with branch outputs."""
        cfg = self.cfg
        X = ad.as_tensor(X)
        if X.ndim == 2:
            X = X.reshape(1, *X.shape)
        if X.shape[1:] != (cfg.window.L, self.N):
            raise ShapeError("forward", X.shape, (None, cfg.window.L, self.N))
        if force_gate is None:
            force_gate = cfg.model.force_gate
        A_adp = self.adaptive_adjacency() if cfg.fusion.gamma > 0 else None
        O2 = spatial_branch(X, A_adp, supports, self.store, cfg)
        if not cfg.model.temporal:
            return FusionTensors(None, O2, None, O2)
        if force_gate == 0.0:
            # the trend branch cannot reach the output
            return FusionTensors(None, O2, Tensor(np.zeros(O2.shape)), O2)
        O1 = temporal_branch(X, self.store, cfg, stats=stats)
        fused, gate = gated_fusion(O1, O2, self.store["fusion.gate.W"], self.store["fusion.gate.b"], force_gate)
        return FusionTensors(O1, O2, gate, fused)

    def __call__(self, X, supports: SpatialSupports, force_gate: float | None = None) -> Tensor:
        return self.forward(X, supports, force_gate).O_tilde

    def predict(self, X: np.ndarray, supports: SpatialSupports | None = None, batch_size: int = 256) -> np.ndarray:
        supports = supports or self.build_supports()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            return self(X, supports).data[0]
        return np.concatenate([self(X[i:i + batch_size], supports).data
                               for i in range(0, len(X), batch_size)])


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(store: ParamStore, cfg: ModelConfig, path) -> None:
    doc = {
        "magic": MAGIC,
        "config": cfg.to_flat(),
        "params": [
            {"name": n, "shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for n, t in store.items()
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    """Read a checkpoint; returns its config and parameter arrays."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc.msg} at char {exc.pos})") from None
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, expected {MAGIC!r}")
    if set(doc) != {"magic", "config", "params"}:
        raise CheckpointError(f"{path}: unexpected fields {sorted(doc)}")
    cfg = ModelConfig.from_flat(doc["config"])
    state = {}
    for p in doc["params"]:
        shape = tuple(p["shape"])
        data = np.asarray(p["data"], dtype=np.float64)
        if data.size != math.prod(shape):
            raise CheckpointError(f"{path}: parameter {p['name']!r} has {data.size} values for shape {shape}")
        state[p["name"]] = data.reshape(shape)
    return cfg, state


def apply_state(store: ParamStore, state: dict[str, np.ndarray]) -> None:
    missing = [n for n in store if n not in state]
    extra = [n for n in state if n not in store]
    if missing or extra:
        raise CheckpointError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, value in state.items():
        if value.shape != store[name].shape:
            raise CheckpointError(
                f"parameter {name!r}: checkpoint shape {value.shape} != model shape {store[name].shape}"
            )
    store.load_state(state)


def model_from_checkpoint(path, distances: np.ndarray | None = None) -> STHSepNet:
    cfg, state = load_checkpoint(path)
    n = state["graph.E1"].shape[0] if "graph.E1" in state else None
    if n is None:
        raise CheckpointError(f"{path}: no graph.E1 parameter")
    model = STHSepNet(cfg, n, distances)
    apply_state(model.store, state)
    return model
