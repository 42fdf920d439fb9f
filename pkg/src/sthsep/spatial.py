"""Spatial branch: MixProp, adaptive GCN, hypergraph convolution, S/T blocks.

Node features use the layout (B, N, C): batch, node, feature.  The ST stack
works on (B, N, T, C) so the temporal convolution runs along axis -2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .config import MixPropConfig, ModelConfig
from .errors import ConfigError, ShapeError
from .graphs import IncidenceMatrix, normalize_adjacency


def _propagate(A_hat, X: Tensor) -> Tensor:
    return ad.einsum("nm,bmc->bnc", A_hat, X)


def mixprop(X, A_hat, cfg: MixPropConfig, W_g=None) -> Tensor:
    """K chained propagation steps with a residual (or gated) mix.

    ``A_hat`` must already be normalised.  ``X`` is (B, N, C) or (N, C).
    Ungated: X <- alpha X + (1 - alpha) A_hat X.
    Gated:   G = sigmoid(X W_g);  X <- G * X + (1 - G) * A_hat X.
    """
    X = ad.as_tensor(X)
    squeeze = X.ndim == 2
    if squeeze:
        X = X.reshape(1, *X.shape)
    n = A_hat.shape[0]
    if A_hat.ndim != 2 or A_hat.shape[1] != n or X.shape[1] != n:
        raise ShapeError("mixprop", A_hat.shape, X.shape)
    if cfg.gated and W_g is None:
        raise ConfigError("gated mixprop needs a gate weight W_g")
    for _ in range(cfg.K):
        prop = _propagate(A_hat, X)
        if cfg.gated:
            G = ad.sigmoid(X @ W_g)
            X = G * X + (1.0 - G) * prop
        else:
            X = cfg.alpha * X + (1.0 - cfg.alpha) * prop
    return X.reshape(X.shape[1:]) if squeeze else X


def adaptive_gcn(X, A_adp, A_incident=None, cfg: MixPropConfig | None = None, gates=(None, None, None)) -> Tensor:
    """Sum of MixProp over the adaptive support, its transpose, and (optionally) the incident support.

    Every support is normalised here; ``A_incident`` may be raw.
    """
    cfg = cfg or MixPropConfig()
    A_adp = ad.as_tensor(A_adp)
    out = mixprop(X, normalize_adjacency(A_adp), cfg, gates[0])
    out = out + mixprop(X, normalize_adjacency(A_adp.T), cfg, gates[1])
    if A_incident is not None:
        out = out + mixprop(X, normalize_adjacency(A_incident), cfg, gates[2])
    return out


def hypergraph_conv(X, H: IncidenceMatrix, W, enc_W=None, enc_b=None, normalize: bool = False) -> Tensor:
    """Node -> hyperedge -> node aggregation.

    X_enc = X enc_W + enc_b (identity when ``enc_W`` is None);
    X_e = ReLU(sum_{i in e} X_enc[i] W);  X_v = sum_{e containing v} X_e.
    With ``normalize`` the two sums become means over members / incident edges.
    """
    X = ad.as_tensor(X)
    Hm = H.matrix
    if X.shape[-2] != Hm.shape[0]:
        raise ShapeError("hypergraph_conv", X.shape, Hm.shape)
    Xenc = X if enc_W is None else X @ enc_W
    if enc_b is not None:
        Xenc = Xenc + enc_b
    to_edge, to_node = Hm, Hm
    if normalize:
        to_edge = Hm / np.maximum(Hm.sum(axis=0, keepdims=True), 1.0)
        to_node = Hm / np.maximum(Hm.sum(axis=1, keepdims=True), 1.0)
    squeeze = Xenc.ndim == 2
    if squeeze:
        Xenc = Xenc.reshape(1, *Xenc.shape)
    Xe = ad.relu(ad.einsum("nm,bnc->bmc", to_edge, Xenc) @ W)
    Xv = ad.einsum("nm,bmc->bnc", to_node, Xe)
    return Xv.reshape(Xv.shape[1:]) if squeeze else Xv


def spatial_fuse(X_gcn, X_hgcn, gamma: float) -> Tensor:
    """gamma * X_gcn + (1 - gamma) * X_hgcn; the endpoints return a branch untouched."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 1.0:
        return ad.as_tensor(X_gcn)
    if gamma == 0.0:
        return ad.as_tensor(X_hgcn)
    X_gcn, X_hgcn = ad.as_tensor(X_gcn), ad.as_tensor(X_hgcn)
    if X_gcn.shape != X_hgcn.shape:
        raise ShapeError("spatial_fuse", X_gcn.shape, X_hgcn.shape)
    return gamma * X_gcn + (1.0 - gamma) * X_hgcn


def s_block(h, support: np.ndarray, epsilon) -> Tensor:
    """ReLU((1 + eps) h[v] + sum_{u in N(v)} h[u]) applied independently at every step.

    ``h`` is (B, N, T, C) or (N, C); ``support[v, u] = 1`` marks u as a neighbour of v
    (the diagonal is ignored).
    """
    h = ad.as_tensor(h)
    S = np.asarray(support, dtype=np.float64).copy()
    node_axis = 1 if h.ndim == 4 else 0
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] != h.shape[node_axis]:
        raise ShapeError("s_block", S.shape, h.shape)
    np.fill_diagonal(S, 0.0)
    if h.ndim == 4:
        m = ad.einsum("vu,butc->bvtc", S, h)
    else:
        m = ad.einsum("vu,uc->vc", S, h)
    return ad.relu((1.0 + ad.as_tensor(epsilon)) * h + m)


def t_block(chi, convs, dilations) -> Tensor:
    """Gated dilated causal convolution stack: tanh(q) * sigmoid(q).

    ``chi`` is (..., T, C); ``convs`` is a list of (W, b) with W of shape
    (kernel, C_in, C_out), one per dilation, applied in sequence.
    """
    q = ad.as_tensor(chi)
    if len(convs) != len(dilations):
        raise ConfigError("one convolution per dilation required")
    for (W, b), d in zip(convs, dilations):
        if (W.shape[0] - 1) * d >= q.shape[-2]:
            raise ConfigError(f"kernel {W.shape[0]} with dilation {d} exceeds length {q.shape[-2]}")
        q = ad.conv1d_causal(q, W, b, dilation=d)
    return ad.tanh(q) * ad.sigmoid(q)


# ---------------------------------------------------------------- branch assembly

@dataclass
class SpatialSupports:
    """Non-learned inputs to the spatial branch for one epoch (or batch)."""

    incidence: IncidenceMatrix | None
    incident: np.ndarray | None  # raw distance-kernel adjacency
    sblock: np.ndarray  # binary (N, N)


def init_spatial_params(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator, uniform) -> None:
    L, H = cfg.window.L, cfg.window.H
    f = cfg.fusion
    C = L
    Ch = f.tblock_channels
    for j in range(3):
        if cfg.mixprop.gated:
            store.add(f"spatial.mix{j}.Wg", uniform((C, C), C))
    store.add("spatial.hgcn.enc.W", uniform((C, C), C))
    store.add("spatial.hgcn.enc.b", uniform((C,), C))
    store.add("spatial.hgcn.W", uniform((C, C), C))
    store.add("spatial.in.W", uniform((1, Ch), 1))
    store.add("spatial.in.b", uniform((Ch,), 1))
    for i in range(f.st_blocks):
        store.add(f"spatial.st{i}.eps", np.array(f.epsilon_init))
        for j, _ in enumerate(f.tblock_dilations):
            fan = f.tblock_kernel * Ch
            store.add(f"spatial.st{i}.conv{j}.W", uniform((f.tblock_kernel, Ch, Ch), fan))
            store.add(f"spatial.st{i}.conv{j}.b", uniform((Ch,), fan))
    store.add("spatial.head.W", uniform((L * Ch, H), L * Ch))
    store.add("spatial.head.b", uniform((H,), L * Ch))


def spatial_branch(X, A_adp, supports: SpatialSupports, store: ParamStore, cfg: ModelConfig) -> Tensor:
    """Window (B, L, N) -> O2 (B, H, N).

    Fusion of adaptive-GCN and hypergraph outputs over the window features,
    then ``st_blocks`` residual S-Block/T-Block pairs, then a per-node linear
    head from the (L, channels) block to H steps.
    """
    X = ad.as_tensor(X)
    B, L, N = X.shape
    f = cfg.fusion
    Xn = X.transpose(0, 2, 1)  # (B, N, L)
    X_gcn = X_hgcn = None
    if f.gamma > 0.0:
        gates = tuple(store[f"spatial.mix{j}.Wg"] if cfg.mixprop.gated else None for j in range(3))
        incident = supports.incident if cfg.graph.use_incident else None
        X_gcn = adaptive_gcn(Xn, A_adp, incident, cfg.mixprop, gates)
    if f.gamma < 1.0:
        if supports.incidence is None:
            raise ConfigError("gamma < 1 needs a hypergraph incidence matrix")
        X_hgcn = hypergraph_conv(
            Xn, supports.incidence, store["spatial.hgcn.W"],
            store["spatial.hgcn.enc.W"], store["spatial.hgcn.enc.b"], cfg.hypergraph.normalize,
        )
    Xs = spatial_fuse(X_gcn, X_hgcn, f.gamma)  # (B, N, L)
    x = Xs.reshape(B, N, L, 1) @ store["spatial.in.W"] + store["spatial.in.b"]  # (B, N, L, Ch)
    for i in range(f.st_blocks):
        h = s_block(x, supports.sblock, store[f"spatial.st{i}.eps"])
        convs = [
            (store[f"spatial.st{i}.conv{j}.W"], store[f"spatial.st{i}.conv{j}.b"])
            for j in range(len(f.tblock_dilations))
        ]
        x = x + t_block(h, convs, f.tblock_dilations)
    out = x.reshape(B, N, L * f.tblock_channels) @ store["spatial.head.W"] + store["spatial.head.b"]
    return out.transpose(0, 2, 1)
