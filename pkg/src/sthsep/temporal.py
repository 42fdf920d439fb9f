"""Global-trend branch: node pooling, patching, statistics prefix, causal transformer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .config import ModelConfig, TransformerConfig
from .errors import ConfigError

N_STATS = 9
N_LAGS = 5
_MASK = -1e30


@dataclass(frozen=True)
class PatchSpec:
    P: int
    S: int
    d_m: int = 64

    def __post_init__(self):
        if self.P < 1 or not 1 <= self.S <= self.P:
            raise ConfigError(f"need P >= 1 and 1 <= S <= P, got P={self.P}, S={self.S}")

    def count(self, T: int) -> int:
        """Number of patches after padding the series end by S copies of its last value."""
        if self.P > T:
            raise ConfigError(f"patch length P={self.P} exceeds series length {T}")
        return (T + self.S - self.P) // self.S + 1


@dataclass(frozen=True)
class PromptStats:
    min: float
    max: float
    median: float
    slope_sign: int
    top_lags: tuple[int, ...]

    def vector(self, L: int) -> np.ndarray:
        return np.array([self.min, self.max, self.median, float(self.slope_sign),
                         *(lag / L for lag in self.top_lags)])


class TemporalBackbone(Protocol):
    """Maps a token sequence (B, S, d_m) to representations of the same shape."""

    def __call__(self, tokens: Tensor) -> Tensor: ...


def avg_pool_nodes(X, axis: int = 1) -> Tensor:
    """Mean over the node axis: (B, N, T, F) -> (B, T, F) with the default axis."""
    return ad.mean(X, axis=axis)


def patch_index(T: int, spec: PatchSpec) -> np.ndarray:
    n = spec.count(T)
    return np.arange(n)[:, None] * spec.S + np.arange(spec.P)[None, :]


def patchify(x, spec: PatchSpec) -> Tensor:
    """(..., T) series -> (..., N_P, P) patches starting at 0, S, 2S, ...

    The end is padded with S copies of the last value, which gives
    (T - P) / S + 2 patches whenever S divides T - P.
    """
    x = ad.as_tensor(x)
    T = x.shape[-1]
    idx = patch_index(T, spec)
    last = x[..., T - 1:T]
    padded = ad.concat([x, ad.broadcast_to(last, x.shape[:-1] + (spec.S,))], axis=-1)
    return padded[..., idx]


def circular_autocorrelation(x: np.ndarray) -> np.ndarray:
    """Circular autocorrelation normalised by lag 0 (zeros for a constant series)."""
    xc = x - x.mean()
    f = np.fft.rfft(xc)
    acf = np.fft.irfft(f * np.conj(f), n=len(x))
    if acf[0] <= 1e-12 * max(1.0, float(np.abs(x).max(initial=0.0))) ** 2:
        return np.zeros_like(acf)
    return acf / acf[0]


def prompt_stats(window) -> PromptStats:
    """Min, max, median, least-squares trend sign and the five strongest lags.

    Lags come from the circular autocorrelation and are ordered by decreasing
    magnitude; magnitudes within 1e-9 count as tied and the smaller lag wins.
    """
    x = np.asarray(window, dtype=np.float64).reshape(-1)
    L = len(x)
    if L < 8:
        raise ConfigError(f"prompt statistics need a window of at least 8 steps, got {L}")
    t = np.arange(L) - (L - 1) / 2.0
    slope = float(t @ (x - x.mean()) / (t @ t))
    sign = 0 if abs(slope) < 1e-9 else (1 if slope > 0 else -1)
    mag = np.abs(circular_autocorrelation(x))[1:L]
    mag = np.round(mag, 9)
    lags = np.arange(1, L)
    order = np.lexsort((lags, -mag))[:N_LAGS]
    return PromptStats(float(x.min()), float(x.max()), float(np.median(x)), sign,
                       tuple(int(v) for v in lags[order]))


def stats_matrix(pooled: np.ndarray) -> np.ndarray:
    """Prompt vectors for a batch of pooled windows (B, L) -> (B, 9)."""
    L = pooled.shape[-1]
    return np.stack([prompt_stats(row).vector(L) for row in pooled])


def embed_inputs(patches, stats, W_patch, b_patch, W_stats, b_stats, pos) -> Tensor:
    """Prefix token from the statistics followed by one token per patch, plus positions.

    ``patches`` (B, N_P, P), ``stats`` (B, 9) -> (B, 1 + N_P, d_m).
    """
    patches, stats = ad.as_tensor(patches), ad.as_tensor(stats)
    tok = patches @ W_patch + b_patch
    prefix = stats @ W_stats + b_stats
    prefix = prefix.reshape(prefix.shape[0], 1, prefix.shape[1])
    return ad.concat([prefix, tok], axis=1) + pos


def causal_mask(S: int) -> np.ndarray:
    return np.triu(np.full((S, S), _MASK), k=1)


def lora_adapt(W, A=None, B=None) -> Tensor:
    """Effective weight W + A @ B (A: in x r, B: r x out); plain W without adapters."""
    if A is None:
        return ad.as_tensor(W)
    return W + A @ B


def layer_params(store: ParamStore, l: int, cfg: TransformerConfig) -> dict:
    p = f"temporal.layer{l}."
    names = ["Wq", "Wk", "Wv", "Wo", "ln1.g", "ln1.b", "ffn.W1", "ffn.b1", "ffn.W2", "ffn.b2", "ln2.g", "ln2.b"]
    out = {n: store[p + n] for n in names}
    if cfg.adapter_rank:
        for w in ("W1", "W2"):
            out[f"ffn.{w}.A"] = store[f"{p}ffn.{w}.lora_A"]
            out[f"ffn.{w}.B"] = store[f"{p}ffn.{w}.lora_B"]
    return out


def transformer_layer(z: Tensor, p: dict, cfg: TransformerConfig, attn_out: list | None = None) -> Tensor:
    B, S, d = z.shape
    h = cfg.heads
    dh = d // h

    def heads(t):
        return t.reshape(B, S, h, dh).transpose(0, 2, 1, 3)

    Q, K, V = heads(z @ p["Wq"]), heads(z @ p["Wk"]), heads(z @ p["Wv"])
    scores = (Q @ K.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + causal_mask(S)
    attn = ad.softmax(scores, axis=-1)
    if attn_out is not None:
        attn_out.append(attn.data)
    ctx = (attn @ V).transpose(0, 2, 1, 3).reshape(B, S, d)
    z = ad.layer_norm(z + ctx @ p["Wo"], eps=cfg.ln_eps) * p["ln1.g"] + p["ln1.b"]
    W1 = lora_adapt(p["ffn.W1"], p.get("ffn.W1.A"), p.get("ffn.W1.B"))
    W2 = lora_adapt(p["ffn.W2"], p.get("ffn.W2.A"), p.get("ffn.W2.B"))
    ffn = ad.relu(z @ W1 + p["ffn.b1"]) @ W2 + p["ffn.b2"]
    return ad.layer_norm(z + ffn, eps=cfg.ln_eps) * p["ln2.g"] + p["ln2.b"]


def transformer_forward(z, store: ParamStore, cfg: TransformerConfig, attn_out: list | None = None) -> Tensor:
    """Stack of causal self-attention + feed-forward layers, each with post-norm residuals."""
    if cfg.d_m % cfg.heads:
        raise ConfigError(f"d_m={cfg.d_m} is not divisible by heads={cfg.heads}")
    z = ad.as_tensor(z)
    for l in range(cfg.layers):
        z = transformer_layer(z, layer_params(store, l, cfg), cfg, attn_out)
    return z


class TransformerBackbone:
    """Built-in backbone reading its weights from a ParamStore."""

    def __init__(self, store: ParamStore, cfg: TransformerConfig):
        self.store = store
        self.cfg = cfg

    def __call__(self, tokens: Tensor) -> Tensor:
        return transformer_forward(tokens, self.store, self.cfg)


def project_trend(z, W, b, n_nodes: int) -> Tensor:
    """Flatten tokens (B, S, d_m) -> linear -> (B, H), repeated across nodes -> (B, H, N)."""
    z = ad.as_tensor(z)
    B = z.shape[0]
    y = z.reshape(B, -1) @ W + b
    return ad.broadcast_to(y.reshape(B, y.shape[1], 1), (B, y.shape[1], n_nodes))


def init_temporal_params(store: ParamStore, cfg: ModelConfig, rng: np.random.Generator, uniform) -> None:
    t = cfg.transformer
    spec = PatchSpec(cfg.patch.P, cfg.patch.S, t.d_m)
    n_tok = 1 + spec.count(cfg.window.L)
    d, F = t.d_m, t.ffn_width
    store.add("temporal.patch.W", uniform((spec.P, d), spec.P))
    store.add("temporal.patch.b", uniform((d,), spec.P))
    store.add("temporal.stats.W", uniform((N_STATS, d), N_STATS))
    store.add("temporal.stats.b", uniform((d,), N_STATS))
    store.add("temporal.pos", uniform((n_tok, d), d))
    frozen = t.adapter_rank > 0
    for l in range(t.layers):
        p = f"temporal.layer{l}."
        for name in ("Wq", "Wk", "Wv", "Wo"):
            store.add(p + name, uniform((d, d), d))
        store.add(p + "ln1.g", np.ones(d))
        store.add(p + "ln1.b", np.zeros(d))
        store.add(p + "ffn.W1", uniform((d, F), d), frozen=frozen)
        store.add(p + "ffn.b1", uniform((F,), d), frozen=frozen)
        store.add(p + "ffn.W2", uniform((F, d), F), frozen=frozen)
        store.add(p + "ffn.b2", uniform((d,), F), frozen=frozen)
        store.add(p + "ln2.g", np.ones(d))
        store.add(p + "ln2.b", np.zeros(d))
        if frozen:
            r = t.adapter_rank
            store.add(p + "ffn.W1.lora_A", uniform((d, r), d))
            store.add(p + "ffn.W1.lora_B", np.zeros((r, F)))
            store.add(p + "ffn.W2.lora_A", uniform((F, r), F))
            store.add(p + "ffn.W2.lora_B", np.zeros((r, d)))
    store.add("temporal.head.W", uniform((n_tok * d, cfg.window.H), n_tok * d))
    store.add("temporal.head.b", uniform((cfg.window.H,), n_tok * d))


def temporal_branch(X, store: ParamStore, cfg: ModelConfig, backbone: TemporalBackbone | None = None,
                    stats: np.ndarray | None = None) -> Tensor:
    """Window (B, L, N) -> O1 (B, H, N), identical across nodes."""
    X = ad.as_tensor(X)
    B, L, N = X.shape
    pooled = avg_pool_nodes(X, axis=2)  # (B, L)
    if stats is None:
        stats = stats_matrix(pooled.data)
    spec = PatchSpec(cfg.patch.P, cfg.patch.S, cfg.transformer.d_m)
    z = embed_inputs(
        patchify(pooled, spec), stats,
        store["temporal.patch.W"], store["temporal.patch.b"],
        store["temporal.stats.W"], store["temporal.stats.b"], store["temporal.pos"],
    )
    backbone = backbone or TransformerBackbone(store, cfg.transformer)
    z = backbone(z)
    return project_trend(z, store["temporal.head.W"], store["temporal.head.b"], N)
