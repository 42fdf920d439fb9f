"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are pinned as module constants next to the criterion they belong to.
"""

import csv
import math
import time

import numpy as np
import pytest
from conftest import TINY, model_gradcheck, tiny_config

from sthsep import autodiff as ad
from sthsep.autodiff import GradCheckConfig, ParamStore, grad_check, grad_check_params
from sthsep.config import MixPropConfig, ModelConfig, SynthConfig
from sthsep.graphs import (
    Hypergraph,
    adaptive_adjacency,
    hop_hyperedges,
    hyperedge_features,
    incidence,
    knn_hyperedges,
    normalize_adjacency,
    theorem1_check,
)
from sthsep.harness import ABLATION_COLUMNS, DEFAULT_SWEEPS, ablate, baseline_scores, evaluate, fit, prepare
from sthsep.model import STHSepNet, _uniform, gated_fusion, model_from_checkpoint, save_checkpoint
from sthsep.spatial import (
    SpatialSupports,
    adaptive_gcn,
    hypergraph_conv,
    init_spatial_params,
    mixprop,
    s_block,
    spatial_branch,
    spatial_fuse,
    t_block,
)
from sthsep.synth import generate, synth
from sthsep.temporal import (
    PatchSpec,
    embed_inputs,
    init_temporal_params,
    layer_params,
    patch_index,
    patchify,
    project_trend,
    temporal_branch,
    transformer_layer,
)
from sthsep.train import evaluate_windows, loss, train

pytestmark = pytest.mark.acceptance

C1_GRAPHS, C1_MAX_N, C1_ORDERS, C1_BUDGET_S = 200, 8, (2, 3, 4), 10.0
C2_CASES, C2_TOL = 50, 1e-12
C3_CASES, C3_MAX_N, C3_TOL = 50, 10, 1e-12
C4_DRAWS = 100
C5_SEEDS, C5_TOL, C5_EPS = 10, 1e-4, 1e-5
C7_CASES = 200
C8_EPOCHS, C8_FRACTION, C8_BUDGET_S = 500, 0.1, 120.0
C9_EPOCHS, C9_BUDGET_S = 20, 600.0
C11_TOL = 1e-12


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} -- {detail}")
        assert ok, detail
    return emit


def _connected_graph(rng, n):
    """Random spanning tree plus extra edges with probability p."""
    A = np.zeros((n, n))
    order = rng.permutation(n)
    for i in range(1, n):
        u, v = order[i], order[rng.integers(i)]
        A[u, v] = A[v, u] = 1
    extra = np.triu(rng.random((n, n)) < rng.uniform(0, 0.5), 1)
    A = np.maximum(A, extra + extra.T)
    np.fill_diagonal(A, 0)
    return A


def _bfs_components(A):
    seen, stack = {0}, [0]
    while stack:
        u = stack.pop()
        for w in np.flatnonzero(A[u]):
            if w not in seen:
                seen.add(int(w))
                stack.append(int(w))
    return len(seen)


# ---------------------------------------------------------------- 1

def test_c01_hop_hyperedge_membership(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    failures, checks, sizes = [], 0, set()
    for g in range(C1_GRAPHS):
        n = int(rng.integers(1, C1_MAX_N + 1))
        A = _connected_graph(rng, n)
        assert _bfs_components(A) == n
        sizes.add(n)
        for k in C1_ORDERS:
            res = theorem1_check(hop_hyperedges(A, k), A, k)
            checks += 1
            if not res.passed:
                failures.append((g, k, res.counterexample))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < C1_BUDGET_S
    report(1, "k-hop neighbourhood <=> shared hyperedge", ok,
           f"{checks} graph/order checks on connected graphs with n in {sorted(sizes)}, "
           f"{len(failures)} counterexamples, {elapsed:.2f} s (budget {C1_BUDGET_S:.0f} s)")


# ---------------------------------------------------------------- 2

def _mixprop_closed_form(X, A_hat, alpha, K):
    out = np.zeros_like(X)
    for j in range(K + 1):
        out += math.comb(K, j) * alpha ** (K - j) * (1 - alpha) ** j * (np.linalg.matrix_power(A_hat, j) @ X)
    return out


def test_c02_mixprop_closed_form(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(C2_CASES):
        n, K = int(rng.integers(2, 12)), int(rng.integers(1, 5))
        alpha = float(rng.random())
        A = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
        A_hat = normalize_adjacency(A)
        X = rng.standard_normal((n, int(rng.integers(1, 6))))
        out = mixprop(X, A_hat, MixPropConfig(K=K, alpha=alpha)).data
        worst = max(worst, float(np.max(np.abs(out - _mixprop_closed_form(X, A_hat, alpha, K)))))
    report(2, "chained propagation == binomial dense expansion", worst < C2_TOL,
           f"{C2_CASES} instances, K<=4, max |diff| {worst:.2e} (tol {C2_TOL:.0e})")


# ---------------------------------------------------------------- 3

def test_c03_order_two_hypergraph_is_pairwise(report):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(C3_CASES):
        n = int(rng.integers(2, C3_MAX_N + 1))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.35] or [(0, 1)]
        C = int(rng.integers(1, 5))
        X, W = rng.standard_normal((n, C)), rng.standard_normal((C, C))
        out = hypergraph_conv(X, incidence(Hypergraph(n, tuple(edges), 2)), W).data
        ref = np.zeros_like(out)
        for i, j in edges:
            msg = np.maximum((X[i] + X[j]) @ W, 0.0)
            ref[i] += msg
            ref[j] += msg
        worst = max(worst, float(np.max(np.abs(out - ref))))
    report(3, "edge hypergraph conv == pairwise message passing", worst < C3_TOL,
           f"{C3_CASES} graphs, n<={C3_MAX_N}, max |diff| {worst:.2e} (tol {C3_TOL:.0e})")


# ---------------------------------------------------------------- 4

def test_c04_adaptive_adjacency_structure(report):
    rng = np.random.default_rng(5)
    bad = []
    for i in range(C4_DRAWS):
        n, d = int(rng.integers(2, 12)), int(rng.integers(1, 9))
        E1, E2 = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        W, b = rng.standard_normal((d, n)), rng.standard_normal(n)
        A = adaptive_adjacency(E1, E2, W, b, alpha=float(rng.uniform(0.5, 5))).data
        if np.any(np.diag(A) != 0) or np.any(A < 0) or np.any(A * A.T != 0):
            bad.append(i)
        if np.any(adaptive_adjacency(E1, E1, W, b).data != 0):
            bad.append(("shared", i))
    report(4, "adaptive adjacency: zero diagonal, nonnegative, one-sided", not bad,
           f"{C4_DRAWS} embedding draws, violations {bad or 'none'}; shared embeddings give exact zeros")


# ---------------------------------------------------------------- 5

def _gradient_cases():
    """(name, fn, shapes) for every differentiable module; shapes are drawn per seed."""
    def knn_H(seed, n):
        return incidence(knn_hyperedges(np.random.default_rng(seed).standard_normal((n, 2)), 2))

    mp = MixPropConfig(K=3, alpha=0.3)
    gated = MixPropConfig(K=2, alpha=0.3, gated=True)
    return [
        ("adaptive_adjacency", lambda e1, e2, w, b: adaptive_adjacency(e1, e2, w, b, 2.0),
         [(5, 3), (5, 3), (3, 5), (5,)]),
        ("normalize_adjacency", lambda a: normalize_adjacency(ad.square(a)), [(5, 5)]),
        ("hyperedge_features", lambda e, w, b: hyperedge_features(e, w, b, 3.0), [(4, 3), (3, 3), (3,)]),
        ("mixprop", lambda x, a: mixprop(x, normalize_adjacency(ad.square(a)), mp), [(2, 4, 3), (4, 4)]),
        ("mixprop_gated", lambda x, w: mixprop(x, np.full((4, 4), 0.25), gated, w), [(2, 4, 3), (3, 3)]),
        ("adaptive_gcn", lambda x, a, g: adaptive_gcn(x, ad.square(a), ad.square(g), mp),
         [(2, 4, 3), (4, 4), (4, 4)]),
        ("hypergraph_conv", lambda x, w, ew, eb: hypergraph_conv(x, knn_H(0, 5), w, ew, eb),
         [(2, 5, 3), (3, 3), (3, 3), (3,)]),
        ("hypergraph_conv_mean", lambda x, w: hypergraph_conv(x, knn_H(1, 5), w, normalize=True),
         [(5, 3), (3, 2)]),
        ("spatial_fuse", lambda a, b: spatial_fuse(a, b, 0.3), [(3, 4), (3, 4)]),
        ("s_block", lambda h, e: s_block(h, (np.arange(16).reshape(4, 4) % 3 == 0), e), [(2, 4, 5, 3), ()]),
        ("t_block", lambda x, w0, b0, w1, b1: t_block(x, [(w0, b0), (w1, b1)], [1, 2]),
         [(2, 3, 7, 2), (2, 2, 3), (3,), (2, 3, 3), (3,)]),
        ("patchify", lambda x: patchify(x, PatchSpec(4, 2)), [(3, 10)]),
        ("embed_inputs", embed_inputs, [(2, 3, 4), (2, 9), (4, 5), (5,), (9, 5), (5,), (4, 5)]),
        ("project_trend", lambda z, w, b: project_trend(z, w, b, 3), [(2, 3, 4), (12, 5), (5,)]),
        ("gated_fusion", lambda o1, o2, w, b: gated_fusion(o1, o2, w, b)[0], [(2, 4, 3), (2, 4, 3), (8, 4), (4,)]),
        ("loss_mae", lambda p, y: loss(p, y, "mae"), [(3, 4), (3, 4)]),
        ("loss_mse", lambda p, y: loss(p, y, "mse"), [(3, 4), (3, 4)]),
    ]


def _branch_stores(seed):
    cfg = ModelConfig().update({**TINY, "transformer.adapter_rank": 2, "fusion.gamma": 0.5})
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_spatial_params(store, cfg, rng, _uniform(rng))
    init_temporal_params(store, cfg, rng, _uniform(rng))
    # make the adapters active so their gradients are non-trivial
    for name in store.names():
        if name.endswith("lora_B"):
            store[name].data = rng.standard_normal(store[name].shape) * 0.3
    return cfg, store, rng


def _sampled(store, rng, n):
    names = store.trainable()
    return [(nm, int(rng.integers(store[nm].data.size))) for nm in (names[rng.integers(len(names))] for _ in range(n))]


def test_c05_gradient_suite(report):
    gc = GradCheckConfig(epsilon=C5_EPS, rel_tol=C5_TOL)
    worst = {}
    for seed in range(C5_SEEDS):
        rng = np.random.default_rng(1000 + seed)
        for name, fn, shapes in _gradient_cases():
            inputs = [ad.sample_away_from_kinks(rng, s, gc.exclusion_band) for s in shapes]
            rep = grad_check(fn, inputs, gc, max_coords=30, seed=seed)
            worst[name] = max(worst.get(name, 0.0), rep.max_rel_err)

        cfg, store, brng = _branch_stores(seed)
        X = brng.standard_normal((2, cfg.window.L, 4))
        A = np.abs(brng.standard_normal((4, 4)))
        np.fill_diagonal(A, 0)
        sup = SpatialSupports(incidence(knn_hyperedges(brng.standard_normal((4, 2)), 2)),
                              np.abs(brng.standard_normal((4, 4))), (A > 0.5).astype(float))
        proj = brng.standard_normal((2, cfg.window.H, 4))
        spatial_loss = lambda: (spatial_branch(X, A, sup, store, cfg) * proj).sum()  # noqa: E731
        temporal_loss = lambda: (temporal_branch(X, store, cfg) * proj).sum()  # noqa: E731
        for label, fn, prefix in (("spatial_branch", spatial_loss, "spatial."),
                                  ("temporal_branch", temporal_loss, "temporal.")):
            sub = [(n, c) for n, c in _sampled(store, brng, 60) if n.startswith(prefix)][:20]
            rep = grad_check_params(fn, store, sub, gc)
            worst[label] = max(worst.get(label, 0.0), rep.max_rel_err)
        layer = layer_params(store, 0, cfg.transformer)
        keys = ["Wq", "Wk", "Wv", "Wo", "ffn.W1.A", "ffn.W2.B", "ln2.g"]
        rep = grad_check(lambda z, *w: transformer_layer(z, {**layer, **dict(zip(keys, w))}, cfg.transformer),
                         [brng.standard_normal((1, 5, 8))] + [layer[k].data.copy() for k in keys], gc,
                         max_coords=12, seed=seed)
        worst["transformer_layer+adapters"] = max(worst.get("transformer_layer+adapters", 0.0), rep.max_rel_err)

        model = STHSepNet(tiny_config(transformer__adapter_rank=2, train__seed=seed), 4,
                          np.abs(brng.standard_normal((4, 4))) * 3)
        Xm = brng.standard_normal((3, 16, 4))
        Ym = brng.standard_normal((3, 4, 4))
        for kind in ("mse", "mae"):
            rep = model_gradcheck(model, Xm, Ym, seed, n_coords=20, kind=kind)
            worst[f"full_model_{kind}"] = max(worst.get(f"full_model_{kind}", 0.0), rep.max_rel_err)
    over = {k: v for k, v in worst.items() if not v < C5_TOL}
    top = max(worst, key=worst.get)
    report(5, "central-difference gradient checks", not over,
           f"{len(worst)} modules x {C5_SEEDS} seeds, eps={C5_EPS:.0e}; worst {top} {worst[top]:.2e} "
           f"(tol {C5_TOL:.0e}); failing {sorted(over) or 'none'}")


# ---------------------------------------------------------------- 6

def _post_fusion(Xs, sup, store, cfg, B, N, L):
    """Everything the spatial branch does after the GCN/HGCN fusion, written out by hand."""
    f = cfg.fusion
    x = Xs.reshape(B, N, L, 1) @ store["spatial.in.W"] + store["spatial.in.b"]
    for i in range(f.st_blocks):
        h = s_block(x, sup.sblock, store[f"spatial.st{i}.eps"])
        convs = [(store[f"spatial.st{i}.conv{j}.W"], store[f"spatial.st{i}.conv{j}.b"])
                 for j in range(len(f.tblock_dilations))]
        x = x + t_block(h, convs, f.tblock_dilations)
    out = x.reshape(B, N, L * f.tblock_channels) @ store["spatial.head.W"] + store["spatial.head.b"]
    return out.transpose(0, 2, 1).data


def test_c06_degeneration_chain(report):
    rng = np.random.default_rng(3)
    N = 5
    d = np.abs(rng.standard_normal((N, N))) * 4
    d = d + d.T
    X = rng.standard_normal((2, 16, N))
    checks = {}

    cfg1 = tiny_config(fusion__gamma=1.0)
    m1 = STHSepNet(cfg1, N, d)
    sup = m1.build_supports()
    A = m1.adaptive_adjacency()
    Xn = ad.as_tensor(X).transpose(0, 2, 1)
    gcn_only = _post_fusion(adaptive_gcn(Xn, A, sup.incident, cfg1.mixprop), sup, m1.store, cfg1, 2, N, 16)
    checks["gamma=1 == GCN-only"] = np.array_equal(m1.forward(X, sup, force_gate=0.0).O_tilde.data, gcn_only)

    cfg0 = tiny_config(fusion__gamma=0.0)
    m0 = STHSepNet(cfg0, N, d)
    sup0 = m0.build_supports()
    s = m0.store
    hg = hypergraph_conv(Xn, sup0.incidence, s["spatial.hgcn.W"], s["spatial.hgcn.enc.W"], s["spatial.hgcn.enc.b"])
    checks["gamma=0 == HGCN-only"] = np.array_equal(m0.forward(X, sup0, force_gate=0.0).O_tilde.data,
                                                    _post_fusion(hg, sup0, s, cfg0, 2, N, 16))

    mh = STHSepNet(tiny_config(), N, d)
    trend = temporal_branch(X, mh.store, mh.cfg).data
    checks["gate=1 == temporal-only"] = np.array_equal(mh.forward(X, mh.build_supports(), force_gate=1.0)
                                                       .O_tilde.data, trend)

    lora = STHSepNet(tiny_config(transformer__adapter_rank=3), N, d)
    for name in mh.store:
        lora.store[name].data = mh.store[name].data.copy()
    checks["adapters at init change no bit"] = np.array_equal(mh(X, mh.build_supports()).data,
                                                              lora(X, lora.build_supports()).data)
    report(6, "degeneration chain (bitwise)", all(checks.values()),
           ", ".join(f"{k}: {'ok' if v else 'MISMATCH'}" for k, v in checks.items()))


# ---------------------------------------------------------------- 7

def test_c07_patch_count_and_coverage(report):
    count = PatchSpec(16, 8).count(48)
    rng = np.random.default_rng(17)
    bad = []
    for _ in range(C7_CASES):
        P = int(rng.integers(1, 65))
        S = int(rng.integers(1, P + 1))
        T = int(rng.integers(P, 400))
        idx = patch_index(T, PatchSpec(P, S))
        if not set(range(T)) <= set(idx.ravel().tolist()) or idx.min() != 0:
            bad.append((T, P, S))
    report(7, "patch count and coverage", count == 6 and not bad,
           f"T=48, P=16, S=8 -> {count} patches (expected 6); {C7_CASES} random (T,P,S) with S<=P, "
           f"uncovered cases {bad or 'none'}")


# ---------------------------------------------------------------- 8

OVERFIT = {
    "synth.N": 4, "synth.T": 256, "synth.drift_at": 128,
    "window.L": 16, "window.H": 4, "patch.P": 8, "patch.S": 4,
    "transformer.d_m": 32, "transformer.ffn_width": 64,
    "train.lr": 3e-3, "train.epochs": C8_EPOCHS,
}


def test_c08_overfit_small_dataset(report):
    cfg = ModelConfig().update(OVERFIT)
    ds = generate(cfg.synth)
    prep = prepare(cfg, ds)
    target = C8_FRACTION * float(ds.values.std())
    model = STHSepNet(cfg, ds.N, ds.distances)
    seen = {"epoch": None, "mae": float("inf")}

    def check(epoch, _):
        if epoch % 10 == 9:
            mae = evaluate_windows(model, prep.windows["train"], prep.norm)[0]
            seen["mae"] = mae
            if mae < target:
                seen["epoch"] = epoch + 1
                return True
        return False

    t0 = time.perf_counter()
    train(model, prep.windows["train"], None, prep.norm, callback=check)
    elapsed = time.perf_counter() - t0
    ok = seen["epoch"] is not None and elapsed < C8_BUDGET_S
    report(8, "overfit N=4, T=256", ok,
           f"train MAE {seen['mae']:.4f} < {target:.4f} (0.1 x data std) after {seen['epoch']} epochs "
           f"(limit {C8_EPOCHS}), {elapsed:.1f} s (budget {C8_BUDGET_S:.0f} s)")


# ---------------------------------------------------------------- 9

@pytest.mark.slow
def test_c09_drift_benchmark(report):
    base = ModelConfig().update({"train.epochs": C9_EPOCHS})
    assert (base.synth.N, base.synth.T, base.synth.rho, base.synth.drift_at, base.synth.seed) == (8, 2048, 0.5, 1024, 7)
    assert (base.window.L, base.window.H) == (48, 48)
    t0 = time.perf_counter()
    ds = generate(base.synth)
    prep = prepare(base, ds)
    best_name, (best_mae, _) = min(baseline_scores(prep, "test").items(), key=lambda kv: kv[1][0])
    scores = {}
    for name, upd in (("fused gamma=0.5", {}),
                      ("gamma=0, gate=0", {"fusion.gamma": 0.0, "model.force_gate": 0.0}),
                      ("gamma=1, gate=0", {"fusion.gamma": 1.0, "model.force_gate": 0.0})):
        cfg = base.copy().update(upd)
        model, _ = fit(cfg, prepare(cfg, ds))
        scores[name] = evaluate(model, prep, ("test",))[0]["test"]["mae"]
    elapsed = time.perf_counter() - t0
    full = scores["fused gamma=0.5"]
    ok = full < best_mae and all(full <= v for v in scores.values()) and elapsed < C9_BUDGET_S
    report(9, "drift benchmark", ok,
           "test MAE " + ", ".join(f"{k} {v:.4f}" for k, v in scores.items())
           + f"; best baseline {best_name} {best_mae:.4f}; {elapsed:.0f} s (budget {C9_BUDGET_S:.0f} s)")


# ---------------------------------------------------------------- 10

def test_c10_ablation_grids(report, tmp_path):
    data = synth(SynthConfig(N=8, T=512, drift_at=256), tmp_path / "data")
    cfg = ModelConfig().update({**TINY, "train.epochs": 1, "data.values": str(data)})
    details, ok = [], True
    hashes = set()
    for sweep, expected in (("k", [2, 3, 4, 5]), ("temporal", [True, False])):
        assert DEFAULT_SWEEPS[sweep] == expected
        out = tmp_path / f"{sweep}.csv"
        ablate(cfg, sweep, out_path=out)
        with open(out) as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            header = reader.fieldnames
        complete = header == ABLATION_COLUMNS and all(all(r[c] != "" for c in ABLATION_COLUMNS) for r in rows)
        values = [r["value"] for r in rows]
        hashes |= {r["data_hash"] for r in rows}
        seeds = {r["seed"] for r in rows}
        good = complete and values == [str(v) for v in expected] and len(seeds) == 1
        ok &= good
        details.append(f"{sweep} sweep rows {values} {'complete' if complete else 'INCOMPLETE'}")
    ok &= len(hashes) == 1
    report(10, "ablation grids emit complete CSV tables", ok,
           "; ".join(details) + f"; distinct data hashes across sweeps: {len(hashes)}")


# ---------------------------------------------------------------- 11

def test_c11_determinism_and_checkpoint(report, tmp_path):
    cfg = ModelConfig().update({**TINY, **OVERFIT, "train.epochs": 3, "transformer.d_m": 8,
                                "transformer.ffn_width": 16})
    ds = generate(cfg.synth)
    prep = prepare(cfg, ds)
    runs = [fit(cfg, prep) for _ in range(2)]
    (m1, r1), (m2, r2) = runs
    same_history = r1.history_hash() == r2.history_hash()
    same_params = all(np.array_equal(m1.store[n].data, m2.store[n].data) for n in m1.store)
    path = tmp_path / "ck.json"
    save_checkpoint(m1.store, cfg, path)
    back = model_from_checkpoint(path, ds.distances)
    X = prep.windows["test"].X
    delta = float(np.max(np.abs(m1.predict(X) - back.predict(X))))
    ok = same_history and same_params and delta < C11_TOL
    report(11, "determinism and checkpoint round trip", ok,
           f"same-seed runs: history {'identical' if same_history else 'DIFFERENT'}, parameters "
           f"{'bit-identical' if same_params else 'DIFFERENT'}; reload max |dpred| {delta:.1e} (tol {C11_TOL:.0e})")
