"""Timing comparison: compiled kernels vs the numpy fallback.

Times each hot kernel at model-default shapes (K=8 proposals, L=10
words, the standard hidden widths), then a whole-scene forward and
forward+backward pass per backend. Run from the repo root:

    python3 benchmarks/kernel_bench.py [--number 2000] [--scenes 50]
"""

import argparse
import time

import numpy as np

from dga import kernels as K
from dga import matching, model, synth
from dga import tensor as T
from dga.language import Vocabulary

D_M, D_H, K_PROP, L, N_E = 128, 64, 8, 10, 11


def best_of(fn, number, repeat=5):
    """Best per-call seconds over ``repeat`` runs of ``number`` calls."""
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def kernel_cases(rng):
    x = rng.standard_normal((K_PROP, L))
    dy = rng.standard_normal((K_PROP, L))
    z = rng.standard_normal(4 * D_H)
    c_prev = rng.standard_normal(D_H)
    u = rng.standard_normal((K_PROP, 64))
    v = rng.standard_normal((L, 64))
    w = rng.standard_normal(64)
    s = rng.standard_normal((K_PROP, D_M))
    nu = rng.uniform(0.0, 1.0, N_E)
    b = rng.standard_normal((N_E, D_M))
    edges = rng.integers(0, N_E + 1, (K_PROP, K_PROP))
    np.fill_diagonal(edges, 0)
    edges = np.ascontiguousarray(edges, dtype=np.int64)
    inner = rng.standard_normal((K_PROP, D_M))
    m_prev = rng.standard_normal((K_PROP, D_M))
    lam = rng.uniform(0.0, 1.0, K_PROP)
    p_prev = rng.uniform(0.0, 1.0, K_PROP)
    p_new = p_prev + lam
    eps = 1e-12

    y = K.softmax_fwd(x)
    _, _, lstm_cache = K.lstm_gates_fwd(z, c_prev)
    _, t3 = K.pair_score_fwd(u, v, w)
    g_k = rng.standard_normal((K_PROP, D_M))
    blend_out = K.blend_fwd(inner, m_prev, lam, p_prev, p_new, eps)
    _, norms = K.l2norm_rows_fwd(s, eps)

    return [
        ("softmax fwd", lambda: K.softmax_fwd(x)),
        ("softmax bwd", lambda: K.softmax_bwd(y, dy)),
        ("lstm_gates fwd", lambda: K.lstm_gates_fwd(z, c_prev)),
        ("lstm_gates bwd",
         lambda: K.lstm_gates_bwd(lstm_cache, c_prev, c_prev, c_prev)),
        ("pair_score fwd", lambda: K.pair_score_fwd(u, v, w)),
        ("pair_score bwd", lambda: K.pair_score_bwd(t3, w, x)),
        ("edge_prop fwd", lambda: K.edge_prop_fwd(s, nu, b, edges)),
        ("edge_prop bwd", lambda: K.edge_prop_bwd(s, nu, b, edges, g_k)),
        ("blend fwd",
         lambda: K.blend_fwd(inner, m_prev, lam, p_prev, p_new, eps)),
        ("blend bwd",
         lambda: K.blend_bwd(inner, m_prev, lam, p_prev, p_new,
                             blend_out, g_k, eps)),
        ("l2norm_rows fwd", lambda: K.l2norm_rows_fwd(s, eps)),
        ("l2norm_rows bwd", lambda: K.l2norm_rows_bwd(s, norms, eps, g_k)),
    ]


def scene_cases(n_scenes):
    scenes = synth.generate_dataset(n_scenes, K_PROP, [0.3, 0.4, 0.3], seed=3)
    vocab = Vocabulary.from_corpus([s.tokens for s in scenes])
    cfg = model.ModelConfig(vocab_size=len(vocab), steps=3)
    params = model.init_parameters(cfg, seed=0)
    preps = [model.prepare_scene(s, vocab) for s in scenes]

    def fwd():
        for prep in preps:
            with T.no_grad():
                matching.score_scene(params, cfg, prep)

    def fwd_bwd():
        for prep in preps:
            with T.Tape() as tape:
                scores, _, _ = matching.score_scene(params, cfg, prep)
                loss = matching.triplet_loss(scores, prep.gt, 0.1)
            params.zero_grads()
            T.backward(loss, tape)

    return [("scene forward (per scene)", fwd),
            ("scene forward+backward (per scene)", fwd_bwd)]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=2000,
                    help="kernel calls per timing run")
    ap.add_argument("--scenes", type=int, default=50,
                    help="scenes per whole-model timing run")
    args = ap.parse_args()

    backends = K.available_backends()
    print(f"backends: {', '.join(backends)}")
    if "compiled" not in backends:
        print("compiled extension not built; timing numpy only")

    rows = []
    for case, fn_for in (("kernel", kernel_cases),
                         ("scene", scene_cases)):
        per_backend = {}
        for name in backends:
            K.set_backend(name)
            rng = np.random.default_rng(0)
            cases = fn_for(rng) if case == "kernel" else fn_for(args.scenes)
            number = args.number if case == "kernel" else 1
            scale = 1.0 if case == "kernel" else args.scenes
            for label, fn in cases:
                fn()  # warm up
                per_backend.setdefault(label, {})[name] = (
                    best_of(fn, number) / scale)
        for label, times in per_backend.items():
            rows.append((label, times))
    K.set_backend(backends[-1])

    width = max(len(label) for label, _ in rows)
    header = f"{'case':<{width}}  " + "".join(f"{n:>12}" for n in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for label, times in rows:
        line = f"{label:<{width}}  "
        for name in backends:
            line += f"{times[name] * 1e6:>10.1f}us"
        if len(backends) > 1:
            line += f"{times['numpy'] / times['compiled']:>9.2f}x"
        print(line)


if __name__ == "__main__":
    main()
