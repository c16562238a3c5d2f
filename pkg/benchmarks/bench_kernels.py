"""Timing comparison between the compiled and numpy kernel backends.

Each kernel runs on model-shaped inputs under both backends; a final row
times one full forward/backward training step. Backends are interleaved over
several rounds and the best per-round median is reported per cell, with the
compiled-over-numpy speedup; the previously active backend is restored.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--batch B]
"""

import argparse
import time

import numpy as np

from demopair import kernels
from demopair.kernels import reference
from demopair.model import ModelConfig, init_params, objective_forward_backward


def median_seconds(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def kernel_cases(batch, config):
    """name -> zero-arg callable hitting the active backend via the
    dispatch module, with inputs prebuilt outside the timed region."""
    rng = np.random.default_rng(0)
    d = config.d_h
    rows = batch * (config.n_patches + 1)

    x = rng.normal(size=(rows, d))
    gamma = rng.normal(size=d)
    beta = rng.normal(size=d)
    _, mean, rstd = reference.layernorm_fwd(x, gamma, beta, 1e-5)
    dy = rng.normal(size=(rows, d))

    att = rng.normal(size=(batch * config.n_heads * (config.n_patches + 1),
                           config.n_patches + 1))
    p_att = reference.softmax_rows(att)
    dp_att = rng.normal(size=att.shape)
    sim = rng.normal(size=(batch, batch))

    h = rng.normal(size=rows * config.mlp_ratio * d)
    dh = rng.normal(size=h.size)

    patches = rng.uniform(0.0, 1.0, size=(4 * batch, config.d_I))
    codebook = rng.uniform(0.0, 1.0, size=(config.V, config.d_I))

    flat = rng.normal(size=100_000)
    grad = rng.normal(size=flat.size)
    m = np.zeros_like(flat)
    v = np.zeros_like(flat)

    return {
        "layernorm_fwd": lambda: kernels.layernorm_fwd(x, gamma, beta, 1e-5),
        "layernorm_bwd": lambda: kernels.layernorm_bwd(dy, x, mean, rstd,
                                                       gamma),
        "softmax_rows": lambda: kernels.softmax_rows(att),
        "softmax_rows_bwd": lambda: kernels.softmax_rows_bwd(dp_att, p_att),
        "log_softmax_rows": lambda: kernels.log_softmax_rows(sim),
        "gelu_fwd": lambda: kernels.gelu_fwd(h),
        "gelu_bwd": lambda: kernels.gelu_bwd(h, dh),
        "codebook_assign": lambda: kernels.codebook_assign(patches, codebook),
        "adamw_update": lambda: kernels.adamw_update(
            flat.copy(), grad, m.copy(), v.copy(),
            1e-3, 0.9, 0.999, 1e-8, 0.01, 3),
    }


def train_step_case(batch, config):
    rng = np.random.default_rng(1)
    params = init_params(config, 0)
    patches = rng.uniform(0.0, 1.0,
                          size=(batch, config.n_patches, config.d_I))
    token_lists = [
        list(rng.integers(1, config.vocab_text, size=12)) for _ in range(batch)
    ]
    visual_tokens = rng.integers(0, config.V, size=(batch, config.n_patches))

    def step():
        objective_forward_backward(
            params, config, patches, token_lists, "contrastive_plus_mim",
            rng=np.random.default_rng(7), visual_tokens=visual_tokens,
        )

    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=50,
                    help="timed calls per kernel (median reported)")
    ap.add_argument("--batch", type=int, default=32)
    args = ap.parse_args()

    config = ModelConfig()
    backends = kernels.available_backends()
    original = kernels.backend_name()
    print(f"backends available: {', '.join(backends)} (active: {original})")
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy backend only")

    cases = kernel_cases(args.batch, config)
    cases["full_train_step"] = train_step_case(args.batch, config)

    # Interleave the backends over several rounds and keep each pair's best
    # median: a background load spike then hurts at most one round instead
    # of silently skewing one whole backend's column.
    rounds = 3
    per_round = max(2, args.repeats // rounds)
    results = {}
    try:
        for _ in range(rounds):
            for backend in backends:
                kernels.set_backend(backend)
                for name, fn in cases.items():
                    repeats = max(3, per_round // 5) \
                        if name == "full_train_step" else per_round
                    fn()  # warm up
                    t = median_seconds(fn, repeats)
                    key = (name, backend)
                    results[key] = min(results.get(key, t), t)
    finally:
        kernels.set_backend(original)

    width = max(len(n) for n in cases)
    header = f"{'kernel'.ljust(width)}  {'numpy (ms)':>12}"
    if "cython" in backends:
        header += f"  {'compiled (ms)':>14}  {'speedup':>8}"
    print()
    print(header)
    print("-" * len(header))
    for name in cases:
        py = results[(name, "python")] * 1e3
        line = f"{name.ljust(width)}  {py:12.4f}"
        if "cython" in backends:
            cy = results[(name, "cython")] * 1e3
            line += f"  {cy:14.4f}  {py / cy:7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
