"""Compare the numba and pure-numpy recurrent kernels.

Runs forward inference and full gradient computation for each cell type
under both backends and reports per-utterance wall time. The numba path is
timed after a warm-up call so JIT compilation is excluded.

Usage: python benchmarks/bench_kernels.py [--frames 625] [--hidden 128]
       [--repeats 5]
"""

import argparse
import os
import time

import numpy as np


def _build_case(cell, hidden, frames, seed=0):
    from dualbeam.rnn import (MODE_TARGET_PLUS_INTERFERENCE, PostfilterConfig,
                              init_model)
    cfg = PostfilterConfig(cell=cell, layers=1, hidden=hidden,
                           input_mode=MODE_TARGET_PLUS_INTERFERENCE,
                           dropout_p=0.0)
    model = init_model(cfg, seed)
    rng = np.random.default_rng(seed)
    feats = rng.standard_normal((frames, cfg.input_width)).astype(np.float32)
    target = rng.uniform(0, 1, (frames, cfg.feature_bins)).astype(np.float32)
    weight_pow = rng.uniform(0.3, 1.5, target.shape).astype(np.float32)
    return model, feats, target, weight_pow


def _time_backend(backend, cells, hidden, frames, repeats):
    os.environ["DUALBEAM_BACKEND"] = backend
    import dualbeam.backend as backend_mod
    backend_mod.reset_backend()
    from dualbeam.rnn import forward, gradients_batch_pow
    try:
        backend_mod.get_kernels()
    except Exception as exc:  # numba missing when explicitly requested
        print(f"{backend}: unavailable ({exc})")
        return None
    results = {}
    for cell in cells:
        model, feats, target, weight_pow = _build_case(cell, hidden, frames)
        forward(model, feats)  # warm-up triggers JIT compilation
        gradients_batch_pow(model, [feats], [target], [weight_pow])
        fwd = []
        grad = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            forward(model, feats)
            fwd.append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            gradients_batch_pow(model, [feats], [target], [weight_pow])
            grad.append(time.perf_counter() - t0)
        results[cell] = (min(fwd), min(grad))
    return results


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--frames", type=int, default=625,
                        help="utterance length in STFT frames")
    parser.add_argument("--hidden", type=int, default=128)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    cells = ("gru", "lstm")
    timings = {}
    for backend in ("numpy", "numba"):
        timings[backend] = _time_backend(backend, cells, args.hidden,
                                         args.frames, args.repeats)

    print(f"\n{args.frames} frames, hidden {args.hidden}, "
          f"best of {args.repeats} runs (ms per utterance)")
    print(f"{'cell':6s} {'stage':9s} {'numpy':>9s} {'numba':>9s} {'speedup':>8s}")
    for cell in cells:
        for stage, idx in (("forward", 0), ("gradient", 1)):
            numpy_ms = timings["numpy"][cell][idx] * 1e3
            numba = timings["numba"]
            numba_ms = numba[cell][idx] * 1e3 if numba else None
            speed = f"{numpy_ms / numba_ms:7.2f}x" if numba_ms else "       -"
            numba_text = f"{numba_ms:9.2f}" if numba_ms else "        -"
            print(f"{cell:6s} {stage:9s} {numpy_ms:9.2f} {numba_text} {speed}")


if __name__ == "__main__":
    main()
