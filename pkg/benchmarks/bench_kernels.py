"""Time the compiled kernels against the numpy fallback.

Shapes match one training step of the desk configuration (batch 16,
sequence 256, hidden 64, four heads, FFN 256).  Prints one line per kernel
with the best-of-N time for each backend and the speed-up.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]
"""

import argparse
import json
import timeit

import numpy as np

from mseqa import kernels


def cases(rng):
    b, t, d, h, f = 16, 256, 64, 4, 256
    x = rng.normal(size=(b, t, d)).astype(np.float32)
    g = np.ones(d, np.float32)
    z = np.zeros(d, np.float32)
    _, xhat, rstd = kernels.layer_norm(x, g, z, 1e-12)
    hid = rng.normal(size=(b, t, f)).astype(np.float32)
    scores = rng.normal(size=(b, h, t, t)).astype(np.float32)
    mask = np.ones((b, t), np.uint8)
    probs = kernels.masked_softmax(scores, mask)
    ls = np.log(rng.dirichlet(np.ones(t)))
    le = np.log(rng.dirichlet(np.ones(t)))
    valid = np.ones(t, np.uint8)
    align = rng.random((8, 8))
    return {
        "layer_norm": lambda: kernels.layer_norm(x, g, z, 1e-12),
        "layer_norm_backward": lambda: kernels.layer_norm_backward(x, xhat, rstd, g),
        "gelu": lambda: kernels.gelu(hid),
        "gelu_backward": lambda: kernels.gelu_backward(hid, hid),
        "masked_softmax": lambda: kernels.masked_softmax(scores, mask),
        "softmax_backward": lambda: kernels.softmax_backward(scores, probs),
        "best_span": lambda: kernels.best_span(ls, le, valid, 30),
        "best_alignment_8x8": lambda: kernels.best_alignment(align),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args()

    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled kernels are not built; timing the numpy fallback only")
    results = {}
    for name in backends:
        kernels.use_backend(name)
        for kname, fn in cases(np.random.default_rng(0)).items():
            fn()  # warm up
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results.setdefault(kname, {})[name] = best

    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + ("     speed-up" if len(backends) > 1 else ""))
    for kname, row in results.items():
        line = f"{kname:<22}" + "".join(f"{row[b] * 1e3:>10.3f}ms" for b in backends)
        if len(backends) > 1:
            line += f"{row['python'] / row['cython']:>12.1f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
