"""Compare the compiled kernels with the numpy fallback.

Each backend runs in its own subprocess (the backend is chosen at import
time from ``NORMSHARE_PURE``). Reports median wall time per call for the
fused kernels and for one full training update.

    python benchmarks/bench_kernels.py [--repeats 20]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, statistics, sys, time
import numpy as np
from normshare import kernels as K
from normshare import numcore as nc
from normshare.data import build_vocabularies
from normshare.model import HyperParams, build_model, parse_sharing_config
from normshare.synthetic import generate_synthetic_corpus
from normshare.training import CompositeBatch, Part, update_step

repeats = int(sys.argv[1])
r = np.random.default_rng(0)

def bench(fn):
    fn()
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)

B, L, H, A, V = 40, 12, 64, 64, 40
xw = r.normal(size=(B, L, 4 * H)); Wh = 0.1 * r.normal(size=(H, 4 * H))
h0 = np.zeros((B, H)); c0 = np.zeros((B, H)); mask = np.ones((B, L))
fwd = K.lstm_forward(xw, Wh, h0, c0, mask)
fwd = tuple(np.asarray(x) for x in fwd)
dhs = r.normal(size=(B, L, H))
enc = r.normal(size=(B, L, H)); ep = r.normal(size=(B, L, A)); dp = r.normal(size=(B, A)); v = r.normal(size=A)
ctx, w, u = (np.asarray(x) for x in K.attention_forward(enc, ep, dp, v, mask))
logits = r.normal(size=(B * L, V)); tg = r.integers(0, V, size=B * L).astype(np.int64); wt = np.ones(B * L)

norm, auto, _, _ = generate_synthetic_corpus(1, 300, n_norm=60, n_auto=60)
hp = HyperParams(embed_dim=16, hidden_dim=64, dropout=0.2)
model = build_model(parse_sharing_config("SEADP"), ["normalization", "autoencoding"],
                    build_vocabularies([norm, auto]), hp, 0)
adam = nc.AdamState(lr=1e-3)
batch = CompositeBatch(1, 0, [Part("normalization", "xx", "n", list(norm.pairs[:30])),
                              Part("autoencoding", "xx", "a", list(auto.pairs[:10]))])

out = {
    "backend": K.BACKEND,
    "lstm_forward": bench(lambda: K.lstm_forward(xw, Wh, h0, c0, mask)),
    "lstm_backward": bench(lambda: K.lstm_backward(dhs, h0, c0, Wh, h0, c0, mask, *fwd)),
    "attention_forward": bench(lambda: K.attention_forward(enc, ep, dp, v, mask)),
    "attention_backward": bench(lambda: K.attention_backward(ctx, None, enc, v, w, u)),
    "xent_forward": bench(lambda: K.xent_forward(logits, tg, wt)),
    "training_update": bench(lambda: update_step(model, adam, batch)),
}
print(json.dumps(out))
"""


def run_backend(pure: bool, repeats: int) -> dict:
    env = dict(os.environ, NORMSHARE_PURE="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeats)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args(argv)
    start = time.perf_counter()
    compiled = run_backend(False, args.repeats)
    pure = run_backend(True, args.repeats)
    if compiled["backend"] != "cython":
        print("warning: compiled extension not available; both runs used numpy", file=sys.stderr)
    print(f"{'kernel':<20} {'cython ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for key in compiled:
        if key == "backend":
            continue
        c, p = compiled[key] * 1e3, pure[key] * 1e3
        print(f"{key:<20} {c:>10.3f} {p:>10.3f} {p / c:>7.2f}x")
    print(f"(median of {args.repeats} calls; total {time.perf_counter() - start:.1f} s)")


if __name__ == "__main__":
    main()
