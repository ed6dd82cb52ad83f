"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--step]

Shapes follow the toy training configuration (batch 32, 4 heads, length 64,
hidden 64, intermediate 128). ``--step`` also times one full forward/backward
pass of the toy model under each backend, in a fresh interpreter per backend,
since the backend is fixed at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dpiformer.kernels import _numba, _numpy

B, HEADS, L, H, INTER = 32, 4, 64, 64, 128

STEP_SNIPPET = """
import json, timeit, numpy as np
from dpiformer import BACKEND, model as M
cfg = M.ModelConfig.toy()
p = M.init_parameters(cfg)
rng = np.random.default_rng(0)
ids = rng.integers(0, 256, (32, 64)); mask = np.ones((32, 64), np.int8); y = rng.integers(0, 2, 32)
M.loss_and_grads(p, cfg, ids, mask, y, rng=rng)
t = min(timeit.repeat(lambda: M.loss_and_grads(p, cfg, ids, mask, y, rng=rng), number=1, repeat={repeat}))
print(json.dumps({{"backend": BACKEND, "seconds": t}}))
"""


def cases(rng):
    scores = rng.normal(size=(B * HEADS * L, L)).astype(np.float32)
    addmask = np.zeros((B, L), np.float32)
    addmask[:, L // 2:] = _numpy.NEG_SENTINEL
    x = rng.normal(size=(B * L, H)).astype(np.float32)
    gamma, beta = np.ones(H, np.float32), np.zeros(H, np.float32)
    u = rng.normal(size=(B * L, INTER)).astype(np.float32)
    group = HEADS * L

    def build(mod):
        y = mod.softmax_fwd(scores, addmask, group)
        ln_y, xhat, rstd = mod.layernorm_fwd(x, gamma, beta, 1e-12)
        return {
            "softmax_fwd": lambda: mod.softmax_fwd(scores, addmask, group),
            "softmax_bwd": lambda: mod.softmax_bwd(y, scores),
            "layernorm_fwd": lambda: mod.layernorm_fwd(x, gamma, beta, 1e-12),
            "layernorm_bwd": lambda: mod.layernorm_bwd(ln_y, xhat, rstd, gamma),
            "gelu_fwd": lambda: mod.gelu_fwd(u),
            "gelu_bwd": lambda: mod.gelu_bwd(u, u),
        }
    return build(_numba), build(_numpy)


def time_step(backend, repeat):
    env = dict(os.environ, DPIFORMER_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)["seconds"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--step", action="store_true", help="also time a full training step per backend")
    args = ap.parse_args()

    fast, slow = cases(np.random.default_rng(0))
    for fn in fast.values():  # trigger compilation outside the timed region
        fn()
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name in fast:
        t_fast = min(timeit.repeat(fast[name], number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(slow[name], number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_fast:>10.3f}{t_slow:>10.3f}{t_slow / t_fast:>8.2f}x")
    if args.step:
        steps = {b: time_step(b, max(3, args.repeat // 4)) for b in ("numba", "numpy")}
        print(f"{'train step':<16}{steps['numba'] * 1e3:>10.1f}{steps['numpy'] * 1e3:>10.1f}"
              f"{steps['numpy'] / steps['numba']:>8.2f}x")


if __name__ == "__main__":
    main()
