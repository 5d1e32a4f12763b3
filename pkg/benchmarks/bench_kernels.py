"""Compare the numba and pure-numpy kernel backends.

Kernel timings call both implementations directly on inputs shaped like the
standard benchmark (160x120 image, 16 capsules). The frame timing runs a short
pipeline in a subprocess per backend, selected with KINSEG_NUMBA, so the whole
autodiff path uses one backend.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--frames 3]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from kinseg.kernels import implementation

H, W = 120, 160
TAU = 1.5

FRAME_SCRIPT = """
import json, sys, time
import numpy as np
from kinseg import kernels
from kinseg.config import ExperimentConfig
from kinseg.pipeline import configure, run_sequence
from kinseg.synth import generate

exp = ExperimentConfig().with_overrides(["synth.length=%d", "pipeline.lr_theta=3e-3",
    "pipeline.lr_base=3e-4", "pipeline.features=local-contrast"])
ds = generate(exp.trajectory(1), exp.noise(1), exp.domain(), exp.camera(), exp.arms(),
              exp.bases_true(), **exp.generator_kwargs())
cfg = exp.pipeline()
run_sequence(ds.subset([0]), configure(cfg, k=1), exp.scene(ds.background))  # warm-up / compile
t = time.perf_counter()
res = run_sequence(ds, cfg, exp.scene(ds.background))
ms = 1e3 * (time.perf_counter() - t) / len(ds)
print(json.dumps({"backend": kernels.BACKEND, "ms_per_frame": ms,
                  "dice": float(np.mean([r.dice for r in res]))}))
"""


def capsules(rng, m=16):
    a = np.column_stack([rng.uniform(20, W - 20, m), rng.uniform(20, H - 20, m)])
    b = a + rng.normal(0.0, 15.0, (m, 2))
    r = rng.uniform(1.5, 4.0, m)
    return a, b, r


def cases(rng):
    a, b, r = capsules(rng)
    img = rng.uniform(size=(H, W))
    grad = rng.normal(size=(H, W))
    gauss = np.exp(-0.5 * (np.arange(-6, 7) / 2.0) ** 2)
    gauss /= gauss.sum()
    return {
        "silhouette_forward": lambda k: k.silhouette_forward(a, b, r, TAU, H, W),
        "silhouette_backward": lambda k: k.silhouette_backward(a, b, r, TAU, grad),
        "correlate_edge": lambda k: k.correlate_edge(img, gauss, 1),
        "correlate_edge_adjoint": lambda k: k.correlate_edge_adjoint(grad, gauss, 0),
        "max_filter_disc": lambda k: k.max_filter_disc(img, 6.0),
    }


def timeit(fn, repeat):
    fn()  # compile / warm caches
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return 1e3 * best


def frame_timing(frames):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, KINSEG_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", FRAME_SCRIPT % frames], env=env,
                              capture_output=True, text=True, check=True)
        row = json.loads(proc.stdout.strip().splitlines()[-1])
        out[row["backend"]] = row
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--frames", type=int, default=3, help="frames for the pipeline timing (0 skips)")
    args = ap.parse_args(argv)

    backends = {"numpy": implementation("numpy"), "numba": implementation("numba")}
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases(rng).items():
        t_np = timeit(lambda: fn(backends["numpy"]), args.repeat)
        t_nb = timeit(lambda: fn(backends["numba"]), args.repeat)
        print(f"{name:<24}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")

    if args.frames > 0:
        rows = frame_timing(args.frames)
        print(f"\npipeline, default k=5, {args.frames} frames")
        for name in ("numpy", "numba"):
            print(f"  {name:<6} {rows[name]['ms_per_frame']:9.1f} ms/frame   "
                  f"dice {rows[name]['dice']:.6f}")
        print(f"  speedup {rows['numpy']['ms_per_frame'] / rows['numba']['ms_per_frame']:.1f}x")


if __name__ == "__main__":
    main()
