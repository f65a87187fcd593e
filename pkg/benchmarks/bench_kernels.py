"""Benchmark the compiled kernels against the numpy reference.

Times the fused training step, the dense Adam update, and batch rendering
at the production configuration (64 layers, 256x128 grid, 8192+8192 rays),
plus a 256x256 view render on a converged-style opaque field.

Usage: python benchmarks/bench_kernels.py [--iters N]
"""

import argparse
import time

import numpy as np

from msifield.kernels import get_backend


def make_problem(seed=7, L=64, H=128, W=256, rf=8192, rp=8192, opaque=False):
    rng = np.random.default_rng(seed)
    if opaque:
        occ = np.full((L, H, W), -12.0, dtype=np.float32)
        occ[L // 3] = 12.0
    else:
        occ = rng.normal(-2, 1, (L, H, W)).astype(np.float32)
    col = rng.normal(0, 1, (L, H, W, 3)).astype(np.float32)
    d = np.arange(L) * 2.0 / (L - 1)
    d[0] = 1e-3
    fo = rng.uniform(-0.2, 0.2, (rf, 3))
    fd = rng.normal(size=(rf, 3))
    fd /= np.linalg.norm(fd, axis=1, keepdims=True)
    frgb = rng.uniform(0, 1, (rf, 3)).astype(np.float32)
    pd = rng.normal(size=(rp, 3))
    pd /= np.linalg.norm(pd, axis=1, keepdims=True)
    pt = rng.uniform(0, 2, rp).astype(np.float32)
    return dict(occ=occ, col=col, radii=1.0 / d, dinv=d, fo=fo, fd=fd,
                frgb=frgb, pd=pd, pt=pt)


def time_fn(fn, iters):
    fn()
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters


def bench_backend(name, p, iters):
    mod = get_backend(name)
    g_occ = np.zeros_like(p["occ"])
    g_col = np.zeros_like(p["col"])
    m = np.zeros(p["occ"].size + p["col"].size, dtype=np.float32)
    v = np.zeros_like(m)
    n_occ = p["occ"].size

    def step():
        g_occ.fill(0)
        g_col.fill(0)
        mod.train_step(p["occ"], p["col"], g_occ, g_col, p["radii"], p["dinv"],
                       p["fo"], p["fd"], p["frgb"], p["pd"], p["pt"], 5.0, 1e-4)

    def adam():
        mod.adam_step_dense(p["occ"].ravel(), g_occ.ravel(), m[:n_occ], v[:n_occ],
                            3e-4, 0.9, 0.999, 1e-8, 1, False)
        mod.adam_step_dense(p["col"].ravel(), g_col.ravel(), m[n_occ:], v[n_occ:],
                            3e-4, 0.9, 0.999, 1e-8, 1, False)

    t_step = time_fn(step, iters)
    t_adam = time_fn(adam, iters)

    u, vv = np.meshgrid(np.arange(256), np.arange(256))
    dirs = np.stack([(u.ravel() - 127.5) / 128, (vv.ravel() - 127.5) / 128,
                     np.ones(256 * 256)], axis=-1)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.zeros((256 * 256, 3)) + 0.05
    popq = make_problem(opaque=True)

    def render():
        mod.render_batch(popq["occ"], popq["col"], popq["radii"], popq["dinv"],
                         origins, dirs, True, 1e-5)

    t_render = time_fn(render, max(iters // 2, 1))
    return t_step, t_adam, t_render


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=5)
    args = ap.parse_args()

    p = make_problem()
    backends = ["reference"]
    try:
        get_backend("native")
        backends.insert(0, "native")
    except ImportError:
        print("compiled kernels unavailable; benchmarking the reference only")

    results = {}
    for name in backends:
        results[name] = bench_backend(name, p, args.iters)
        t_step, t_adam, t_render = results[name]
        total = t_step + t_adam
        print(f"{name:>9}: train_step {t_step*1e3:8.1f} ms | adam {t_adam*1e3:7.1f} ms "
              f"| iter {total*1e3:8.1f} ms ({total*5000/60:5.1f} min / 5000 iters) "
              f"| render 256x256 {t_render*1e3:7.1f} ms")
    if len(results) == 2:
        a, b = results["native"], results["reference"]
        print(f"  speedup: train_step x{b[0]/a[0]:.1f}, adam x{b[1]/a[1]:.1f}, "
              f"render x{b[2]/a[2]:.1f}")


if __name__ == "__main__":
    main()
