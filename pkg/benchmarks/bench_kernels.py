#!/usr/bin/env python3
"""Benchmark the hot estimator kernels: compiled backend vs NumPy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--size 256] [--patch 8] [--repeats 30]

Also times one full objective+gradient evaluation through whichever backend
is active (set EVBOS_BACKEND to force one).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from evbos._kernels import BACKEND, available_backends


def _time(fn, repeats: int) -> float:
    fn()  # warm-up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels(size: int, patch: int, repeats: int) -> None:
    rng = np.random.default_rng(0)
    h = w = size
    gh = gw = (size + patch - 1) // patch
    grid = np.ascontiguousarray(rng.normal(size=(gh, gw)))
    field = np.ascontiguousarray(rng.normal(size=(h, w)))
    gbar = np.ascontiguousarray(rng.normal(size=(h, w)))
    gx, gy = None, None
    sx = np.ascontiguousarray(rng.uniform(-2, w + 2, size=(h, w)))
    sy = np.ascontiguousarray(rng.uniform(-2, h + 2, size=(h, w)))

    backends = available_backends()
    print(f"active backend: {BACKEND}; available: {', '.join(backends)}")
    print(f"field {h}x{w}, grid {gh}x{gw} (patch {patch}), {repeats} repeats\n")
    header = f"{'kernel':<28}" + "".join(f"{name:>12}" for name in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)

    cases = [
        ("upsample_bilinear", lambda m: m.upsample_bilinear(grid, patch, h, w)),
        (
            "upsample_bilinear_adjoint",
            lambda m: m.upsample_bilinear_adjoint(gbar, patch, gh, gw),
        ),
        ("sobel_xy", lambda m: m.sobel_xy(field)),
        ("sobel_xy_adjoint", lambda m: m.sobel_xy_adjoint(gbar, field)),
        (
            "sample_gradient_bilinear",
            lambda m: m.sample_gradient_bilinear(field, gbar, sx, sy),
        ),
    ]
    for name, call in cases:
        times = {bk: _time(lambda m=mod: call(m), repeats) for bk, mod in backends.items()}
        row = f"{name:<28}" + "".join(f"{times[bk] * 1e3:>10.3f}ms" for bk in backends)
        if "python" in times and "native" in times:
            row += f"{times['python'] / times['native']:>9.1f}x"
        print(row)


def bench_objective(size: int, repeats: int) -> None:
    from evbos.core import ScalarField
    from evbos.estimator import (
        EstimatorConfig,
        ObjectiveInputs,
        ParamGrid,
        Params,
        frame_to_log,
        objective_gradient,
    )
    from evbos.event_ops import gaussian_smooth, weight_map
    from evbos.simulator import render_background

    rng = np.random.default_rng(1)
    frame = render_background((size, size), 0.02, 1.5, seed=0)
    meas = gaussian_smooth(ScalarField(rng.normal(size=(size, size))), 2.0)
    wmap = weight_map(ScalarField(rng.uniform(0, 1, size=(size, size))), 0.95)
    inputs = ObjectiveInputs(frame_log=frame_to_log(frame), increment=meas, weight=wmap)
    cfg = EstimatorConfig()
    patch = 8
    gh = gw = (size + patch - 1) // patch
    params = Params(
        p=ParamGrid(rng.normal(size=(gh, gw, 2)) * 0.1, patch),
        q=ParamGrid(rng.uniform(-1, 1, size=(gh, gw)), patch),
    )
    dt = _time(lambda: objective_gradient(params, inputs, cfg), repeats)
    print(f"\nobjective+gradient ({size}x{size}, {BACKEND} backend): {dt * 1e3:.2f} ms")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--patch", type=int, default=8)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    bench_kernels(args.size, args.patch, args.repeats)
    bench_objective(args.size, args.repeats)


if __name__ == "__main__":
    main()
