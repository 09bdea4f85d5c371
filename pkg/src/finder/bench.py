"""Timing harness comparing the numba kernels against the numpy fallbacks.

Shapes mirror the real workload: one-channel first blocks over 512/768/1024
wide representations and the deeper second block. Invoked by ``finder bench``
or ``benchmarks/kernel_bench.py``.
"""

from __future__ import annotations

import time

import numpy as np

from . import backend

CASES = [
    # (name, batch, c_in, length, c_out, kernel)
    ("block1 d512", 32, 1, 512, 256, 3),
    ("block1 d1024", 32, 1, 1024, 256, 3),
    ("block2 d512", 32, 256, 256, 128, 3),
]


def _time(fn, repeats: int) -> float:
    fn()  # warmup / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def run_benchmark(repeats: int = 5) -> list[dict]:
    if not backend.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for name, b, cin, length, cout, k in CASES:
        x = rng.standard_normal((b, cin, length)).astype(np.float32)
        w = rng.standard_normal((cout, cin, k)).astype(np.float32)
        gy = rng.standard_normal((b, cout, length - k + 1)).astype(np.float32)
        for op, args in (
            ("conv_fwd", (x, w)),
            ("conv_bwd_in", (gy, w, length)),
            ("conv_bwd_w", (x, gy)),
        ):
            times = {}
            for which in ("numpy", "numba"):
                backend.set_backend(which)
                try:
                    krn = backend.kernels()
                    fn = getattr(krn, {
                        "conv_fwd": "conv1d_forward",
                        "conv_bwd_in": "conv1d_backward_input",
                        "conv_bwd_w": "conv1d_backward_weight",
                    }[op])
                    times[which] = _time(lambda: fn(*args), repeats)
                finally:
                    backend.set_backend(None)
            rows.append({
                "case": f"{name} {op}",
                "numpy_ms": times["numpy"] * 1e3,
                "numba_ms": times["numba"] * 1e3,
                "speedup": times["numpy"] / times["numba"],
            })

        pool_x = rng.standard_normal((b, cout, length)).astype(np.float32)
        times = {}
        for which in ("numpy", "numba"):
            backend.set_backend(which)
            try:
                krn = backend.kernels()
                times[which] = _time(lambda: krn.maxpool1d_forward(pool_x, 2), repeats)
            finally:
                backend.set_backend(None)
        rows.append({
            "case": f"{name} maxpool_fwd",
            "numpy_ms": times["numpy"] * 1e3,
            "numba_ms": times["numba"] * 1e3,
            "speedup": times["numpy"] / times["numba"],
        })
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'case':<28} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"]
    for r in rows:
        lines.append(f"{r['case']:<28} {r['numpy_ms']:>10.3f} {r['numba_ms']:>10.3f} "
                     f"{r['speedup']:>8.2f}")
    return "\n".join(lines)
