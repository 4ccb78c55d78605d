"""Benchmark the compiled LSTM sequence kernels against the pure-numpy
fallback.

Run:  python3 benchmarks/bench_lstm.py
"""

from __future__ import annotations

import importlib
import time

import numpy as np


def _load(force_py: bool):
    import os

    os.environ["HEMSLAB_FORCE_PY"] = "1" if force_py else ""
    import hemslab.nn.backend as backend

    importlib.reload(backend)
    return backend


def _timeit(fn, repeats: int = 20) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(backend, T: int, D: int, H: int, seed: int = 0) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(T, D))
    h0 = rng.normal(size=H)
    c0 = rng.normal(size=H)
    W = rng.normal(size=(4 * H, D)) * 0.1
    U = rng.normal(size=(4 * H, H)) * 0.1
    b = rng.normal(size=4 * H) * 0.1

    hs, cs, gates = backend.lstm_seq_forward(x, h0, c0, W, U, b)
    d_hs = rng.normal(size=(T, H))
    dc_last = rng.normal(size=H)

    fwd = _timeit(lambda: backend.lstm_seq_forward(x, h0, c0, W, U, b))
    bwd = _timeit(
        lambda: backend.lstm_seq_backward(d_hs, dc_last, x, h0, c0, W, U, hs, cs, gates)
    )
    return fwd, bwd


def main() -> None:
    shapes = [(144, 6, 32), (144, 6, 64), (6, 12, 128), (288, 6, 64)]
    numpy_backend = _load(force_py=True)
    assert numpy_backend.BACKEND_NAME == "numpy"
    rows = {s: bench(numpy_backend, *s) for s in shapes}

    compiled = _load(force_py=False)
    if not compiled.COMPILED:
        print("compiled backend unavailable; numpy timings only")
        for s, (f, b) in rows.items():
            print(f"T={s[0]:4d} D={s[1]:3d} H={s[2]:3d}  numpy fwd {f*1e3:7.3f} ms  bwd {b*1e3:7.3f} ms")
        return

    print(f"{'shape (T,D,H)':>16} {'np fwd':>9} {'cy fwd':>9} {'speedup':>8} "
          f"{'np bwd':>9} {'cy bwd':>9} {'speedup':>8}")
    for s in shapes:
        nf, nb = rows[s]
        cf, cb = bench(compiled, *s)
        print(
            f"{str(s):>16} {nf*1e3:8.3f}m {cf*1e3:8.3f}m {nf/cf:7.2f}x "
            f"{nb*1e3:8.3f}m {cb*1e3:8.3f}m {nb/cb:7.2f}x"
        )

    # agreement check between the two backends on the last shape
    rng = np.random.default_rng(1)
    T, D, H = shapes[0]
    args = (rng.normal(size=(T, D)), rng.normal(size=H), rng.normal(size=H),
            rng.normal(size=(4 * H, D)) * 0.1, rng.normal(size=(4 * H, H)) * 0.1,
            rng.normal(size=4 * H) * 0.1)
    hs_n, cs_n, g_n = numpy_backend.lstm_seq_forward(*args)
    hs_c, cs_c, g_c = compiled.lstm_seq_forward(*args)
    print(f"max |numpy - compiled| forward diff: {np.abs(hs_n - hs_c).max():.3e}")


if __name__ == "__main__":
    main()
