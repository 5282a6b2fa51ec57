"""Wall time of one simulation with the compiled kernel vs the numpy fallback.

    python benchmarks/bench_kernel.py --n 120 --t-end 1.0 --repeats 3
"""

import argparse
import time

import numpy as np

from ringattractor import kernel
from ringattractor.engine import VelocityProfile, make_config, run


def time_backend(advance, cfg, t_end: float, repeats: int) -> tuple[float, object]:
    saved = kernel.advance
    kernel.advance = advance
    try:
        best, raster = np.inf, None
        for _ in range(repeats):
            t0 = time.perf_counter()
            raster, _ = run(cfg, VelocityProfile.constant(0.5), t_end)
            best = min(best, time.perf_counter() - t0)
    finally:
        kernel.advance = saved
    return best, raster


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=120)
    ap.add_argument("--t-end", type=float, default=1.0)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    cfg = make_config(n=args.n, init_angle=1.0)
    steps = int(round(args.t_end / cfg.dt))
    t_py, r_py = time_backend(kernel.python_advance, cfg, args.t_end, args.repeats)
    print(f"python  {t_py:8.3f} s  ({steps / t_py:10.0f} steps/s)")
    compiled = kernel.compiled_advance()
    if compiled is None:
        print("cython  not built")
        return
    t_c, r_c = time_backend(compiled, cfg, args.t_end, args.repeats)
    same = np.array_equal(r_py.times, r_c.times) and np.array_equal(r_py.neurons, r_c.neurons)
    print(f"cython  {t_c:8.3f} s  ({steps / t_c:10.0f} steps/s)")
    print(f"speedup {t_py / t_c:.1f}x, identical rasters: {same}")


if __name__ == "__main__":
    main()
