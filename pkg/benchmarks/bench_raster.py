"""Compare the compiled and NumPy rasterization kernels.

Times the forward blend and its adjoint on identical random inputs and
verifies the two backends agree before reporting speedups.

    python benchmarks/bench_raster.py --n-splats 2000 --size 128 --repeats 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from splatforest import _kernels


def make_inputs(rng: np.random.Generator, n: int, height: int, width: int):
    mean2d = np.stack([rng.uniform(-2, width + 1, n),
                       rng.uniform(-2, height + 1, n)], axis=1)
    a = rng.uniform(0.8, 6.0, n)
    c = rng.uniform(0.8, 6.0, n)
    b = rng.uniform(-0.5, 0.5, n) * np.sqrt(a * c)
    cov2d = np.stack([a, b, c], axis=1)
    color = rng.uniform(0, 1, (n, 3))
    alpha = rng.uniform(0.05, 0.95, n)
    # kernels expect depth-sorted input; depth itself is not an argument
    background = np.array([1.0, 1.0, 1.0])
    dl_dimage = rng.normal(size=(height, width, 3))
    return mean2d, cov2d, color, alpha, background, dl_dimage


def time_backend(module, inputs, height, width, repeats):
    mean2d, cov2d, color, alpha, background, dl_dimage = inputs
    fwd_times, bwd_times = [], []
    out = None
    grads = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = module.rasterize_forward(mean2d, cov2d, color, alpha,
                                       height, width, background)
        t1 = time.perf_counter()
        image, final_t, last_idx, n_skipped = out
        grads = module.rasterize_backward(mean2d, cov2d, color, alpha,
                                          height, width, background,
                                          final_t, last_idx, dl_dimage)
        t2 = time.perf_counter()
        fwd_times.append(t1 - t0)
        bwd_times.append(t2 - t1)
    return min(fwd_times), min(bwd_times), out, grads


def check_agreement(py_out, cy_out, py_grads, cy_grads) -> None:
    np.testing.assert_allclose(py_out[0], cy_out[0], atol=1e-9)
    np.testing.assert_allclose(py_out[1], cy_out[1], atol=1e-9)
    np.testing.assert_array_equal(py_out[2], cy_out[2])
    assert py_out[3] == cy_out[3]
    for pg, cg in zip(py_grads[:4], cy_grads[:4]):
        np.testing.assert_allclose(pg, cg, atol=1e-8)
    np.testing.assert_array_equal(py_grads[4], cy_grads[4])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-splats", type=int, default=2000)
    parser.add_argument("--size", type=int, default=128,
                        help="image is size x size")
    parser.add_argument("--repeats", type=int, default=5,
                        help="best-of-N timing")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    height = width = args.size
    inputs = make_inputs(np.random.default_rng(args.seed), args.n_splats,
                         height, width)

    py = _kernels.get_backend("python")
    try:
        cy = _kernels.get_backend("cython")
    except ImportError:
        print("compiled kernel not built; timing the NumPy backend only")
        fwd, bwd, _, _ = time_backend(py, inputs, height, width, args.repeats)
        print(f"python   forward {fwd * 1e3:8.2f} ms   "
              f"backward {bwd * 1e3:8.2f} ms")
        return 0

    py_fwd, py_bwd, py_out, py_grads = time_backend(py, inputs, height, width,
                                                    args.repeats)
    cy_fwd, cy_bwd, cy_out, cy_grads = time_backend(cy, inputs, height, width,
                                                    args.repeats)
    check_agreement(py_out, cy_out, py_grads, cy_grads)

    print(f"{args.n_splats} splats on {width}x{height}, best of "
          f"{args.repeats}:")
    print(f"python   forward {py_fwd * 1e3:8.2f} ms   "
          f"backward {py_bwd * 1e3:8.2f} ms")
    print(f"cython   forward {cy_fwd * 1e3:8.2f} ms   "
          f"backward {cy_bwd * 1e3:8.2f} ms")
    print(f"speedup  forward {py_fwd / cy_fwd:7.1f}x   "
          f"backward {py_bwd / cy_bwd:7.1f}x")
    print("outputs agree across backends")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
