"""Compare the compiled and numpy kernel backends.

Times col2im (transposed-convolution scatter) and im2col (its adjoint
gather) on every desk64 layer shape, then a full generator forward and
backward pass with each backend swapped in.

    python3 benchmarks/bench_kernels.py [--batch 10] [--repeat 5] [--dtype float32]
"""
import argparse
import timeit

import numpy as np

from dynrecon import backend
from dynrecon.generator import backward, build_generator, forward, preset_geometry


def layer_shapes(d, latent_dim):
    size = 1
    for c_in, c_out, k, stride, pad in preset_geometry("desk64", d, latent_dim):
        out = (size - 1) * stride - 2 * pad + k
        yield c_in, c_out, k, stride, pad, size, out
        size = out


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_layers(impls, batch, dtype, repeat, d=16, latent_dim=2):
    rng = np.random.default_rng(0)
    print(f"{'layer':>5} {'k/s/p':>7} {'in->out':>9} " +
          " ".join(f"{n + ' c2i':>12} {n + ' i2c':>12}" for n in impls) + "   speedup")
    for i, (c_in, c_out, k, stride, pad, H, Ho) in enumerate(layer_shapes(d, latent_dim)):
        cols = rng.standard_normal((c_out, k, k, batch, H, H)).astype(dtype)
        grad = rng.standard_normal((batch, c_out, Ho, Ho)).astype(dtype)
        times = {}
        for name, impl in impls.items():
            t1 = best_of(lambda: impl.col2im(cols, stride, pad, Ho, Ho), repeat)
            t2 = best_of(lambda: impl.im2col(grad, k, stride, pad, H, H), repeat)
            times[name] = (t1, t2)
        cells = " ".join(f"{1e3 * a:10.3f}ms {1e3 * b:10.3f}ms" for a, b in times.values())
        ratio = ""
        if len(times) == 2:
            (pa, pb), (ca, cb) = times["python"], times["cython"]
            ratio = f"   {(pa + pb) / (ca + cb):5.2f}x"
        print(f"{i:>5} {k}/{stride}/{pad:<3} {H:>3}->{Ho:<4} {cells}{ratio}")


def bench_generator(impls, batch, dtype, repeat, d=16):
    params = build_generator("desk64", d, seed=0).astype(dtype)
    Z = np.random.default_rng(1).standard_normal((batch, params.latent_dim))
    saved = backend._impl
    try:
        for name, impl in impls.items():
            backend._impl = impl

            def step():
                out, cache = forward(params, Z, keep=True)
                backward(params, cache, np.ones_like(out))

            t = best_of(step, repeat)
            print(f"desk64 forward+backward, batch {batch}, {name:>6}: {1e3 * t:8.1f} ms")
    finally:
        backend._impl = saved


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = parser.parse_args(argv)
    impls = {"python": backend.get_backend("python")}
    try:
        impls["cython"] = backend.get_backend("cython")
    except ImportError:
        print("compiled extension not built; timing the numpy backend only")
    dtype = np.dtype(args.dtype)
    print(f"active backend: {backend.BACKEND}, dtype {dtype}, batch {args.batch}\n")
    bench_layers(impls, args.batch, dtype, args.repeat)
    print()
    bench_generator(impls, args.batch, dtype, args.repeat)


if __name__ == "__main__":
    main()
