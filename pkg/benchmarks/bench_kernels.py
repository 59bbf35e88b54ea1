"""Compare the compiled kernels with the numpy fallback.

Times one loss-and-gradient evaluation per minibatch shape, then a full local
epoch through ``train_local``, for every available backend:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --features 175 --hidden 64 16 --repeat 7

Results are printed as a table; ``--json`` writes them to a file as well.
"""

import argparse
import json
import platform
import timeit

import numpy as np

from fedhar.neural import BACKENDS, MlpArchitecture, OptimizerConfig, init_params, train_local
from fedhar.neural._backend import get_kernels


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench(args):
    arch = MlpArchitecture((args.features, *args.hidden, args.classes))
    params = init_params(arch, 0)
    rng = np.random.default_rng(0)
    rows = []
    for backend in sorted(BACKENDS):
        kern = get_kernels(backend)
        for batch in args.batch:
            x = np.ascontiguousarray(rng.normal(size=(batch, args.features)))
            y = rng.integers(0, args.classes, batch).astype(np.intc)
            seconds = best_of(lambda: kern.loss_and_grad(params, arch.layer_sizes, x, y, 0.01),
                              args.repeat, args.number)
            rows.append({"backend": backend, "task": f"loss+grad batch {batch}", "seconds": seconds})
        x = rng.normal(size=(args.epoch_samples, args.features))
        y = rng.integers(0, args.classes, args.epoch_samples)
        opt = OptimizerConfig()
        seconds = best_of(lambda: train_local(params, arch, x, y, 1, 32, opt, 0, backend=backend),
                          args.repeat, 1)
        rows.append({"backend": backend, "task": f"epoch {args.epoch_samples} samples bs 32",
                     "seconds": seconds})
    return arch, rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--features", type=int, default=175)
    parser.add_argument("--hidden", type=int, nargs="+", default=[64, 16])
    parser.add_argument("--classes", type=int, default=6)
    parser.add_argument("--batch", type=int, nargs="+", default=[32, 128, 256])
    parser.add_argument("--epoch-samples", type=int, default=4000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=200)
    parser.add_argument("--json", help="also write the results here")
    args = parser.parse_args(argv)

    arch, rows = bench(args)
    print(f"architecture {arch.layer_sizes}, {arch.n_params} parameters, python {platform.python_version()}")
    tasks = list(dict.fromkeys(r["task"] for r in rows))
    backends = sorted(BACKENDS)
    print(f"{'task':<34}" + "".join(f"{b:>14}" for b in backends) + ("       speedup" if len(backends) > 1 else ""))
    for task in tasks:
        times = {r["backend"]: r["seconds"] for r in rows if r["task"] == task}
        line = f"{task:<34}" + "".join(f"{times[b] * 1e6:>12.1f}us" for b in backends)
        if "cython" in times:
            line += f"{times['python'] / times['cython']:>13.2f}x"
        print(line)
    if "cython" not in BACKENDS:
        print("compiled kernels not built; only the numpy fallback was timed")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"layer_sizes": list(arch.layer_sizes), "results": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
