"""Compare the numba and numpy kernel backends.

The backend is frozen at import time, so each measurement runs in a child
process with ``BNNOOD_BACKEND`` set explicitly.  The parent collects the
per-task timings and prints a side-by-side table with speedups.

Usage::

    python3 benchmarks/bench_backends.py            # run both, print table
    python3 benchmarks/bench_backends.py --repeats 5
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER_FLAG = "--worker"


# ---------------------------------------------------------------------------
# worker: runs under one fixed backend and prints JSON timings
# ---------------------------------------------------------------------------


def _best_of(repeats, fn):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_worker(repeats: int):
    import numpy as np

    from bnnood import backend, data_io, kernels, posterior, scores, trainer
    from bnnood import variational_net as vn

    kernels.warmup()  # JIT compile up front so timings measure steady state
    rng = np.random.default_rng(0)

    flat = rng.standard_normal(5_000_000)
    tensor = rng.standard_normal((500, 2000, 10))
    pl = posterior.PosteriorLogits(tensor)

    timings = {
        "softplus 5e6": _best_of(repeats, lambda: kernels.softplus(flat)),
        "entropy [500,2000,10]": _best_of(
            repeats, lambda: kernels.entropy_lastaxis(tensor)),
        "mean softmax [500,2000,10]": _best_of(
            repeats, lambda: kernels.mean_softmax_axis0(tensor)),
        "all scores M=500 B=2000": _best_of(
            repeats, lambda: scores.compute_all_scores(pl)),
    }

    centers = np.array([[0.0, 2.5], [-2.2, -1.2], [2.2, -1.2]])
    blobs = data_io.make_gaussian_blobs(3, 200, centers, 0.8, seed=1)
    config = trainer.TrainConfig(epochs=20, batch_size=128, seed=0)

    def short_train():
        params = vn.init_params(vn.mlp([2, 32, 32, 3]), seed=2)
        trainer.train(params, blobs, config)

    timings["train 600pts 20 epochs"] = _best_of(max(1, repeats // 3),
                                                 short_train)
    json.dump({"backend": backend.ACTIVE, "timings": timings}, sys.stdout)


# ---------------------------------------------------------------------------
# parent: one subprocess per backend, aligned comparison table
# ---------------------------------------------------------------------------


def measure_backend(name: str, repeats: int) -> dict:
    env = dict(os.environ, BNNOOD_BACKEND=name)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), WORKER_FLAG,
         "--repeats", str(repeats)],
        capture_output=True, text=True, env=env)
    if proc.returncode != 0:
        raise RuntimeError(f"{name} worker failed:\n{proc.stderr}")
    return json.loads(proc.stdout)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(WORKER_FLAG, action="store_true",
                        help=argparse.SUPPRESS)
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repetitions per task (best is kept)")
    args = parser.parse_args(argv)

    if args.worker:
        run_worker(args.repeats)
        return 0

    results = {}
    for name in ("numpy", "numba"):
        print(f"timing {name} backend ...", file=sys.stderr)
        report = measure_backend(name, args.repeats)
        if report["backend"] != name:
            raise RuntimeError(
                f"requested {name} but worker selected {report['backend']}")
        results[name] = report["timings"]

    tasks = list(results["numpy"])
    rows = [["task", "numpy", "numba", "speedup"]]
    for task in tasks:
        t_np, t_nb = results["numpy"][task], results["numba"][task]
        rows.append([task, f"{t_np * 1e3:.2f} ms", f"{t_nb * 1e3:.2f} ms",
                     f"{t_np / t_nb:.2f}x"])
    widths = [max(len(r[c]) for r in rows) for c in range(4)]
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return 0


if __name__ == "__main__":
    sys.exit(main())
