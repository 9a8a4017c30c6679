"""Microbenchmark for the numeric kernels.

Times each kernel on the shapes the training loops actually hit (batch 64
dense layers, full-set evaluation passes) under both the compiled
extension and the NumPy fallback, then optionally times a short
end-to-end training run under each. Run as `python -m ace_lab.bench`.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ._kernels import available_backends, numpy_backend
from .rng import Rng

# (name, shape of the primary operand) for the per-op table
UNARY_SHAPES = [("batch", (64, 64)), ("full-set", (1000, 64))]
GEMM_SHAPES = [
    ("clf-in", (64, 2), (2, 64)),
    ("hidden", (64, 64), (64, 64)),
    ("pce-dec", (64, 128), (128, 64)),
    ("eval", (1000, 64), (64, 64)),
]


def _backend(name: str):
    if name == "ext":
        from ._kernels import ext_backend

        return ext_backend
    return numpy_backend


def _time(fn, min_seconds: float = 0.05) -> float:
    """Median per-call seconds, adaptively repeated to fill min_seconds."""
    fn()  # warm up
    reps, elapsed = 1, 0.0
    while True:
        t0 = time.perf_counter()
        for _ in range(reps):
            fn()
        elapsed = time.perf_counter() - t0
        if elapsed >= min_seconds:
            return elapsed / reps
        reps = max(reps * 2, int(reps * min_seconds / max(elapsed, 1e-9)))


def bench_kernels(backends: list[str], min_seconds: float) -> list[dict]:
    rng = Rng(0, "bench")
    rows = []
    for label, sa, sb in GEMM_SHAPES:
        a = rng.normal(sa)
        b = rng.normal(sb)
        row = {"op": f"gemm[{label} {sa[0]}x{sa[1]}@{sb[0]}x{sb[1]}]"}
        for name in backends:
            k = _backend(name)
            row[name] = _time(lambda k=k: k.gemm(a, b), min_seconds)
        rows.append(row)
    for label, shape in UNARY_SHAPES:
        x = rng.normal(shape)
        xp = np.abs(x) + 0.1  # keep log/sqrt in-domain
        for op in ("relu", "sigmoid", "tanh", "exp", "log", "sqrt", "softmax_rows"):
            arg = xp if op in ("log", "sqrt") else x
            row = {"op": f"{op}[{label} {shape[0]}x{shape[1]}]"}
            for name in backends:
                fn = getattr(_backend(name), op)
                row[name] = _time(lambda fn=fn, arg=arg: fn(arg), min_seconds)
            rows.append(row)
    g = rng.normal((64, 64))
    row = {"op": "adam_update[64x64]"}
    for name in backends:
        k = _backend(name)
        p = rng.normal((64, 64))
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        row[name] = _time(
            lambda k=k, p=p, m=m, v=v: k.adam_update(
                p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1
            ),
            min_seconds,
        )
    rows.append(row)
    return rows


def bench_training(backends: list[str]) -> list[dict]:
    """Wall-clock a short classifier fit under each backend.

    The backend is chosen at import time, so each run happens in a
    subprocess with ACE_LAB_BACKEND pinned.
    """
    import subprocess
    import sys

    script = (
        "import time; t0 = time.perf_counter()\n"
        "from ace_lab.rng import Rng\n"
        "from ace_lab.data import two_moons, stratified_split, Standardizer\n"
        "from ace_lab.classifier import ClassifierConfig, train_classifier\n"
        "root = Rng(0)\n"
        "ds = two_moons(400, 0.1, root.child('data'))\n"
        "train, test = stratified_split(ds, 0.5, root.child('split'))\n"
        "std = Standardizer.fit(train.x)\n"
        "train, test = std.apply_set(train), std.apply_set(test)\n"
        "cfg = ClassifierConfig(epochs=20)\n"
        "train_classifier(train, test, cfg, root.child('clf'))\n"
        "print(time.perf_counter() - t0)\n"
    )
    rows = []
    for name in backends:
        import os

        env = dict(os.environ, ACE_LAB_BACKEND=name)
        out = subprocess.run(
            [sys.executable, "-c", script],
            capture_output=True,
            text=True,
            env=env,
            check=True,
        )
        rows.append({"run": "train-classifier[n=400, 20 epochs]", name: float(out.stdout.strip())})
    return rows


def _print_table(rows: list[dict], key: str, backends: list[str]) -> None:
    width = max(len(r[key]) for r in rows)
    header = f"{key:<{width}}  " + "  ".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        cells = []
        for b in backends:
            cells.append(f"{r[b] * 1e6:>10.1f}us" if b in r else f"{'-':>12}")
        line = f"{r[key]:<{width}}  " + "  ".join(cells)
        if len(backends) == 2 and all(b in r for b in backends):
            line += f"  {r[backends[1]] / r[backends[0]]:>7.2f}x"
        print(line)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--min-seconds",
        type=float,
        default=0.05,
        help="minimum sampling time per kernel measurement",
    )
    parser.add_argument(
        "--train",
        action="store_true",
        help="also wall-clock a short end-to-end training run per backend",
    )
    args = parser.parse_args(argv)

    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    if "ext" not in backends:
        print("note: compiled extension unavailable, timing the fallback only")
    print()
    _print_table(bench_kernels(backends, args.min_seconds), "op", backends)
    if args.train:
        print()
        trains = bench_training(backends)
        merged: dict = {"run": trains[0]["run"]}
        for r in trains:
            merged.update(r)
        _print_table([merged], "run", backends)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
