"""Time the compiled kernels against their pure-numpy versions.

    python benchmarks/bench_kernels.py [--sizes 20,60,120] [--widths 32,300] [--repeat 20]

Both paths run the same source; the numpy one is reached through ``py_func``.
With EEGCN_DISABLE_NUMBA set the two columns time the same function.
"""

import argparse
import timeit

import numpy as np

from eegcn import kernels
from eegcn._accel import backend


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_lstm(n, width, repeat, rng):
    xg = rng.normal(scale=0.1, size=(n, 4 * width))
    U = rng.normal(scale=0.05, size=(width, 4 * width))
    fwd = kernels.lstm_forward(xg, U, False)
    dH = rng.normal(size=(n, width))
    rows = []
    for name, fn, args in [("lstm_forward", kernels.lstm_forward, (xg, U, False)),
                           ("lstm_backward", kernels.lstm_backward, (dH, U, *fwd, False))]:
        fn(*args)  # compile outside the timed region
        fast = best_of(lambda: fn(*args), repeat)
        slow = best_of(lambda: fn.py_func(*args), repeat)
        rows.append((name, f"n={n} d_h={width}", fast, slow))
    return rows


def bench_confusion(n, repeat, rng):
    preds, golds = rng.integers(0, 3, n), rng.integers(0, 3, n)
    kernels.confusion_counts(preds, golds, 3)
    fast = best_of(lambda: kernels.confusion_counts(preds, golds, 3), repeat)
    slow = best_of(lambda: kernels.confusion_counts.py_func(preds, golds, 3), repeat)
    return [("confusion_counts", f"n={n}", fast, slow)]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="20,60,120", help="sentence lengths")
    parser.add_argument("--widths", default="32,300", help="LSTM hidden widths")
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)

    rows = []
    for width in (int(w) for w in args.widths.split(",")):
        for n in (int(s) for s in args.sizes.split(",")):
            rows += bench_lstm(n, width, args.repeat, rng)
    rows += bench_confusion(100_000, args.repeat, rng)

    print(f"backend: {backend()}")
    print(f"{'kernel':<18}{'case':<18}{'compiled ms':>12}{'numpy ms':>12}{'speedup':>9}")
    for name, case, fast, slow in rows:
        print(f"{name:<18}{case:<18}{fast * 1e3:>12.3f}{slow * 1e3:>12.3f}{slow / fast:>8.1f}x")


if __name__ == "__main__":
    main()
