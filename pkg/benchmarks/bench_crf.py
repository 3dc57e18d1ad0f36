"""Time the compiled and numpy dense-CRF backends on square grids.

    python3 benchmarks/bench_crf.py --sizes 16,32,48 --labels 4 --repeats 3
"""
import time

import click
import numpy as np

from damagefv import kernels
from damagefv.crf import DenseCrf, default_kernels, energy, mean_field


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


@click.command()
@click.option("--sizes", default="16,32,48", show_default=True, help="grid side lengths")
@click.option("--labels", default=4, show_default=True, type=click.IntRange(2))
@click.option("--iters", default=5, show_default=True, type=click.IntRange(1))
@click.option("--repeats", default=3, show_default=True, type=click.IntRange(1))
@click.option("--seed", default=0, show_default=True, type=int)
def main(sizes, labels, iters, repeats, seed):
    rng = np.random.default_rng(seed)
    backends = sorted(kernels.BACKENDS)
    click.echo(f"backends: {', '.join(backends)}  threads: {kernels.n_threads()}")
    click.echo(f"{'grid':>7} {'backend':>8} {'mean field s':>13} {'energy s':>10} {'max |dQ|':>10}")
    for side in (int(s) for s in sizes.split(",")):
        image = rng.random((side, side))
        crf = DenseCrf(rng.uniform(0, 3, (side, side, labels)), default_kernels(channels=1), image)
        lab = rng.integers(0, labels, (side, side))
        ref = None
        for name in backends:
            t_mf, q = best_of(lambda: mean_field(crf, iters, 0.0, backend=name), repeats)
            t_e, _ = best_of(lambda: energy(crf, lab, name), repeats)
            ref = q.q if ref is None else ref
            diff = float(np.abs(q.q - ref).max())
            click.echo(f"{side:>3}x{side:<3} {name:>8} {t_mf:>13.4f} {t_e:>10.4f} {diff:>10.1e}")


if __name__ == "__main__":
    main()
