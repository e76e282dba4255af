"""Timing trends for the labeling solvers and the online observation window.

Two tables are printed:

- ``scaling``: median wall time of the joint and node-wise solvers on random
  signed graphs of growing size, and their ratio. The ratio should grow with n.
- ``window``: online MOTA and wall time on the four-lane synthetic scenario for
  growing observation windows.

Usage::

    PYTHONPATH=. python scripts/benchmark_scaling.py --sizes 100 200 400 --repeats 5
"""
from __future__ import annotations

import argparse
import logging
import time
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from app.models.config import JointConfig, NodewiseConfig, PipelineConfig
from app.services.dc_joint import solve_joint
from app.services.dc_nodewise import solve_nodewise
from app.services.graphs import EffectiveWeights
from app.services.pipeline import track_online
from app.services.synth import generate_scenario

logger = logging.getLogger("benchmark")


def random_weights(n: int, degree: float = 6.0, negative: float = 0.2, seed: int = 0) -> EffectiveWeights:
    """Sparse signed weights with about ``degree`` out-edges per node."""
    rng = np.random.default_rng(seed)
    W = sparse.random(n, n, density=min(1.0, degree / n), random_state=rng, format="csr")
    W.setdiag(0.0)
    W.eliminate_zeros()
    signs = np.where(rng.random(W.nnz) < negative, -1.0, 1.0)
    W.data = W.data * signs
    return EffectiveWeights.from_matrix(W)


def _median_time(fn: Callable[[], object], repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def scaling(sizes: Sequence[int], repeats: int) -> pd.DataFrame:
    rows = []
    for n in sizes:
        eff = random_weights(n, seed=n)
        joint = _median_time(lambda: solve_joint(eff, JointConfig(t_joint=50)), repeats)
        nodewise = _median_time(lambda: solve_nodewise(eff, NodewiseConfig(t_con=50)), repeats)
        rows.append({"n": n, "joint_s": joint, "nodewise_s": nodewise, "ratio": joint / nodewise})
        logger.info("n=%d joint=%.3fs nodewise=%.3fs", n, joint, nodewise)
    return pd.DataFrame(rows)


def window_tradeoff(windows: Sequence[int], seed: int) -> pd.DataFrame:
    scenario = generate_scenario("parallel", seed)
    cfg = PipelineConfig().with_updates(online={"image_bounds": scenario.image_bounds})
    rows = []
    for window in windows:
        start = time.perf_counter()
        result = track_online(scenario.detections, cfg, scenario.ground_truth, window=window)
        elapsed = time.perf_counter() - start
        rows.append({"T_o": window, "mota": result.report.mota, "seconds": elapsed})
    return pd.DataFrame(rows)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--windows", type=int, nargs="+", default=[5, 10, 25, 50, 100])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    table = scaling(args.sizes, args.repeats)
    print("scaling\n", table.to_string(index=False))
    if not table["ratio"].is_monotonic_increasing:
        logger.warning("joint/node-wise time ratio is not increasing with n")

    trade = window_tradeoff(args.windows, args.seed)
    print("window\n", trade.to_string(index=False))


if __name__ == "__main__":
    main()
