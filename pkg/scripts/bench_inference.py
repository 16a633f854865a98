#!/usr/bin/env python3
"""Confirm that filtering cost does not scale with the number of filters.

The forward pass is one shifted gather per footprint tap regardless of how
many filters the bank holds; only selection-table locality changes.
"""

import time

import numpy as np

from bladepde.features import SelectionConfig
from bladepde.grid import ImageGrid
from bladepde.net import FilterBank, Footprint, select_and_apply


def bench(num_orientations, strengths, coherences, size=512, reps=5):
    cfg = SelectionConfig(num_orientations, (0.0,) * (strengths - 1),
                          (0.0,) * (coherences - 1), rho=1.0)
    rng = np.random.default_rng(0)
    bank = FilterBank(rng.normal(0, 0.1, (cfg.num_filters, 25)), Footprint(), cfg)
    img = ImageGrid(rng.uniform(0, 255, (size, size)))
    select_and_apply(bank, img)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        select_and_apply(bank, img)
    return cfg.num_filters, (time.perf_counter() - t0) / reps


def main():
    print(f"{'filters':>8}  {'ms / frame (512x512)':>20}")
    for args in ((2, 1, 1), (24, 3, 3), (24, 3, 9)):
        n, dt = bench(*args)
        print(f"{n:>8}  {dt * 1e3:>20.1f}")


if __name__ == "__main__":
    main()
