"""Deterministic quasi-random sample points in a chart's domain box."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc

DEFAULT_SAMPLES = 128


def halton_points(chart, count: int = DEFAULT_SAMPLES, seed: int | None = None,
                  box=None) -> np.ndarray:
    """``count`` Halton points scaled into ``box`` (default: the chart's domain box).

    Without a seed the unscrambled sequence is used and its first point (the
    origin of the unit cube) is skipped.  A seed selects a scrambled sequence.
    """
    box = np.asarray(chart.domain_box if box is None else box, dtype=float)
    dim = box.shape[0]
    if seed is None:
        sampler = qmc.Halton(d=dim, scramble=False)
        sampler.fast_forward(1)
    else:
        sampler = qmc.Halton(d=dim, scramble=True, seed=seed)
    unit = sampler.random(count)
    return box[:, 0] + unit * (box[:, 1] - box[:, 0])
