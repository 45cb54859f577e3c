"""Regenerates stats_reference.json: random ratings matrices and paired
samples with alpha and Wilcoxon p-values from krippendorff and scipy."""
import json

import krippendorff
import numpy as np
from scipy.stats import wilcoxon

rng = np.random.default_rng(20240611)
out = {"alpha": [], "wilcoxon": []}

while len(out["alpha"]) < 20:
    items = int(rng.integers(8, 31))
    raters = int(rng.integers(2, 6))
    # raters agree around a per-item level, with noise and gaps
    level = rng.integers(1, 6, size=items)
    m = np.clip(level[:, None] + rng.integers(-1, 2, size=(items, raters)), 1, 5).astype(float)
    m[rng.random((items, raters)) < 0.15] = np.nan
    if np.sum(np.sum(~np.isnan(m), axis=1) >= 2) < 2 or len(np.unique(m[~np.isnan(m)])) < 2:
        continue
    rel = m.T
    row = {
        "cells": [[None if np.isnan(v) else int(v) for v in r] for r in m],
        "ordinal": krippendorff.alpha(reliability_data=rel, level_of_measurement="ordinal", value_domain=[1, 2, 3, 4, 5]),
        "interval": krippendorff.alpha(reliability_data=rel, level_of_measurement="interval", value_domain=[1, 2, 3, 4, 5]),
    }
    out["alpha"].append(row)

for i in range(20):
    n = int(rng.integers(6, 41))
    a = rng.normal(0.3, 1.0, n)
    b = rng.normal(0.0, 1.0, n)
    if n > 25 and i % 2 == 0:
        # ties and zeros exercise the corrected normal approximation
        a, b = np.round(a, 1), np.round(b, 1)
    d = a - b
    nz = int(np.sum(d != 0))
    method = "exact" if nz <= 25 else "approx"
    res = wilcoxon(a, b, zero_method="wilcox", correction=False, method=method)
    out["wilcoxon"].append({"a": a.tolist(), "b": b.tolist(), "p": float(res.pvalue), "exact": method == "exact"})

with open("stats_reference.json", "w") as f:
    json.dump(out, f, indent=1)
