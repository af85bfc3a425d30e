"""The data pipeline: synthetic series, MCAR masking, windows, normalization.

Run:  python demos/03_data_and_masking.py
"""

import numpy as np

from maginet import data

# A week of 5-minute data for 8 sensors on a ring with two chords.
graph = data.synthetic_graph(8, extra_edges=2, seed=7)
series = data.generate_synthetic(8, 2016, graph, seed=7)
print(f"series: {series.n_nodes} nodes x {series.n_steps} steps, "
      f"mean {series.values.mean():.2f}, std {series.values.std():.2f}")

# Hide exactly half of the observed entries, once, with a seed. The mask
# is drawn over the whole series and persisted so every later stage sees
# the same hidden set.
mask = data.draw_eval_mask(series, ratio=0.5, seed=7)
print(f"hidden entries: {int(mask.sum())} of {int(series.observed().sum())}")

# Windows slice the series and the mask together. m marks what the model
# may read; eval_mask marks hidden positions whose truth is kept for
# scoring; stored values at m = 0 are zeroed and never read.
windows = data.make_windows(series, mask, width=12, stride=12)
w = windows[0]
print(f"{len(windows)} windows; window 0: m sum {int(w.m.sum())}, "
      f"eval sum {int(w.eval_mask.sum())}")
print("x at hidden slots is zeroed:", np.unique(w.x[w.m == 0.0]))

# Chronological split, then z-score statistics from observed training
# entries only. Metrics always go back through inverse().
train_ws, valid_ws, test_ws = data.split(windows, (0.7, 0.2, 0.1))
print(f"split: {len(train_ws)}/{len(valid_ws)}/{len(test_ws)}")
norm = data.Normalizer.fit(train_ws)
print(f"normalizer: mean {norm.mean[0]:.3f}, std {norm.std[0]:.3f}")
roundtrip = norm.inverse(norm.transform(series.values[0, :5, 0]))
print("inverse(transform(x)) == x:", np.allclose(roundtrip, series.values[0, :5, 0]))
