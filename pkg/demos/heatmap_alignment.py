"""
Heatmaps and ground-truth masks
===============================

An 8x8 "image" is tiled by four 4x4 superpixels. The model responds to the
top-left quadrant, and a radiologist-style mask marks that quadrant. We
turn the surrogate into a positive-evidence heatmap and score it.
"""

import numpy as np

from modex import (BlackBoxSession, TargetSelector, build_instance_spec, build_local_dataset,
                   explain, fit, make_synthetic, positive_evidence_map)
from modex.metrics import contrast_heat_z, iou_auc, pixel_ap, topk_overlap

rasters = np.zeros((4, 8, 8), dtype=bool)
for j, (r, c) in enumerate([(0, 0), (0, 4), (4, 0), (4, 4)]):
    rasters[j, r:r + 4, c:c + 4] = True

spec = build_instance_spec(["image", "report"], [4, 5])
w = [3.0, 0.5, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0]
session = BlackBoxSession(make_synthetic("linear", spec, weights=w), spec)
data = build_local_dataset(spec, session, TargetSelector(), 800, seed=2)
expl = explain(fit(data, spec), spec)

H, degenerate = positive_evidence_map(expl, spec, "image", rasters)
print(np.round(H, 2))

G = rasters[0]
print("CH-z, CH:", contrast_heat_z(H, G, rolls=None))
print("pixel AP:", pixel_ap(H, G))
print("IoU-AUC:", iou_auc(H, G)[0])
beta_img = expl.signed_coefficients[spec.slices()[0]]
print(topk_overlap(rasters, beta_img, G, k=2, tau=0.1))
