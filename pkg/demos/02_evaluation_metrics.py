"""Tour of the evaluation metrics: ranking quality, abstention, calibration.

Every metric reads scores under one convention (higher = more anomalous,
anomalies are the positive class) so no caller ever flips signs.
"""

import numpy as np

from oodeval import (
    aupr,
    auroc,
    aurra,
    evaluate,
    fpr_at_recall,
    l2_calibration_error,
    rra_curve,
)

print("=== ranking metrics on a 6-item toy problem ===")
scores = np.array([4.0, 3.0, 2.0, 1.0, 1.5, 0.5])
labels = np.array([1, 1, 1, 1, 0, 0])
print(f"scores = {scores.tolist()}")
print(f"labels = {labels.tolist()}  (1 = anomaly)")
print(f"  AUROC  = {auroc(scores, labels):.4f}   "
      "(P[random anomaly outscores random normal])")
print(f"  AUPR   = {aupr(scores, labels):.4f}   (average precision)")
print(f"  FPR95  = {fpr_at_recall(scores, labels, 0.95):.4f}   "
      "(false alarms at 95% recall)")
print("To reach 95% recall the threshold must drop to 1.0, which also flags")
print("the normal item at 1.5 -> half the normals become false positives.\n")

print("=== chance levels depend on class balance ===")
rng = np.random.default_rng(1)
n, n_pos = 12000, 2000
random_labels = np.r_[np.ones(n_pos, dtype=int), np.zeros(n - n_pos, dtype=int)]
random_scores = rng.random(n)
print(f"uninformative scores, {n_pos}/{n} positives:")
print(f"  AUROC = {auroc(random_scores, random_labels):.3f}  (always ~0.5)")
print(f"  AUPR  = {aupr(random_scores, random_labels):.3f}  "
      f"(~ positive fraction {n_pos / n:.3f})\n")

print("=== one-call report ===")
report = evaluate(scores, labels)
print(f"  {report}\n")

print("=== abstention: the response-rate accuracy curve ===")
confidences = rng.random(2000)
correct = (rng.random(2000) < confidences ** 0.5).astype(int)
curve = rra_curve(confidences, correct)
for rate in (0.1, 0.5, 1.0):
    idx = int(rate * 100) - 1
    print(f"  answer the top {int(rate * 100):3d}% most-confident "
          f"-> accuracy {curve.accuracies[idx]:.3f}")
print(f"  AURRA (area under the curve) = {aurra(curve):.3f}")
print("A classifier with useful confidences gains accuracy as it abstains.\n")

print("=== calibration ===")
well = l2_calibration_error(confidences, (rng.random(2000) < confidences).astype(int))
over = l2_calibration_error(np.full(2000, 0.99), (rng.random(2000) < 0.6).astype(int))
print(f"  calibrated synthetic:   L2 error = {well:.3f}")
print(f"  overconfident (99% sure, 60% right): L2 error = {over:.3f}")
