"""
Scoring counts against manual counts
====================================

R^2 here is 1 - SS_res / SS_tot around the mean of the manual counts, which
is not the squared correlation: a biased predictor can correlate perfectly
and still score badly.
"""
import numpy as np

from masc.evaluation import GroundTruthRow, join_and_eval, r_squared

print("R2 of (10,20,30) vs (12,18,33):", r_squared([10, 20, 30], [12, 18, 33]))

actual = np.array([18, 22, 25, 19, 30, 27])
shifted = actual + 5
print("shifted by 5: R2 =", round(r_squared(actual, shifted), 4),
      " squared correlation =", round(np.corrcoef(actual, shifted)[0, 1] ** 2, 4))

predicted = {(1, 1): 18, (1, 2): 21, (1, 3): 26, (2, 1): 19, (2, 2): 31}
truth = [GroundTruthRow(1, k + 1, int(v)) for k, v in enumerate(actual[:3])]
truth += [GroundTruthRow(2, k + 1, int(v)) for k, v in enumerate(actual[3:])]
res = join_and_eval(predicted, truth)
print(res.to_csv())
print(res.summary())
