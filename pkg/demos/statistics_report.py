"""
Paired significance and the metrics table
=========================================

A one-sided Wilcoxon signed-rank test asks whether per-case scores improve
after adding synthetic training data. Small samples get exact p-values.
Metrics are rendered as a tab-separated table with direction arrows.
"""

import numpy as np

from lge_synthlab import statsreport

rng = np.random.default_rng(5)
baseline = np.clip(rng.normal(0.90, 0.02, 15), 0, 1)
treatment = np.clip(baseline + rng.normal(0.02, 0.015, 15), 0, 1)

res = statsreport.wilcoxon_signed_rank(baseline, treatment, alternative="greater")
print(res)
for name, scores in (("baseline", baseline), ("treatment", treatment)):
    mean, std = statsreport.summarize(scores)
    print(f"{name}: {mean:.3f} ± {std:.4f}")

rows = [
    statsreport.ModelRow("model A", 12.5, 8.25, 0.79, 23.1),
    statsreport.ModelRow("model B", 4.2, 2.5, 0.83, 24.8),
]
report = statsreport.MetricsReport(
    models=rows,
    tests=[statsreport.TestRow("dice", res.W, res.p, res.n, res.method)])
print(statsreport.render_report(report, "text-table"))
