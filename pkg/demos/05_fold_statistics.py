"""Fold aggregation and paired significance testing on published numbers.

Feeds externally reported per-fold speaker-classification accuracies
(a 5-fold comparison of raw vs. decomposed representations) through the
aggregation and paired t-test machinery. The t CDF comes from our own
continued-fraction incomplete beta, accurate to ~1e-14.

Run: python3 demos/05_fold_statistics.py
"""

from etakit.probe import aggregate_folds, paired_t_test, student_t_two_tailed

raw_folds_pct = [83.46, 82.33, 80.85, 83.30, 81.55]
eta_folds_pct = [53.82, 55.14, 58.77, 53.94, 56.96]

rep_raw = aggregate_folds([v / 100 for v in raw_folds_pct])
rep_eta = aggregate_folds([v / 100 for v in eta_folds_pct])
print(f"raw folds: {raw_folds_pct} -> mean {100 * rep_raw.mean:.2f}% "
      f"± {100 * rep_raw.std:.2f}")
print(f"eta folds: {eta_folds_pct} -> mean {100 * rep_eta.mean:.2f}% "
      f"± {100 * rep_eta.std:.2f}")

test = paired_t_test(raw_folds_pct, eta_folds_pct)
print(f"paired t-test: t={test.t_statistic:.2f}, dof={test.dof}, "
      f"p={test.p_value:.3e}")
print(f"significant at 0.05: {test.p_value < 0.05}")

# the same tail probability straight from the CDF helper
print("two-tailed tail mass at |t| for 4 dof:",
      f"{student_t_two_tailed(test.t_statistic, 4):.3e}")

# equivalent CLI invocation:
#   eta probe --folds-override "83.46,82.33,80.85,83.30,81.55" \
#             "53.82,55.14,58.77,53.94,56.96"
