"""The scoring suite on benchmark counts for Stable Diffusion 1.0/1.5/2.0/XL.

Feeds the per-model verdict counts through both metric suites and the
two-proportion Z-test that decides which improvements are statistically
real.
"""
from winovis.metrics import (
    VerdictCounts,
    binary_metrics,
    multiclass_metrics,
    percent_str,
    ztest_for_metric,
)

MODELS = {
    "SD 1.0": VerdictCounts(captioned=178, overlapped=24, correct=24, incorrect=24, neither=250),
    "SD 1.5": VerdictCounts(captioned=135, overlapped=36, correct=38, incorrect=31, neither=260),
    "SD 2.0": VerdictCounts(captioned=160, overlapped=71, correct=55, incorrect=42, neither=172),
    "SD XL": VerdictCounts(captioned=2, overlapped=73, correct=1, incorrect=0, neither=424),
}

print(f"{'model':8} {'capt':>5} {'ovl':>5} {'eval':>5} | "
      f"{'prec':>6} {'recall':>6} {'f1':>6} {'cert':>6}")
for name, counts in MODELS.items():
    m = binary_metrics(counts)
    flag = " (low support)" if counts.decisions() < 5 else ""
    print(f"{name:8} {counts.captioned:5} {counts.overlapped:5} {counts.evaluable():5} | "
          f"{percent_str(m.precision):>6} {percent_str(m.recall):>6} "
          f"{percent_str(m.f1):>6} {percent_str(m.certainty):>6}{flag}")

print("\nmulti-class view (neither outcomes not penalized), from the confusion counts:")
MULTICLASS = {
    "SD 1.0": (16, 8, 16, 8),
    "SD 1.5": (25, 13, 19, 12),
    "SD 2.0": (29, 26, 24, 18),
}
for name, counts in MULTICLASS.items():
    m = multiclass_metrics(*counts)
    print(f"{name:8} accuracy {percent_str(m.accuracy)}  "
          f"macro-P {percent_str(m.macro_precision)}  "
          f"macro-R {percent_str(m.macro_recall)}  "
          f"macro-F1 {percent_str(m.macro_f1)}")

print("\nis SD 2.0 really better than SD 1.5? (pooled two-proportion Z-test)")
for metric in ("precision", "recall", "certainty"):
    r = ztest_for_metric(MODELS["SD 2.0"], MODELS["SD 1.5"], metric)
    stars = "significant at p<0.01" if r.p_two_sided < 0.01 else "not significant"
    print(f"  {metric:>9}: z = {r.z:+.2f}, p = {r.p_two_sided:.2e}  ({stars})")
print("  (no test is offered for F1: it is not a proportion)")
