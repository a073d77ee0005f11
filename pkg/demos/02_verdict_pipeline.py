"""The four-stage verdict pipeline, one scenario per outcome.

Synthetic bundles with planted attention discs make every stage
transparent: the expected verdict is known from the disc geometry alone,
and the pipeline must land on exactly that verdict.
"""
from winovis.fixtures import synth_suite, synth_bundle
from winovis.pipeline import evaluate_instance

print("stage 1  captioned?   human flag short-circuits everything")
print("stage 2  threshold    90th-percentile -> binary masks per term")
print("stage 3  overlap      entity-vs-entity IoU > 0.4 -> unscorable")
print("stage 4  decision     pronoun-vs-entity IoU > 0.4 -> referent\n")

for spec in synth_suite(8, seed=123):
    bundle, expected = synth_bundle(spec)
    verdict = evaluate_instance(spec.id, bundle.role_heatmaps(), spec.gold,
                                bundle.caption_flag)
    assert verdict.status is expected.status

    def fmt(x):
        return "   - " if x is None else f"{x:.3f}"

    print(f"{spec.id}  ents={fmt(verdict.iou_entities)}  "
          f"p~e1={fmt(verdict.iou_pronoun_e1)}  p~e2={fmt(verdict.iou_pronoun_e2)}  "
          f"gold={spec.gold.value}  ->  {verdict.status.value}")

print("\nnote the exact-tie row: both pronoun IoUs clear the boundary with the")
print("same value, so no entity is 'higher' and the verdict stays neither.")
