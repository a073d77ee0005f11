"""The corpus construction cycle against a scripted model.

Shows the assembled prompt, runs the batch cycle with a canned transcript
(one malformed candidate, one rule violation, one near-duplicate), and
prints the audit trail the cycle keeps for every request.
"""
import json

from winovis.corpus import (
    ScriptedClient,
    build_prompt,
    default_template,
    redundancy_scan,
    run_cycle,
    validate_instance,
)

template = default_template(batch_size=5)
prompt = build_prompt(template, start_index=1)
print("=== prompt head ===")
print("\n".join(prompt.splitlines()[:6]))
print(f"... ({len(prompt)} characters total; five numbered rules included)\n")


def obj(statement, options, answer, snippet="it was heavy"):
    return json.dumps({"statement": statement, "pronoun": "it", "snippet": snippet,
                       "options": options, "answer": answer, "reason": "world knowledge"})


response = "\n".join([
    "Here are the sentences you asked for:",
    obj("The crane lifted the boulder because it was sturdy.", ["crane", "boulder"], 0,
        snippet="it was sturdy"),
    obj("The donkey hauled the wagon because it was heavy.", ["donkey", "wagon"], 1),
    # rule violation: option appears inside the snippet
    obj("The turtle outpaced the hare because the hare was lazy.", ["turtle", "hare"], 1,
        snippet="the hare was lazy"),
    # malformed JSON fragment
    '{"statement": "The broken one, "pronoun": "it"}',
    # near-duplicate of the donkey sentence
    obj("The donkey hauled the cart because it was heavy.", ["donkey", "cart"], 1),
])

second_batch = "\n".join([
    obj("The sailor trusted the compass because it was reliable.", ["sailor", "compass"], 1,
        snippet="it was reliable"),
    obj("The chef discarded the melon because it was rotten.", ["chef", "melon"], 1,
        snippet="it was rotten"),
])

client = ScriptedClient([response, second_batch])
result = run_cycle(client, template, target_count=4, redundancy_threshold=0.6)

print("=== audit trail ===")
for record in result.audit_log:
    print(f"request {record.request_index} (sentences from {record.start_index}):")
    for iid in record.accepted_ids:
        print(f"  accepted {iid}")
    for what, reason in record.rejections:
        print(f"  rejected {what}: {reason}")

print(f"\ncompleted: {result.completed}; pool holds {len(result.accepted)} candidates")
for cand in result.accepted:
    assert validate_instance(cand) == []
    print(f"  {cand.id}  {cand.statement}")

flags = redundancy_scan(result.accepted, 0.6)
print(f"\nredundancy re-scan of the accepted pool: {len(flags)} flag(s)")
