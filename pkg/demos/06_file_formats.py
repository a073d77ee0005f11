"""The two binary containers and what happens to broken files.

A heatmap bundle (WVHM) carries one float32 grid per token plus a JSON
header with the role map; a raw stack (WVAS) carries every attention slice.
Both round-trip bit-exactly, and every way a file can be wrong maps to a
typed error instead of a crash.
"""
import numpy as np

from winovis.attribution import AttentionSlice, AttentionStack
from winovis.bundle_io import (
    BundleFormatError,
    HeatmapBundle,
    read_bundle,
    read_stack,
    write_bundle,
    write_stack,
)
from winovis.grid import Heatmap2D

rng = np.random.default_rng(3)
f32 = lambda a: a.astype(np.float32).astype(np.float64)

bundle = HeatmapBundle(
    instance_id="wv-demo",
    width=8, height=8,
    tokens=("cat", "vacuum cleaner", "it"),
    caption_flag=False,
    roles={"cat": "entity1", "vacuum cleaner": "entity2", "it": "pronoun"},
    heatmaps=tuple(Heatmap2D(f32(rng.random((8, 8)))) for _ in range(3)),
)
data = write_bundle(bundle)
print(f"bundle: {len(data)} bytes "
      f"(10-byte envelope + JSON header + 3 grids x 8x8 float32)")
assert read_bundle(data) == bundle
assert write_bundle(read_bundle(data)) == data
print("round trip: object-identical and bit-exact\n")

stack = AttentionStack(("cat", "it"), [
    AttentionSlice("down", 0, 0, 0, f32(rng.random((2, 4, 4)))),
    AttentionSlice("up", 49, 3, 7, f32(rng.random((2, 8, 8)))),
])
stack_data = write_stack("wv-demo", stack)
iid, back = read_stack(stack_data)
assert write_stack(iid, back) == stack_data
print(f"stack: {len(stack_data)} bytes, {len(back.slices)} slices, round trip bit-exact\n")

print("corrupt inputs are rejected with typed errors:")
cases = {
    "flipped magic byte": b"X" + data[1:],
    "future version": data[:4] + b"\x02\x00" + data[6:],
    "truncated payload": data[:-3],
    "header garbage": data[:10] + b"{oops" + data[15:],
}
for label, broken in cases.items():
    try:
        read_bundle(broken)
    except BundleFormatError as exc:
        print(f"  {label:20} -> {exc}")
