"""How description weighting works, on bare vectors.

A verb description is useful when it correlates with scenes of its own
verb and not with scenes of the others. We measure that with the entropy
of its normalized correlation distribution over classes ("discriminability",
lower = sharper) and weight each verb's descriptions by a softmax over the
inverse entropy. No images are involved: LLM-written scene sentences stand
in for them, embedded in the same space.

Run:  python3 demos/02_description_weighting.py
"""
import numpy as np

from gsrkit import Embedding, compute_discriminability, compute_weights
from gsrkit.verbs import WeightTable


def unit(v):
    v = np.asarray(v, dtype=float)
    return Embedding(v / np.linalg.norm(v))


# Three verb classes; one embedding axis each (a cartoon of CLIP space).
scenes = {
    "shopping": [unit([1, 0, 0]), unit([0.9, 0.1, 0])],
    "buying":   [unit([0.2, 1, 0]), unit([0, 1, 0.1])],
    "reading":  [unit([0, 0, 1])],
}

# Two candidate descriptions for "shopping":
sharp = unit([1, 0.05, 0])    # tracks shopping scenes only
vague = unit([0.6, 0.75, 0.1])  # also fires on "buying" scenes

for name, emb in [("sharp", sharp), ("vague", vague)]:
    rho, dis = compute_discriminability(emb, scenes)
    print(f"description {name!r}:")
    for verb, value in rho.items():
        print(f"    correlation with {verb:9s} scenes: {value:+.4f}")
    print(f"    discriminability (entropy, nats): {dis:.4f}")

_, dis_sharp = compute_discriminability(sharp, scenes)
_, dis_vague = compute_discriminability(vague, scenes)
weights = compute_weights([dis_sharp, dis_vague])
print(f"\nsoftmax(1/dis) weights: sharp={weights[0]:.4f}, vague={weights[1]:.4f}")
assert weights[0] > weights[1], "the sharper description must weigh more"

# The full table does this for every (verb, description) pair at once.
table = WeightTable.from_scene_embeddings(
    {"shopping": [sharp, vague], "buying": [unit([0, 1, 0.2])]}, scenes
)
print("\nweight table rows:")
for row in table.rows:
    print(
        f"  verb={row.verb:9s} desc#{row.index}  dis={row.dis:.4f}  "
        f"weight={row.weight:.4f}"
    )
