"""Quickstart: predict a structured frame for an image, end to end.

The engine never touches model weights directly; it talks to a backend
(text/image embedding, grounding, explaining). Here we script a fixture
backend so the whole pipeline runs offline and deterministically: the
image "points at" the verb `feeding`, its regions point at the right
nouns, and the explainer completions are pinned.

Run:  python3 demos/01_quickstart_pipeline.py
"""
import tempfile
from pathlib import Path

from gsrkit import Engine, EngineConfig, FixtureBuilder, ImageRef, VerbClass, NounClass
from gsrkit.explainers import (
    KIND_FILTER,
    KIND_NOUN,
    KIND_REPHRASE,
    KIND_SCENE,
    KIND_VERB,
    PromptTemplateConfig,
)

# ---------------------------------------------------------------- vocabulary
FEEDING = VerbClass(
    id="feeding",
    display_name="feeding",
    template="the AGENT feeds the RECIPIENT in a PLACE",
    roles=("AGENT", "RECIPIENT", "PLACE"),
)
NOUNS = {
    "n_farmer": NounClass("n_farmer", "farmer"),
    "n_horse": NounClass("n_horse", "horse"),
    "n_barn": NounClass("n_barn", "barn"),
    "n_cat": NounClass("n_cat", "cat"),
}

# ------------------------------------------------------------------ fixture
# Axis 0 is "the feeding direction"; nouns get their own axes. Scripted
# explainer completions are keyed by the exact prompts the engine renders.
prompts = PromptTemplateConfig()
b = FixtureBuilder(dim=32)

b.set_text("a photo of feeding", b.basis(0))
for axis, noun in enumerate(NOUNS.values(), start=10):
    b.set_text(f"a photo of {noun.gloss}", b.basis(axis))

slots = {"CLASS": "feeding", "TEMPLATE": FEEDING.template}
b.script(prompts.render(KIND_VERB, slots), ["a bucket of feed held out", "an animal eating"])
b.script(prompts.render(KIND_SCENE, slots), ["A farmer feeds a horse hay inside a barn."])
for text in ("a bucket of feed held out", "an animal eating",
             "A farmer feeds a horse hay inside a barn."):
    b.set_text(text, b.basis(0))

b.script(
    prompts.render(
        KIND_REPHRASE,
        {"TEMPLATE": FEEDING.template, "SEMANTIC ROLES": "AGENT, RECIPIENT, PLACE"},
    ),
    ["an AGENT person giving food to a RECIPIENT animal at a PLACE"],
)

# the engine offers the vocabulary to the filter in sorted-id order
glosses = ", ".join(NOUNS[nid].gloss for nid in sorted(NOUNS))
for role, keep in [("AGENT", "farmer"), ("RECIPIENT", "horse, cat"), ("PLACE", "barn")]:
    b.script(
        prompts.render(KIND_FILTER, {"NOUN LIST": glosses, "SEMANTIC ROLE": role}), [keep]
    )

for role, noun in [("AGENT", NOUNS["n_farmer"]), ("RECIPIENT", NOUNS["n_horse"]),
                   ("RECIPIENT", NOUNS["n_cat"]), ("PLACE", NOUNS["n_barn"])]:
    text = f"{noun.gloss} acting as {role}"
    b.script(
        prompts.render(
            KIND_NOUN,
            {"CLASS": noun.gloss, "SEMANTIC ROLE": role, "TEMPLATE": FEEDING.template},
        ),
        [text],
    )
    b.set_text(text, b.basis(10 + list(NOUNS).index(noun.id)))

# the image: global embedding on the feeding axis, one region per role
b.add_image("photo-001", b.basis(0))
b.add_region("photo-001", [0, 0, 40, 80], b.basis(10), "AGENT", 0.88)     # farmer
b.add_region("photo-001", [40, 10, 90, 80], b.basis(11), "RECIPIENT", 0.91)  # horse
b.add_region("photo-001", [0, 0, 200, 120], b.basis(12), "PLACE", 0.75)   # barn

# ------------------------------------------------------------------- engine
workdir = Path(tempfile.mkdtemp(prefix="gsrkit-demo-"))
config = EngineConfig(backend="fixture", fixture="unused", cache_dir=str(workdir / "cache"))
engine = Engine(config, {"feeding": FEEDING}, NOUNS, backend=b.backend())

print("== precompute (descriptions, weights, caches) ==")
summary = engine.precompute(workdir / "weights.json")
print(f"verbs processed: {summary.verbs}, failures: {len(summary.failures)}")

print("\n== per-image prediction ==")
record = engine.predict_image(ImageRef("photo-001"), gt_verb="feeding",
                              settings=("top1", "gt"))
print(f"verb ranking: {list(record.top_verbs)}")
frame = record.frames["top1"]
for role, fill in frame.role_fills.items():
    box = fill.box.tolist() if fill.box else "(no box)"
    print(f"  {role:10s} -> {NOUNS[fill.noun].gloss:8s} box={box} score={fill.score:.3f}")
