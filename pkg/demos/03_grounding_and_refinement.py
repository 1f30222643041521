"""Why refinement beats raw grounder confidence.

The grounder proposes boxes per role from rephrased templates. A role can
end up with several candidates, and the most confident one is not always
the right participant (here: a close-up hand outscores the woman for
AGENT). Refinement fills the verb template with each candidate's noun and
asks which full sentence matches the whole image best.

Run:  python3 demos/03_grounding_and_refinement.py
"""
from gsrkit import (
    FixtureBuilder,
    ImageRef,
    NounClass,
    VerbClass,
)
from gsrkit.explainers import DescriptionSet, KIND_REPHRASE
from gsrkit.grounding import ground_candidates, group_by_role
from gsrkit.nouns import pre_predict, refine, select_by_confidence

STUDYING = VerbClass(
    "studying", "studying", "the AGENT studies at a PLACE", ("AGENT", "PLACE")
)
NOUNS = {
    "n_woman": NounClass("n_woman", "woman"),
    "n_hand": NounClass("n_hand", "hand"),
    "n_library": NounClass("n_library", "library"),
}

b = FixtureBuilder(dim=16)
b.add_image("img", b.basis(0))
# regions: a woman (correct), a close-up hand with HIGHER grounder
# confidence, and the library backdrop
b.add_region("img", [10, 10, 60, 90], b.basis(1), "AGENT", 0.62)
b.add_region("img", [40, 40, 55, 55], b.basis(2), "AGENT SURFACE", 0.95)
b.add_region("img", [0, 0, 100, 100], b.basis(3), "PLACE", 0.80)
for nid, axis in [("n_woman", 1), ("n_hand", 2), ("n_library", 3)]:
    b.set_text(f"a photo of {NOUNS[nid].gloss}", b.basis(axis))
# filled sentences: the woman-sentence matches the image direction
b.set_text("the woman studies at a library", b.mix((0, 0.95), (7, 0.312)))
b.set_text("the hand studies at a library", b.mix((0, 0.15), (8, 0.989)))

backend = b.backend()
image = ImageRef("img")

rephrasings = DescriptionSet(
    KIND_REPHRASE,
    "studying",
    ("an AGENT reading at a PLACE", "an AGENT SURFACE and a PLACE with books"),
)
candidates = ground_candidates(backend, image, STUDYING, rephrasings)
print("candidate boxes:")
for c in candidates:
    print(f"  {c.role:6s} conf={c.confidence:.2f} box={c.box.tolist()} "
          f"(from rephrasing #{c.source_index})")

allowed = set(NOUNS)
preds = {
    role: [
        pre_predict(backend, image, cand, STUDYING, allowed, NOUNS, balance=0.0)
        for cand in cands
    ]
    for role, cands in group_by_role(candidates).items()
}
print("\npre-predictions (class prompts only):")
for role, entries in preds.items():
    for p in entries:
        print(f"  {role:6s} box conf={p.candidate.confidence:.2f} -> "
              f"{NOUNS[p.top_noun].gloss} ({p.top_score:+.2f})")

by_confidence = select_by_confidence(preds, STUDYING)
print(f"\nwithout refinement, AGENT = {NOUNS[by_confidence['AGENT'].noun].gloss} "
      "(the confident close-up wins)")

refined = refine(backend, image, STUDYING, preds, NOUNS)
print(f"with refinement,    AGENT = {NOUNS[refined['AGENT'].noun].gloss} "
      "(the sentence that matches the whole image wins)")
assert refined["AGENT"].noun == "n_woman"
