"""The five frame metrics and their three verb settings.

verb: was the annotated verb ranked high enough (top-1 / top-5)?
value / val-all: per-role and whole-frame noun accuracy against any of the
three annotators. grnd / grnd-all: the same but the box must also overlap
the ground truth at IoU >= 0.5 (and the noun be right, under the default
joint definition). A wrong verb under top-1/top-5 zeroes everything else.

Run:  python3 demos/04_evaluation_metrics.py
"""
from gsrkit import (
    BoundingBox,
    FrameAnnotation,
    PredictedFrame,
    PredictionRecord,
    RoleFill,
    VerbClass,
    aggregate,
    render_report,
    score_image,
)

VERBS = {
    "jumping": VerbClass(
        "jumping", "jumping", "the AGENT jumps over the OBSTACLE", ("AGENT", "OBSTACLE")
    )
}

annotation = FrameAnnotation(
    image_id="img-42",
    verb="jumping",
    annotator_frames=(
        {"AGENT": "n_man", "OBSTACLE": "n_fence"},
        {"AGENT": "n_woman", "OBSTACLE": "n_fence"},
        {"AGENT": "n_man", "OBSTACLE": ""},
    ),
    gt_boxes={"AGENT": BoundingBox(0, 0, 10, 10), "OBSTACLE": BoundingBox(20, 0, 30, 10)},
)

# The predicted frame nails the OBSTACLE outright, and for the AGENT finds
# the right box but calls it a cat (no annotator agrees).
frame = PredictedFrame(
    "jumping",
    {
        "AGENT": RoleFill("n_cat", BoundingBox(0, 0, 10, 10)),        # IoU = 1.0
        "OBSTACLE": RoleFill("n_fence", BoundingBox(20, 0, 30, 10)),  # IoU = 1.0
    },
)
record = PredictionRecord(
    image_id="img-42",
    top_verbs=("running", "jumping"),  # top-1 wrong, top-5 right
    frames={"top1": frame, "top5": frame, "gt": frame},
)

scores = score_image(record, annotation, VERBS, ("top1", "top5", "gt"))
for setting, s in scores.items():
    print(
        f"{setting:5s} verb_ok={s.verb_correct!s:5s} nouns {s.nouns_correct}/{s.role_total} "
        f"grounded {s.grnd_correct}/{s.grnd_total} "
        f"val-all={s.value_all} grnd-all={s.grnd_all}"
    )

report = aggregate({s: [scores[s]] for s in scores})
print("\n" + render_report(report))

box_only = score_image(record, annotation, VERBS, ("gt",), joint_grnd=False)["gt"]
print(f"--grnd-box-only: grounded {box_only.grnd_correct}/{box_only.grnd_total} "
      "(noun correctness no longer required)")
