"""Frame metrics: unit behavior, hand-scored golden dataset, oracle parity."""
from pathlib import Path

import numpy as np
import pytest

from gsrkit.core import BoundingBox, FrameAnnotation, PredictedFrame, RoleFill, VerbClass
from gsrkit.errors import PredictionDataError
from gsrkit.evaluation import (
    MetricsReport,
    PredictionRecord,
    SettingMetrics,
    aggregate,
    render_report,
    report_to_json,
    score_image,
)

from . import minidata
from .oracles import naive_score_dataset

GOLDEN_DIR = Path(__file__).parent / "golden"

VERBS = {
    "riding": VerbClass(
        "riding", "riding", "the AGENT rides the VEHICLE in a PLACE",
        ("AGENT", "VEHICLE", "PLACE"),
    ),
    "jumping": VerbClass(
        "jumping", "jumping", "the AGENT jumps over the OBSTACLE", ("AGENT", "OBSTACLE")
    ),
}


def frame(verb, fills):
    return PredictedFrame(
        verb=verb,
        role_fills={
            r: RoleFill(noun=n, box=BoundingBox(*b) if b else None)
            for r, (n, b) in fills.items()
        },
    )


def annotation(image_id="img", verb="jumping", frames=None, boxes=None):
    frames = frames or [{"AGENT": "n_man", "OBSTACLE": "n_fence"}] * 3
    boxes = {
        r: BoundingBox(*c) for r, c in (boxes or {"AGENT": [0, 0, 10, 10]}).items()
    }
    return FrameAnnotation(image_id, verb, tuple(frames), boxes)


class TestScoreImage:
    def test_perfect_match_all_true(self):
        ann = annotation(boxes={"AGENT": [0, 0, 10, 10], "OBSTACLE": [20, 0, 30, 10]})
        f = frame("jumping", {"AGENT": ("n_man", [0, 0, 10, 10]),
                              "OBSTACLE": ("n_fence", [20, 0, 30, 10])})
        record = PredictionRecord("img", ("jumping",), {"top1": f, "top5": f, "gt": f})
        scores = score_image(record, ann, VERBS, ("top1", "top5", "gt"))
        for setting, s in scores.items():
            assert s.nouns_correct == 2 and s.value_all
            assert s.grnd_correct == 2 and s.grnd_all
        assert scores["top1"].verb_correct and scores["top5"].verb_correct
        assert scores["gt"].verb_correct is None

    def test_low_iou_boxes_value_without_grnd(self):
        # predicted boxes shifted to IoU 0.4: [0,0,10,10] vs [3,0,13,10]
        # inter 7*10=70, union 200-70=130 -> 70/130 = 0.538... too big;
        # use [0,0,10,10] vs [4.29,0,14.29,10]: inter 57.1, union 142.9 -> 0.3996
        ann = annotation(boxes={"AGENT": [0, 0, 10, 10], "OBSTACLE": [20, 0, 30, 10]})
        f = frame("jumping", {"AGENT": ("n_man", [4.29, 0, 14.29, 10]),
                              "OBSTACLE": ("n_fence", [24.29, 0, 34.29, 10])})
        record = PredictionRecord("img", ("jumping",), {"gt": f})
        s = score_image(record, ann, VERBS, ("gt",))["gt"]
        assert s.nouns_correct == 2
        assert s.grnd_correct == 0

    def test_wrong_top1_verb_incorrects_everything(self):
        ann = annotation()
        riding_frame = frame("riding", {"AGENT": ("n_man", None),
                                        "VEHICLE": ("n_horse", None),
                                        "PLACE": ("n_field", None)})
        good = frame("jumping", {"AGENT": ("n_man", [0, 0, 10, 10]),
                                 "OBSTACLE": ("n_fence", None)})
        record = PredictionRecord(
            "img", ("riding", "jumping"), {"top1": riding_frame, "top5": good, "gt": good}
        )
        scores = score_image(record, ann, VERBS, ("top1", "top5", "gt"))
        top1 = scores["top1"]
        assert top1.verb_correct is False
        assert top1.nouns_correct == 0 and not top1.value_all
        assert top1.grnd_correct == 0 and not top1.grnd_all
        assert scores["top5"].verb_correct is True
        assert scores["top5"].nouns_correct == 2

    def test_any_annotator_counts(self):
        ann = annotation(frames=[
            {"AGENT": "n_man", "OBSTACLE": "n_fence"},
            {"AGENT": "n_woman", "OBSTACLE": "n_fence"},
            {"AGENT": "n_man", "OBSTACLE": ""},
        ], boxes={})
        f = frame("jumping", {"AGENT": ("n_woman", None), "OBSTACLE": ("n_fence", None)})
        record = PredictionRecord("img", ("jumping",), {"gt": f})
        s = score_image(record, ann, VERBS, ("gt",))["gt"]
        assert s.nouns_correct == 2

    def test_empty_noun_agreement_matches(self):
        ann = annotation(frames=[
            {"AGENT": "n_man", "OBSTACLE": ""},
            {"AGENT": "n_man", "OBSTACLE": "n_fence"},
            {"AGENT": "n_man", "OBSTACLE": "n_fence"},
        ], boxes={})
        f = frame("jumping", {"AGENT": ("n_man", None), "OBSTACLE": ("", None)})
        record = PredictionRecord("img", ("jumping",), {"gt": f})
        s = score_image(record, ann, VERBS, ("gt",))["gt"]
        assert s.nouns_correct == 2

    def test_absent_gt_box_strict_vs_ignore(self):
        ann = annotation(boxes={"AGENT": [0, 0, 10, 10]})  # OBSTACLE box absent
        boxed = frame("jumping", {"AGENT": ("n_man", [0, 0, 10, 10]),
                                  "OBSTACLE": ("n_fence", [5, 5, 6, 6])})
        record = PredictionRecord("img", ("jumping",), {"gt": boxed})
        strict = score_image(record, ann, VERBS, ("gt",))["gt"]
        assert strict.grnd_total == 2 and strict.grnd_correct == 1
        loose = score_image(record, ann, VERBS, ("gt",), absent_box="ignore")["gt"]
        assert loose.grnd_total == 1 and loose.grnd_correct == 1 and loose.grnd_all

    def test_joint_vs_box_only(self):
        ann = annotation(frames=[{"AGENT": "n_man", "OBSTACLE": "n_fence"}] * 3,
                         boxes={"AGENT": [0, 0, 10, 10], "OBSTACLE": [20, 0, 30, 10]})
        f = frame("jumping", {"AGENT": ("n_woman", [0, 0, 10, 10]),  # noun wrong, box right
                              "OBSTACLE": ("n_fence", [20, 0, 30, 10])})
        record = PredictionRecord("img", ("jumping",), {"gt": f})
        joint = score_image(record, ann, VERBS, ("gt",))["gt"]
        assert joint.grnd_correct == 1
        box_only = score_image(record, ann, VERBS, ("gt",), joint_grnd=False)["gt"]
        assert box_only.grnd_correct == 2

    def test_verb_mismatch_is_data_error(self):
        ann = annotation()
        f = frame("riding", {"AGENT": ("n_man", None), "VEHICLE": ("n_horse", None),
                             "PLACE": ("n_field", None)})
        record = PredictionRecord("img", ("jumping",), {"gt": f})
        with pytest.raises(PredictionDataError):
            score_image(record, ann, VERBS, ("gt",))


class TestAggregate:
    def test_single_perfect_image(self):
        ann = annotation(boxes={"AGENT": [0, 0, 10, 10], "OBSTACLE": [20, 0, 30, 10]})
        f = frame("jumping", {"AGENT": ("n_man", [0, 0, 10, 10]),
                              "OBSTACLE": ("n_fence", [20, 0, 30, 10])})
        record = PredictionRecord("img", ("jumping",), {"top1": f})
        scores = score_image(record, ann, VERBS, ("top1",))
        report = aggregate({"top1": [scores["top1"]]})
        m = report.settings["top1"]
        assert (m.verb, m.value, m.val_all, m.grnd, m.grnd_all) == (100.0,) * 5

    def test_half_correct_hand_count(self):
        # image A fully correct; image B wrong verb -> top1 verb 50, val-all 50
        ann_a = annotation("a", boxes={"AGENT": [0, 0, 10, 10], "OBSTACLE": [20, 0, 30, 10]})
        f_a = frame("jumping", {"AGENT": ("n_man", [0, 0, 10, 10]),
                                "OBSTACLE": ("n_fence", [20, 0, 30, 10])})
        rec_a = PredictionRecord("a", ("jumping",), {"top1": f_a})
        ann_b = annotation("b")
        f_b = frame("riding", {"AGENT": ("n_man", None), "VEHICLE": ("n_horse", None),
                               "PLACE": ("n_field", None)})
        rec_b = PredictionRecord("b", ("riding", "jumping"), {"top1": f_b})
        scores = [
            score_image(rec_a, ann_a, VERBS, ("top1",))["top1"],
            score_image(rec_b, ann_b, VERBS, ("top1",))["top1"],
        ]
        m = aggregate({"top1": scores}).settings["top1"]
        assert m.verb == 50.0
        assert m.val_all == 50.0
        assert m.value == 50.0  # (1.0 + 0.0) / 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate({})
        with pytest.raises(ValueError):
            aggregate({"top1": []})


class TestGoldenMiniDataset:
    def score(self):
        annotations = {a.image_id: a for a in minidata.annotations()}
        per_setting = {s: [] for s in ("top1", "top5", "gt")}
        for record in minidata.prediction_records():
            scores = score_image(
                record, annotations[record.image_id], VERBS, ("top1", "top5", "gt")
            )
            for s in per_setting:
                per_setting[s].append(scores[s])
        return aggregate(per_setting)

    def test_all_fourteen_cells(self):
        report = self.score()
        for setting, expected in minidata.EXPECTED.items():
            m = report.settings[setting]
            for name, want in expected.items():
                got = getattr(m, name)
                if want is None:
                    assert got is None
                else:
                    assert got == pytest.approx(want, rel=1e-12), (setting, name)

    def test_rendered_report_matches_golden(self):
        got = render_report(self.score())
        golden = (GOLDEN_DIR / "report_mini.txt").read_text()
        assert got == golden

    def test_report_json_twin(self):
        payload = report_to_json(self.score())
        assert payload["counts"] == {"images": 3, "role_slots": 8}
        assert payload["settings"]["gt"]["value"] == pytest.approx(100.0 * 8 / 9)
        assert "verb" not in payload["settings"]["gt"]

    def test_brute_force_oracle_agrees_with_hand_scores(self):
        naive_anns = {
            image_id: {
                "verb": spec["verb"],
                "frames": spec["frames"],
                "boxes": {r: b for r, b in spec["bb"].items() if b != [-1, -1, -1, -1]},
            }
            for image_id, spec in minidata.ANNOTATIONS_DOC.items()
        }
        naive_preds = {}
        for record in minidata.prediction_records():
            frames = {}
            for setting, frame in record.frames.items():
                frames[setting] = {
                    "verb": frame.verb,
                    "roles": {
                        role: {"noun": fill.noun,
                               "box": fill.box.tolist() if fill.box else None}
                        for role, fill in frame.role_fills.items()
                    },
                }
            naive_preds[record.image_id] = {
                "top_verbs": list(record.top_verbs), "frames": frames
            }
        roles_of_verb = {v: VERBS[v].roles for v in VERBS}
        got = naive_score_dataset(naive_preds, naive_anns, roles_of_verb)
        for setting, expected in minidata.EXPECTED.items():
            for name, want in expected.items():
                key = name if name != "val_all" else "val_all"
                if want is None:
                    assert got[setting]["verb"] is None
                else:
                    assert got[setting][key] == pytest.approx(want, rel=1e-12)


class TestRenderReport:
    def test_gt_only_omits_verb_column(self):
        report = MetricsReport(
            settings={"gt": SettingMetrics(None, 29.92, 4.68, 23.57, 3.08)},
            images=10,
            role_slots=30,
        )
        text = render_report(report)
        header = text.splitlines()[1]
        assert "verb" not in header  # no verb column
        assert "ground-truth-verb" in text

    def test_half_up_rounding(self):
        report = MetricsReport(
            settings={"gt": SettingMetrics(None, 2.675, 2.674, 50.005, 0.0)},
            images=1,
            role_slots=1,
        )
        text = render_report(report)
        assert "2.68" in text and "2.67" in text and "50.01" in text


def random_instance(rng):
    """One randomized prediction/annotation dataset plus its naive-dict twin."""
    role_pool = ["AGENT", "TOOL", "PLACE", "ITEM", "TARGET", "SOURCE"]
    verbs = {}
    n_verbs = int(rng.integers(2, 5))
    for i in range(n_verbs):
        roles = list(rng.choice(role_pool, size=int(rng.integers(1, 4)), replace=False))
        template = "the " + " then the ".join(roles) + " acted"
        verbs[f"verb{i}"] = VerbClass(f"verb{i}", f"verb{i}", template, tuple(roles))
    noun_ids = [f"n{i}" for i in range(5)]

    def random_box():
        x1, y1 = rng.uniform(0, 50, size=2)
        w, h = rng.uniform(1, 30, size=2)
        return [float(x1), float(y1), float(x1 + w), float(y1 + h)]

    annotations = []
    records = []
    naive_anns = {}
    naive_preds = {}
    for img in range(int(rng.integers(1, 6))):
        image_id = f"img{img}"
        gt_verb = f"verb{int(rng.integers(0, n_verbs))}"
        roles = verbs[gt_verb].roles
        ann_frames = [
            {r: (rng.choice(noun_ids) if rng.random() > 0.2 else "") for r in roles}
            for _ in range(3)
        ]
        gt_boxes = {r: random_box() for r in roles if rng.random() > 0.3}
        ranking = list(rng.permutation(sorted(verbs)))
        frames = {}
        naive_frames = {}

        def build_frame(verb_id):
            fills = {}
            naive_fills = {}
            for r in verbs[verb_id].roles:
                # bias towards annotated nouns so hits actually occur
                if rng.random() < 0.6 and verb_id == gt_verb:
                    noun = ann_frames[int(rng.integers(0, 3))][r]
                    if noun == "":
                        noun = str(rng.choice(noun_ids))
                else:
                    noun = str(rng.choice(noun_ids))
                box = None
                if rng.random() < 0.7:
                    if verb_id == gt_verb and r in gt_boxes and rng.random() < 0.5:
                        box = list(gt_boxes[r])  # guaranteed IoU 1 hit
                    else:
                        box = random_box()
                fills[r] = RoleFill(noun=noun, box=BoundingBox(*box) if box else None)
                naive_fills[r] = {"noun": noun, "box": box}
            return (
                PredictedFrame(verb=verb_id, role_fills=fills),
                {"verb": verb_id, "roles": naive_fills},
            )

        frames["top1"], naive_frames["top1"] = build_frame(ranking[0])
        if gt_verb in ranking[:5]:
            frames["top5"], naive_frames["top5"] = build_frame(gt_verb)
        frames["gt"], naive_frames["gt"] = build_frame(gt_verb)
        annotations.append(
            FrameAnnotation(
                image_id, gt_verb, tuple(ann_frames),
                {r: BoundingBox(*b) for r, b in gt_boxes.items()},
            )
        )
        records.append(PredictionRecord(image_id, tuple(ranking), frames))
        naive_anns[image_id] = {"verb": gt_verb, "frames": ann_frames, "boxes": gt_boxes}
        naive_preds[image_id] = {"top_verbs": ranking, "frames": naive_frames}
    return verbs, annotations, records, naive_anns, naive_preds


class TestRandomizedOracleParity:
    def test_inequalities_and_brute_force_match(self):
        rng = np.random.default_rng(2024)
        for _ in range(300):
            verbs, annotations, records, naive_anns, naive_preds = random_instance(rng)
            per_setting = {s: [] for s in ("top1", "top5", "gt")}
            for record, ann in zip(records, annotations):
                scores = score_image(record, ann, verbs, ("top1", "top5", "gt"))
                for s in per_setting:
                    per_setting[s].append(scores[s])
            report = aggregate(per_setting)
            expected = naive_score_dataset(
                naive_preds, naive_anns, {v: verbs[v].roles for v in verbs}
            )
            for setting in ("top1", "top5", "gt"):
                m = report.settings[setting]
                e = expected[setting]
                assert m.verb == e["verb"]  # bit-exact
                assert m.value == e["value"]
                assert m.val_all == e["val_all"]
                assert m.grnd == e["grnd"]
                assert m.grnd_all == e["grnd_all"]
                assert m.val_all <= m.value + 1e-12
                assert m.grnd_all <= m.grnd + 1e-12
                assert m.grnd <= m.value + 1e-12
            assert report.settings["top1"].verb <= report.settings["top5"].verb
