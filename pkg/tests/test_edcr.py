from __future__ import annotations

import numpy as np
import pytest

from conftest import make_rule_data, spike_truth
from spike_edcr.edcr import (
    Condition,
    Explanation,
    RuleSet,
    apply_rules,
    build_conditions,
    class_stats,
    condition_f1,
    corr_counters,
    corr_rule_learn,
    det_counters,
    det_rule_learn,
    mpsc_rule_learn,
    render_explanation,
    render_rules,
    rule_firing_counts,
    top_f1_filter,
)
from spike_edcr.types import Label, UndefinedRecallError, UnknownConditionError


class TestConditions:
    def test_ids_alphabetical_without_primary(self, f1_data):
        conds = build_conditions(f1_data.matrix, "BASE")
        assert [(c.id, c.model_name) for c in conds] == [(0, "C1"), (1, "C2")]

    def test_unknown_condition(self, f1_data):
        with pytest.raises(UnknownConditionError):
            f1_data.column(Condition(9, "NOPE"))


class TestClassStats:
    def test_f1_no_class(self, f1_data):
        stats = class_stats(f1_data.base_preds, f1_data.truths, Label.NO)
        assert (stats.N, stats.P, stats.R, stats.GT) == (10, 0.7, 1.0, 7)

    def test_f2_no_class(self, f2_data):
        stats = class_stats(f2_data.base_preds, f2_data.truths, Label.NO)
        assert stats.N == 8
        assert stats.P == pytest.approx(6 / 8)
        assert stats.R == pytest.approx(6 / 7)
        assert stats.budget_base == pytest.approx(stats.N * stats.P / stats.R)

    def test_undefined_recall(self):
        with pytest.raises(UndefinedRecallError):
            class_stats(np.zeros(4, dtype=np.int8), np.ones(4, dtype=np.int8), Label.NO)


class TestDetection:
    def test_counters(self, f1_data, f1_conditions):
        c1, c2 = f1_conditions
        assert det_counters([c1], f1_data) == (2, 1, 3)
        assert det_counters([c2], f1_data) == (1, 0, 1)
        assert det_counters([c1, c2], f1_data) == (3, 1, 4)
        assert det_counters([], f1_data) == (0, 0, 0)

    def test_budget_one(self, f1_data, f1_conditions):
        c1, c2 = f1_conditions
        assert det_rule_learn(Label.NO, 1 / 7, [c1, c2], f1_data) == [c1, c2]

    def test_zero_budget(self, f1_data, f1_conditions):
        c1, c2 = f1_conditions
        assert det_rule_learn(Label.NO, 0.0, [c1, c2], f1_data) == [c2]

    def test_empty_candidates(self, f1_data):
        assert det_rule_learn(Label.NO, 0.5, [], f1_data) == []

    def test_ties_break_on_lowest_id(self, f2_data):
        c1, c2 = build_conditions(f2_data.matrix, "BASE")
        assert det_rule_learn(Label.NO, 1 / 7, [c2, c1], f2_data) == [c1, c2]

    def test_negative_epsilon(self, f1_data, f1_conditions):
        with pytest.raises(ValueError):
            det_rule_learn(Label.NO, -0.1, list(f1_conditions), f1_data)

    def test_primary_without_no_predictions(self):
        data = make_rule_data(
            base=np.ones(6, dtype=np.int8), truths=spike_truth(6, {0, 1}), fires={"A": {2}}
        )
        assert det_rule_learn(Label.NO, 1.0, build_conditions(data.matrix, "BASE"), data) == []

    def test_monotone_in_epsilon(self, f1_data, f1_conditions):
        small = set(det_rule_learn(Label.NO, 0.0, list(f1_conditions), f1_data))
        large = set(det_rule_learn(Label.NO, 1.0, list(f1_conditions), f1_data))
        assert small <= large


class TestCorrection:
    def test_f1_keeps_only_c2(self, f1_data, f1_conditions):
        c1, c2 = f1_conditions
        cc = corr_rule_learn(Label.SPIKE, [(c1, Label.NO), (c2, Label.NO)], f1_data)
        assert cc == [(c2, Label.NO)]
        assert corr_counters(cc, f1_data) == (1, 1)

    def test_f2_pairs_beat_primary_precision(self, f2_data):
        c1, c2 = build_conditions(f2_data.matrix, "BASE")
        cc = corr_rule_learn(Label.SPIKE, [(c1, Label.NO), (c2, Label.NO)], f2_data)
        assert (c2, Label.NO) in cc
        pos, bod = corr_counters(cc, f2_data)
        assert pos / bod > 0.5
        assert corr_counters([(c2, Label.NO)], f2_data) == (1, 1)

    def test_empty_input(self, f1_data):
        assert corr_rule_learn(Label.SPIKE, [], f1_data) == []

    def test_no_pair_beats_primary(self):
        # primary is already perfect on spike, nothing can raise its precision
        data = make_rule_data(
            base=spike_truth(8, {0, 1}), truths=spike_truth(8, {0, 1}), fires={"A": {3, 4}}
        )
        (a,) = build_conditions(data.matrix, "BASE")
        assert corr_rule_learn(Label.SPIKE, [(a, Label.NO)], data) == []


class TestTopF1:
    def test_scores(self, f1_data, f1_conditions):
        c1, c2 = f1_conditions
        assert condition_f1(c1, f1_data) == pytest.approx(2 / 3)
        assert condition_f1(c2, f1_data) == pytest.approx(1 / 2)

    def test_keeps_best(self, f1_data, f1_conditions):
        c1, c2 = f1_conditions
        assert top_f1_filter([c1, c2], 1, f1_data) == [c1]
        assert top_f1_filter([c2, c1], 2, f1_data) == [c2, c1]
        assert top_f1_filter([c1, c2], None, f1_data) == [c1, c2]

    def test_never_firing_scores_zero(self, f1_data):
        data = make_rule_data(f1_data.base_preds, f1_data.truths, {"SILENT": set()})
        (c,) = build_conditions(data.matrix, "BASE")
        assert condition_f1(c, data) == 0.0

    def test_bad_k(self, f1_data, f1_conditions):
        with pytest.raises(ValueError):
            top_f1_filter(list(f1_conditions), 0, f1_data)


class TestMpsc:
    def test_f1_ruleset(self, f1_data, f1_conditions):
        c1, c2 = f1_conditions
        rs = mpsc_rule_learn(1 / 7, [c1, c2], None, f1_data, "BASE")
        assert rs.DC == (c1, c2)
        assert rs.CC == ((c2, Label.NO),)
        assert rs.correction_precision == 1.0
        assert rs.stats.N == 10

    def test_filter_applies_to_both_learners(self, f1_data, f1_conditions):
        c1, _ = f1_conditions
        rs = mpsc_rule_learn(1.0, list(f1_conditions), 1, f1_data, "BASE")
        assert rs.condition_names() == {c1.model_name}

    def test_rules_only_mention_pool_conditions(self, f2_data):
        conds = build_conditions(f2_data.matrix, "BASE")
        rs = mpsc_rule_learn(0.5, conds, None, f2_data, "BASE")
        assert rs.condition_names() <= {c.model_name for c in conds}
        assert all(j is Label.NO for _, j in rs.CC)

    def test_json_roundtrip(self, f1_data, f1_conditions, tmp_path):
        rs = mpsc_rule_learn(1 / 7, list(f1_conditions), 200, f1_data, "BASE")
        rs.save(tmp_path / "rules.json")
        loaded = RuleSet.load(tmp_path / "rules.json")
        assert loaded.DC == rs.DC
        assert loaded.CC == rs.CC
        assert loaded.top_k == 200
        assert loaded.primary_model == "BASE"
        assert loaded.stats.GT == rs.stats.GT


class TestApply:
    def test_f1_flips(self, f1_data, f1_conditions):
        rs = mpsc_rule_learn(1 / 7, list(f1_conditions), None, f1_data, "BASE")
        corrected, explanations = apply_rules(rs, f1_data.base_preds, f1_data.matrix)
        assert np.flatnonzero(corrected).tolist() == [0, 1, 2, 5]
        assert [e.index for e in explanations if e.flipped] == [0, 1, 2, 5]
        assert explanations[2].fired_detection_conditions == ("C2",)
        assert explanations[2].fired_correction_pairs == (("C2", Label.NO),)
        assert explanations[3].fired_detection_conditions == ()

    def test_empty_ruleset_is_identity(self, f2_data):
        rs = RuleSet(primary_model="BASE", epsilon=0.1, top_k=None)
        corrected, explanations = apply_rules(rs, f2_data.base_preds, f2_data.matrix)
        assert np.array_equal(corrected, f2_data.base_preds)
        assert not any(e.flipped for e in explanations)

    def test_spike_predictions_never_touched(self, f2_data):
        conds = build_conditions(f2_data.matrix, "BASE")
        rs = mpsc_rule_learn(1.0, conds, None, f2_data, "BASE")
        corrected, _ = apply_rules(rs, f2_data.base_preds, f2_data.matrix)
        spikes = f2_data.base_preds == Label.SPIKE
        assert np.all(corrected[spikes] == Label.SPIKE)
        assert np.all(corrected >= f2_data.base_preds)

    def test_missing_condition_model(self, f1_data):
        rs = RuleSet(primary_model="BASE", epsilon=0.1, top_k=None, DC=(Condition(0, "GONE"),))
        with pytest.raises(UnknownConditionError):
            apply_rules(rs, f1_data.base_preds, f1_data.matrix)

    def test_firing_counts(self, f1_data, f1_conditions):
        rs = mpsc_rule_learn(1 / 7, list(f1_conditions), None, f1_data, "BASE")
        _, explanations = apply_rules(rs, f1_data.base_preds, f1_data.matrix)
        assert rule_firing_counts(explanations) == {
            ("correction", "C2"): 1,
            ("detection", "C1"): 3,
            ("detection", "C2"): 1,
        }


class TestRender:
    def test_rules_text(self, f1_data, f1_conditions):
        rs = mpsc_rule_learn(1 / 7, list(f1_conditions), None, f1_data, "BASE")
        lines = render_rules(rs).splitlines()
        assert lines[0].startswith("# corr_spike rules: primary=BASE")
        assert "filter=top_f1(k=all)" in lines[0]
        assert lines[1:] == [
            "corr_spike(w) <- assign_no(w) AND cond_C1(w)",
            "corr_spike(w) <- assign_no(w) AND cond_C2(w)",
            "corr_spike(w) <- assign_no(w) AND cond_C2(w)",
        ]

    def test_explanation_text(self):
        e = Explanation(index=41, base=Label.NO, corrected=Label.SPIKE, fired_detection_conditions=("CNN1",))
        text = render_explanation(e, "LOGIT-2")
        assert text.startswith("sample 41: base=no corrected=spike flipped=yes")
        assert "cond_CNN1(w)" in text
        assert "base model LOGIT-2" in text

    def test_explanation_without_rules(self):
        e = Explanation(index=3, base=Label.SPIKE, corrected=Label.SPIKE)
        assert "no rule fired" in render_explanation(e)

    def test_explanation_json(self):
        e = Explanation(
            index=7,
            base=Label.NO,
            corrected=Label.SPIKE,
            fired_correction_pairs=(("RNN4", Label.NO),),
        )
        assert Explanation.from_json(e.to_json()) == e
        assert e.to_json()["fired_correction_pairs"] == [["RNN4", "no"]]
