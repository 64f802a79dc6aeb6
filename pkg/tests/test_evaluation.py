from __future__ import annotations

import csv

import numpy as np
import pytest

from conftest import spike_truth
from spike_edcr.charts import emit_plots
from spike_edcr.evaluation import (
    ABLATION_COLUMNS,
    REPORT_COLUMNS,
    EvalReport,
    Metrics,
    ablate,
    default_families,
    emit_ablation,
    emit_report,
    evaluate,
    fit_and_apply,
    prf1,
    select_best_models,
)
from spike_edcr.model_pool import PredictionMatrix
from spike_edcr.utils import family_of, format_pct, pct_delta


def _matrix(rows: dict[str, np.ndarray]) -> PredictionMatrix:
    m = len(next(iter(rows.values())))
    return PredictionMatrix(
        model_names=tuple(rows),
        sample_indices=np.arange(m),
        values=np.vstack([np.asarray(r, dtype=np.int8) for r in rows.values()]),
    )


@pytest.fixture
def pool():
    """Primary LOGIT-1 never fires; CNN1 and RNN4 cover the three spikes between them."""
    matrix = _matrix(
        {
            "LOGIT-1": np.zeros(10, dtype=np.int8),
            "CNN1": spike_truth(10, {0, 1, 5}),
            "RNN4": spike_truth(10, {2}),
        }
    )
    return matrix, spike_truth(10, {0, 1, 2})


def _metrics(p: float, r: float, f: float) -> Metrics:
    return Metrics(precision=p, recall=r, f1=f, tp=0, fp=0, fn=0, tn=0)


class TestPrf1:
    def test_worked_values(self):
        m = prf1(spike_truth(10, {0, 1, 2, 5}), spike_truth(10, {0, 1, 2}))
        assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 0, 6)
        assert m.as_tuple() == pytest.approx((0.75, 1.0, 6 / 7))

    def test_never_predicting_spike(self):
        m = prf1(np.zeros(5, dtype=np.int8), spike_truth(5, {1}))
        assert m.as_tuple() == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("seed", range(1000))
    def test_matches_direct_counts(self, seed):
        rng = np.random.default_rng(seed)
        size = int(rng.integers(1, 60))
        preds = (rng.random(size) < rng.random()).astype(np.int8)
        truths = (rng.random(size) < rng.random()).astype(np.int8)
        tp = sum(1 for p, t in zip(preds, truths) if p == 1 and t == 1)
        fp = sum(1 for p, t in zip(preds, truths) if p == 1 and t == 0)
        fn = sum(1 for p, t in zip(preds, truths) if p == 0 and t == 1)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        m = prf1(preds, truths)
        assert m.total == size
        assert m.as_tuple() == pytest.approx((precision, recall, f1), rel=0, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            prf1(np.zeros(3), np.zeros(4))

    def test_random_baseline_precision_is_prevalence(self):
        truths = spike_truth(20, {0, 1, 2})
        m = prf1(np.ones(20, dtype=np.int8), truths)
        assert m.precision == pytest.approx(0.15)
        assert m.recall == 1.0


class TestDeltas:
    def test_percent_change(self):
        assert format_pct(pct_delta(0.17, 0.22)) == "(+29.41%)"
        assert format_pct(pct_delta(0.5, 0.5)) == "(0.0%)"
        assert format_pct(pct_delta(0.4, 0.3)) == "(-25.00%)"

    def test_zero_base(self):
        assert pct_delta(0.0, 0.0) == 0.0
        assert pct_delta(0.0, 0.2) is None
        assert format_pct(None) == "(n/a)"

    def test_eval_row(self):
        report = evaluate(np.zeros(10, dtype=np.int8), spike_truth(10, {0, 1, 2, 5}), spike_truth(10, {0, 1, 2}), variant="LOGIT-1")
        (row,) = report.rows
        assert row.model == "LOGIT"
        assert row.deltas() == (None, None, None)


class TestFamilies:
    @pytest.mark.parametrize(
        "name,family",
        [("LOGIT-3", "LOGIT"), ("ZDET-10-1.5", "ZDET"), ("CNN12", "CNN"), ("rnn4", "RNN"), ("Conv-LSTM2", "CONV")],
    )
    def test_family_of(self, name, family):
        assert family_of(name) == family

    def test_default_families(self):
        assert default_families(["CNN1", "CNN2", "RNN4", "LOGIT-1"]) == ["CNN", "LOGIT", "RNN"]


class TestFitAndSelect:
    def test_fit_and_apply(self, pool):
        matrix, truths = pool
        run = fit_and_apply("LOGIT-1", matrix, truths, matrix, truths, 1 / 7, None)
        assert [c.model_name for c in run.rules.DC] == ["CNN1", "RNN4"]
        assert np.flatnonzero(run.test_corrected).tolist() == [0, 1, 2, 5]
        assert np.array_equal(run.train_corrected, run.test_corrected)

    def test_exclude(self, pool):
        matrix, truths = pool
        run = fit_and_apply("LOGIT-1", matrix, truths, matrix, truths, 1 / 7, None, frozenset({"CNN1"}))
        assert run.rules.condition_names() == {"RNN4"}

    def test_select_best_models(self, pool):
        matrix, truths = pool
        # CNN1 has the best F1 and recall, RNN4 the best precision
        assert select_best_models(matrix, truths) == ["CNN1", "RNN4"]


class TestAblate:
    def test_family_rows(self, pool):
        matrix, truths = pool
        rep = ablate(["CNN", "RNN"], "LOGIT-1", 1 / 7, None, matrix, truths, matrix, truths)
        assert (rep.full_dc_size, rep.full_cc_size) == (2, 1)
        assert rep.full_test.as_tuple() == pytest.approx((0.75, 1.0, 6 / 7))
        cnn, rnn = rep.rows
        assert cnn.removed == ("CNN1",)
        assert cnn.test_metrics.as_tuple()[:2] == pytest.approx((1.0, 1 / 3))
        assert rnn.test_metrics.as_tuple()[:2] == pytest.approx((2 / 3, 2 / 3))
        assert rep.abs_deltas(cnn)[1] == pytest.approx(1 / 3 - 1.0)

    def test_unknown_family_warns(self, pool, caplog):
        matrix, truths = pool
        rep = ablate(["LSTM"], "LOGIT-1", 1 / 7, None, matrix, truths, matrix, truths)
        (row,) = rep.rows
        assert row.removed == ()
        assert "matches no conditions" in row.warning
        assert row.test_metrics == rep.full_test
        assert rep.pct_deltas(row) == (0.0, 0.0, 0.0)
        assert "LSTM" in caplog.text

    def test_never_selected_family_changes_nothing(self, pool):
        matrix, truths = pool
        silent = _matrix(
            {name: matrix.row(name) for name in matrix.model_names} | {"LSTM1": spike_truth(10, {3, 4, 6, 7})}
        )
        rep = ablate(["LSTM"], "LOGIT-1", 0.0, None, silent, truths, silent, truths)
        full = fit_and_apply("LOGIT-1", silent, truths, silent, truths, 0.0, None)
        assert "LSTM1" not in full.rules.condition_names()
        (row,) = rep.rows
        assert row.removed == ("LSTM1",)
        assert (row.dc_size, row.cc_size) == (rep.full_dc_size, rep.full_cc_size)
        assert row.test_metrics == rep.full_test

    def test_removing_whole_pool_restores_base(self, pool):
        matrix, truths = pool
        rep = ablate(["CNN", "RNN"], "LOGIT-1", 1 / 7, None, matrix, truths, matrix, truths)
        everything = fit_and_apply(
            "LOGIT-1", matrix, truths, matrix, truths, 1 / 7, None, frozenset({"CNN1", "RNN4"})
        )
        assert everything.rules.is_empty
        assert np.array_equal(everything.test_corrected, everything.test_base)
        assert rep.base_test == prf1(everything.test_base, truths)

    def test_empty_families(self, pool):
        matrix, truths = pool
        rep = ablate([], "LOGIT-1", 1 / 7, None, matrix, truths, matrix, truths)
        assert rep.rows == []


class TestEmit:
    def _report(self) -> EvalReport:
        report = EvalReport(provenance={"symbol": "SYNTH", "seed": 7}, prevalence=0.15)
        report.extend(
            evaluate(
                np.zeros(10, dtype=np.int8),
                spike_truth(10, {0, 1, 2, 5}),
                spike_truth(10, {0, 1, 2}),
                variant="LOGIT-1",
                explanations=[],
            )
        )
        return report

    def test_report_files(self, tmp_path):
        csv_path, md_path = emit_report(self._report(), tmp_path)
        with csv_path.open(encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        assert tuple(rows[0]) == REPORT_COLUMNS
        assert [r[2] for r in rows[1:]] == ["base", "edcr"]
        text = md_path.read_text(encoding="utf-8")
        assert "| LOGIT-1 (EDCR) | 0.75 (n/a) |" in text
        assert "precision 0.15" in text
        assert "No rule fired." in text

    def test_report_deterministic(self, tmp_path):
        a = emit_report(self._report(), tmp_path / "a")
        b = emit_report(self._report(), tmp_path / "b")
        assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]

    def test_empty_report(self, tmp_path):
        csv_path, _ = emit_report(EvalReport(), tmp_path)
        assert csv_path.read_text(encoding="utf-8").splitlines() == [",".join(REPORT_COLUMNS)]

    def test_ablation_files_and_charts(self, pool, tmp_path):
        matrix, truths = pool
        rep = ablate(["CNN", "RNN"], "LOGIT-1", 1 / 7, None, matrix, truths, matrix, truths)
        csv_path, md_path = emit_ablation([rep], tmp_path)
        rows = csv_path.read_text(encoding="utf-8").splitlines()
        assert rows[0] == ",".join(ABLATION_COLUMNS)
        assert rows[1].startswith("LOGIT-1,(full),")
        assert len(rows) == 4
        assert "## Primary LOGIT-1" in md_path.read_text(encoding="utf-8")

        (svg,) = emit_plots([rep], tmp_path / "charts")
        text = svg.read_text(encoding="utf-8")
        assert svg.name == "LOGIT-1.svg"
        assert text.count('<g class="group"') == 2
        assert "-CNN" in text and "-RNN" in text
        (again,) = emit_plots([rep], tmp_path / "charts2")
        assert again.read_bytes() == svg.read_bytes()

    def test_no_charts_without_rows(self, pool, tmp_path):
        matrix, truths = pool
        rep = ablate([], "LOGIT-1", 1 / 7, None, matrix, truths, matrix, truths)
        assert emit_plots([rep], tmp_path) == []
        assert emit_plots([], tmp_path) == []
