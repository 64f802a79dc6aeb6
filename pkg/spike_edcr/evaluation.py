from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from sklearn.metrics import confusion_matrix

from .edcr import Explanation, RuleData, RuleSet, apply_rules, build_conditions, mpsc_rule_learn, rule_firing_counts
from .model_pool import PredictionMatrix
from .types import Label
from .utils import family_of, format_pct, pct_delta, safe_ratio, worker_count

LOGGER = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "model",
    "variant",
    "stage",
    "precision",
    "recall",
    "f1",
    "delta_p_pct",
    "delta_r_pct",
    "delta_f1_pct",
)
ABLATION_COLUMNS = (
    "primary",
    "family",
    "removed",
    "dc_size",
    "cc_size",
    "precision",
    "recall",
    "f1",
    "delta_p_abs",
    "delta_r_abs",
    "delta_f1_abs",
    "delta_p_pct",
    "delta_r_pct",
    "delta_f1_pct",
    "warning",
)


@dataclass(frozen=True, slots=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_tuple(self) -> tuple[float, float, float]:
        return self.precision, self.recall, self.f1


def prf1(preds: np.ndarray, truths: np.ndarray, positive: Label = Label.SPIKE) -> Metrics:
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(truths)} truths")
    if len(preds) == 0:
        raise ValueError("prf1 needs at least one sample")
    tn, fp, fn, tp = (
        int(v) for v in confusion_matrix(truths == positive, preds == positive, labels=[False, True]).ravel()
    )
    precision = safe_ratio(tp, tp + fp)
    recall = safe_ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass(frozen=True, slots=True)
class EvalRow:
    variant: str
    base: Metrics
    corrected: Metrics

    @property
    def model(self) -> str:
        return family_of(self.variant)

    def deltas(self) -> tuple[float | None, float | None, float | None]:
        return tuple(pct_delta(o, n) for o, n in zip(self.base.as_tuple(), self.corrected.as_tuple()))  # type: ignore[return-value]


@dataclass(slots=True)
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    firings: dict[str, dict[tuple[str, str], int]] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)
    prevalence: float | None = None

    def extend(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)
        self.firings.update(other.firings)


def evaluate(
    base_preds: np.ndarray,
    corrected_preds: np.ndarray,
    truths: np.ndarray,
    *,
    variant: str = "primary",
    explanations: list[Explanation] | None = None,
) -> EvalReport:
    base = prf1(base_preds, truths)
    corrected = prf1(corrected_preds, truths)
    report = EvalReport(rows=[EvalRow(variant=variant, base=base, corrected=corrected)])
    if explanations is not None:
        report.firings[variant] = rule_firing_counts(explanations)
    return report


@dataclass(frozen=True, slots=True)
class EdcrRun:
    primary: str
    rules: RuleSet
    train_base: np.ndarray
    train_corrected: np.ndarray
    test_base: np.ndarray
    test_corrected: np.ndarray
    test_explanations: list[Explanation]


def fit_and_apply(
    primary: str,
    train_matrix: PredictionMatrix,
    train_truths: np.ndarray,
    test_matrix: PredictionMatrix,
    test_truths: np.ndarray,
    epsilon: float,
    k: int | None,
    exclude: frozenset[str] = frozenset(),
) -> EdcrRun:
    train_base = train_matrix.row(primary)
    conditions = [c for c in build_conditions(train_matrix, primary) if c.model_name not in exclude]
    data = RuleData(matrix=train_matrix, base_preds=train_base, truths=train_truths)
    rules = mpsc_rule_learn(epsilon, conditions, k, data, primary)
    train_corrected, _ = apply_rules(rules, train_base, train_matrix)
    test_base = test_matrix.row(primary)
    test_corrected, explanations = apply_rules(rules, test_base, test_matrix)
    return EdcrRun(
        primary=primary,
        rules=rules,
        train_base=train_base,
        train_corrected=train_corrected,
        test_base=test_base,
        test_corrected=test_corrected,
        test_explanations=explanations,
    )


def select_best_models(matrix: PredictionMatrix, truths: np.ndarray) -> list[str]:
    """Training-best F1, precision and recall models (distinct, ties by name)."""
    scored = [(name, prf1(matrix.row(name), truths)) for name in sorted(matrix.model_names)]
    if not scored:
        return []
    picks: list[str] = []
    for attr in ("f1", "precision", "recall"):
        # max keeps the first, alphabetically lowest, of tied models
        name = max(scored, key=lambda item: getattr(item[1], attr))[0]
        if name not in picks:
            picks.append(name)
    return picks


# ---------------------------------------------------------------- ablation


@dataclass(frozen=True, slots=True)
class AblationRow:
    family: str
    removed: tuple[str, ...]
    dc_size: int
    cc_size: int
    train_metrics: Metrics
    test_metrics: Metrics
    warning: str = ""


@dataclass(slots=True)
class AblationReport:
    primary: str
    full_dc_size: int
    full_cc_size: int
    full_train: Metrics
    full_test: Metrics
    base_test: Metrics
    rows: list[AblationRow] = field(default_factory=list)

    def abs_deltas(self, row: AblationRow) -> tuple[float, float, float]:
        return tuple(n - o for o, n in zip(self.full_test.as_tuple(), row.test_metrics.as_tuple()))  # type: ignore[return-value]

    def pct_deltas(self, row: AblationRow) -> tuple[float | None, float | None, float | None]:
        return tuple(pct_delta(o, n) for o, n in zip(self.full_test.as_tuple(), row.test_metrics.as_tuple()))  # type: ignore[return-value]


def default_families(model_names: list[str] | tuple[str, ...]) -> list[str]:
    return sorted({family_of(n) for n in model_names})


def ablate(
    families: list[str],
    primary: str,
    epsilon: float,
    k: int | None,
    train_matrix: PredictionMatrix,
    train_truths: np.ndarray,
    test_matrix: PredictionMatrix,
    test_truths: np.ndarray,
) -> AblationReport:
    full = fit_and_apply(primary, train_matrix, train_truths, test_matrix, test_truths, epsilon, k)
    report = AblationReport(
        primary=primary,
        full_dc_size=len(full.rules.DC),
        full_cc_size=len(full.rules.CC),
        full_train=prf1(full.train_corrected, train_truths),
        full_test=prf1(full.test_corrected, test_truths),
        base_test=prf1(full.test_base, test_truths),
    )
    pool_names = [c.model_name for c in build_conditions(train_matrix, primary)]

    def run(family: str) -> AblationRow:
        removed = tuple(n for n in pool_names if family_of(n) == family.upper())
        if not removed:
            message = f"family {family} matches no conditions"
            LOGGER.warning("Ablation for %s: %s", primary, message)
            return AblationRow(
                family=family,
                removed=(),
                dc_size=report.full_dc_size,
                cc_size=report.full_cc_size,
                train_metrics=report.full_train,
                test_metrics=report.full_test,
                warning=message,
            )
        result = fit_and_apply(
            primary, train_matrix, train_truths, test_matrix, test_truths, epsilon, k, frozenset(removed)
        )
        return AblationRow(
            family=family,
            removed=removed,
            dc_size=len(result.rules.DC),
            cc_size=len(result.rules.CC),
            train_metrics=prf1(result.train_corrected, train_truths),
            test_metrics=prf1(result.test_corrected, test_truths),
        )

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        report.rows = list(pool.map(run, families))
    LOGGER.info("Ablated %s: families=%s", primary, ",".join(families) or "-")
    return report


# ---------------------------------------------------------------- rendering


def _num(x: float) -> str:
    return repr(float(x))


def _pct_cell(delta: float | None) -> str:
    return "" if delta is None else repr(float(delta))


def _write_csv(path: Path, header: tuple[str, ...], rows: list[list[str]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def report_csv_rows(report: EvalReport) -> list[list[str]]:
    rows: list[list[str]] = []
    for row in report.rows:
        rows.append([row.model, row.variant, "base", *map(_num, row.base.as_tuple()), "", "", ""])
        rows.append([row.model, row.variant, "edcr", *map(_num, row.corrected.as_tuple()), *map(_pct_cell, row.deltas())])
    return rows


def render_report_markdown(report: EvalReport) -> str:
    lines: list[str] = []
    title = report.provenance.get("symbol", "")
    lines.append(f"# EDCR evaluation{(' - ' + title) if title else ''}")
    lines.append("")
    if report.provenance:
        lines.append(
            ", ".join(f"{k}={v}" for k, v in sorted(report.provenance.items()))
        )
        lines.append("")
    if report.prevalence is not None:
        lines.append(f"Random baseline (predict spike everywhere): precision {report.prevalence:.2f}, recall 1.00")
        lines.append("")
    lines.append("| Model Variant | Precision | Recall | F1 |")
    lines.append("|---|---|---|---|")
    for row in report.rows:
        p, r, f = row.base.as_tuple()
        lines.append(f"| {row.variant} | {p:.2f} | {r:.2f} | {f:.2f} |")
    for row in report.rows:
        (p, r, f), (dp, dr, df) = row.corrected.as_tuple(), row.deltas()
        lines.append(
            f"| {row.variant} (EDCR) | {p:.2f} {format_pct(dp)} | {r:.2f} {format_pct(dr)} | {f:.2f} {format_pct(df)} |"
        )
    for variant, counts in report.firings.items():
        lines.append("")
        lines.append(f"## Rule firings on test set: {variant}")
        lines.append("")
        if not counts:
            lines.append("No rule fired.")
            continue
        lines.append("| Rule | Condition | Fired |")
        lines.append("|---|---|---|")
        for (kind, name), count in counts.items():
            lines.append(f"| {kind} | cond_{name} | {count} |")
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, out_dir: Path) -> list[Path]:
    csv_path = out_dir / "report.csv"
    md_path = out_dir / "report.md"
    _write_csv(csv_path, REPORT_COLUMNS, report_csv_rows(report))
    md_path.write_text(render_report_markdown(report), encoding="utf-8")
    LOGGER.info("Wrote report: %s rows -> %s", len(report.rows), csv_path)
    return [csv_path, md_path]


def ablation_csv_rows(reports: list[AblationReport]) -> list[list[str]]:
    rows: list[list[str]] = []
    for rep in reports:
        rows.append(
            [rep.primary, "(full)", "", str(rep.full_dc_size), str(rep.full_cc_size),
             *map(_num, rep.full_test.as_tuple()), "0.0", "0.0", "0.0", "0.0", "0.0", "0.0", ""]
        )
        for row in rep.rows:
            rows.append(
                [
                    rep.primary,
                    row.family,
                    ";".join(row.removed),
                    str(row.dc_size),
                    str(row.cc_size),
                    *map(_num, row.test_metrics.as_tuple()),
                    *map(_num, rep.abs_deltas(row)),
                    *map(_pct_cell, rep.pct_deltas(row)),
                    row.warning,
                ]
            )
    return rows


def render_ablation_markdown(reports: list[AblationReport]) -> str:
    lines = ["# EDCR ablation", ""]
    for rep in reports:
        lines.append(f"## Primary {rep.primary}")
        lines.append("")
        p, r, f = rep.full_test.as_tuple()
        lines.append(f"Full pool: precision {p:.2f}, recall {r:.2f}, F1 {f:.2f} (DC={rep.full_dc_size}, CC={rep.full_cc_size})")
        lines.append("")
        lines.append("| Removed family | Precision | Recall | F1 | dP (pts) | dR (pts) | dF1 (pts) |")
        lines.append("|---|---|---|---|---|---|---|")
        for row in rep.rows:
            (p, r, f), (dp, dr, df), (pp, pr, pf) = row.test_metrics.as_tuple(), rep.abs_deltas(row), rep.pct_deltas(row)
            note = f" ({row.warning})" if row.warning else ""
            lines.append(
                f"| {row.family}{note} | {p:.2f} {format_pct(pp)} | {r:.2f} {format_pct(pr)} | {f:.2f} {format_pct(pf)} "
                f"| {dp * 100:+.1f} | {dr * 100:+.1f} | {df * 100:+.1f} |"
            )
        lines.append("")
    return "\n".join(lines)


def emit_ablation(reports: list[AblationReport], out_dir: Path) -> list[Path]:
    csv_path = out_dir / "ablation.csv"
    md_path = out_dir / "ablation.md"
    _write_csv(csv_path, ABLATION_COLUMNS, ablation_csv_rows(reports))
    md_path.write_text(render_ablation_markdown(reports), encoding="utf-8")
    return [csv_path, md_path]
