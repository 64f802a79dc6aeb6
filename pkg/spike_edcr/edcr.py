"""Error detection and correction rules over a pool of binary spike predictors.

A condition fires on a sample when its model predicted ``spike`` there. The
primary model's ``no`` predictions are flipped to ``spike`` whenever a learned
detection condition or correction pair fires.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .model_pool import PredictionMatrix
from .types import Label, UndefinedRecallError, UnknownConditionError
from .utils import safe_ratio

LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True, order=True)
class Condition:
    id: int
    model_name: str


Pair = tuple[Condition, Label]


@dataclass(frozen=True, slots=True)
class ClassStats:
    cls: Label
    N: int
    P: float
    R: float
    # ground-truth count of the class; equals N*P/R whenever R > 0
    GT: int

    @property
    def budget_base(self) -> float:
        return float(self.GT)


@dataclass(frozen=True, slots=True)
class RuleSet:
    primary_model: str
    epsilon: float
    top_k: int | None
    DC: tuple[Condition, ...] = ()
    CC: tuple[Pair, ...] = ()
    stats: ClassStats | None = None
    correction_precision: float = 0.0
    target_class: Label = Label.SPIKE

    @property
    def is_empty(self) -> bool:
        return not self.DC and not self.CC

    def condition_names(self) -> set[str]:
        return {c.model_name for c in self.DC} | {c.model_name for c, _ in self.CC}

    def to_json(self) -> dict[str, Any]:
        stats = self.stats
        return {
            "target_class": self.target_class.token,
            "epsilon": self.epsilon,
            "primary_model": self.primary_model,
            "filter": {"method": "top_f1", "k": self.top_k},
            "DC": [c.model_name for c in self.DC],
            "CC": [[c.model_name, j.token] for c, j in self.CC],
            "stats": {"N": stats.N, "P": stats.P, "R": stats.R} if stats else None,
            "correction_precision": self.correction_precision,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "RuleSet":
        names = sorted({*data.get("DC", []), *(n for n, _ in data.get("CC", []))})
        ids = {name: i for i, name in enumerate(names)}
        raw_stats = data.get("stats")
        stats = None
        if raw_stats:
            p, r = float(raw_stats["P"]), float(raw_stats["R"])
            gt = int(round(raw_stats["N"] * p / r)) if r > 0 else 0
            stats = ClassStats(cls=Label.NO, N=int(raw_stats["N"]), P=p, R=r, GT=gt)
        return cls(
            primary_model=str(data["primary_model"]),
            epsilon=float(data["epsilon"]),
            top_k=data.get("filter", {}).get("k"),
            DC=tuple(Condition(ids[n], n) for n in data.get("DC", [])),
            CC=tuple((Condition(ids[n], n), Label.parse(j)) for n, j in data.get("CC", [])),
            stats=stats,
            correction_precision=float(data.get("correction_precision", 0.0)),
            target_class=Label.parse(data.get("target_class", "spike")),
        )

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "RuleSet":
        return cls.from_json(json.loads(path.read_text(encoding="utf-8")))


@dataclass(frozen=True, slots=True)
class Explanation:
    index: int
    base: Label
    corrected: Label
    fired_detection_conditions: tuple[str, ...] = ()
    fired_correction_pairs: tuple[tuple[str, Label], ...] = ()

    @property
    def flipped(self) -> bool:
        return self.base is Label.NO and self.corrected is Label.SPIKE

    def to_json(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "base": self.base.token,
            "corrected": self.corrected.token,
            "flipped": self.flipped,
            "fired_detection_conditions": list(self.fired_detection_conditions),
            "fired_correction_pairs": [[n, j.token] for n, j in self.fired_correction_pairs],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "Explanation":
        return cls(
            index=int(data["index"]),
            base=Label.parse(data["base"]),
            corrected=Label.parse(data["corrected"]),
            fired_detection_conditions=tuple(data.get("fired_detection_conditions", [])),
            fired_correction_pairs=tuple((n, Label.parse(j)) for n, j in data.get("fired_correction_pairs", [])),
        )


@dataclass(slots=True)
class RuleData:
    """Primary predictions, truths and condition columns over one sample set."""

    matrix: PredictionMatrix
    base_preds: np.ndarray
    truths: np.ndarray
    _rows: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        m = self.matrix.shape[1]
        if len(self.base_preds) != m or len(self.truths) != m:
            raise ValueError(
                f"predictions ({len(self.base_preds)}) and truths ({len(self.truths)}) must match {m} matrix samples"
            )

    def column(self, condition: Condition) -> np.ndarray:
        try:
            return self._rows[condition.model_name]
        except KeyError:
            pass
        if condition.model_name not in self.matrix.model_names:
            raise UnknownConditionError(f"condition {condition.id} ({condition.model_name}) not in prediction matrix")
        row = self.matrix.row(condition.model_name) == Label.SPIKE
        self._rows[condition.model_name] = row
        return row

    def columns(self, conditions: Sequence[Condition]) -> np.ndarray:
        if not conditions:
            return np.zeros((0, len(self.truths)), dtype=bool)
        return np.vstack([self.column(c) for c in conditions])


def build_conditions(matrix: PredictionMatrix, primary: str | None) -> list[Condition]:
    """Stable ids in alphabetical model order; the primary never conditions itself."""
    names = sorted(n for n in matrix.model_names if n != primary)
    return [Condition(i, name) for i, name in enumerate(names)]


def class_stats(base_preds: np.ndarray, truths: np.ndarray, cls: Label) -> ClassStats:
    if len(base_preds) != len(truths) or len(truths) == 0:
        raise ValueError("class_stats needs equal, non-empty prediction and truth arrays")
    predicted = base_preds == cls
    actual = truths == cls
    n = int(predicted.sum())
    gt = int(actual.sum())
    tp = int((predicted & actual).sum())
    if gt == 0:
        raise UndefinedRecallError(f"no ground-truth samples of class {cls.token}; recall undefined")
    return ClassStats(cls=cls, N=n, P=safe_ratio(tp, n), R=tp / gt, GT=gt)


def det_counters(
    DC: Iterable[Condition], data: RuleData, cls: Label = Label.NO
) -> tuple[int, int, int]:
    domain = data.base_preds == cls
    fired = np.zeros(len(data.truths), dtype=bool)
    for c in DC:
        fired |= data.column(c)
    body = fired & domain
    pos = int((body & (data.truths != cls)).sum())
    neg = int((body & (data.truths == cls)).sum())
    return pos, neg, pos + neg


def det_rule_learn(
    cls: Label, epsilon: float, C: Sequence[Condition], data: RuleData
) -> list[Condition]:
    """Greedy detection-condition selection under a NEG budget.

    Returns the selected conditions in selection order.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    stats = class_stats(data.base_preds, data.truths, cls)
    if not C:
        return []
    if stats.N == 0:
        LOGGER.warning("Primary never predicts %s; nothing to detect", cls.token)
        return []
    if stats.R == 0:
        raise UndefinedRecallError(f"primary recall on class {cls.token} is 0; detection budget undefined")

    budget = epsilon * stats.budget_base
    domain = data.base_preds == cls
    err = (data.truths != cls)[domain]
    cond = data.columns(C)[:, domain]
    ids = np.array([c.id for c in C])

    remaining = np.ones(len(C), dtype=bool)
    covered = np.zeros(int(domain.sum()), dtype=bool)
    selected: list[Condition] = []
    while remaining.any():
        cand = np.flatnonzero(remaining)
        union = cond[cand] | covered
        pos = (union & err).sum(axis=1)
        neg = (union & ~err).sum(axis=1)
        feasible = neg <= budget
        if not feasible.any():
            break
        f_idx = cand[feasible]
        f_pos = pos[feasible]
        best_pos = f_pos.max()
        tied = f_idx[f_pos == best_pos]
        best = int(tied[np.argmin(ids[tied])])
        selected.append(C[best])
        remaining[best] = False
        covered |= cond[best]
        LOGGER.debug("DetRuleLearn add %s: POS=%s budget=%.3f", C[best].model_name, int(best_pos), budget)
    return selected


def corr_counters(
    CC: Iterable[Pair], data: RuleData, cls: Label = Label.SPIKE
) -> tuple[int, int]:
    body = np.zeros(len(data.truths), dtype=bool)
    for c, j in CC:
        body |= data.column(c) & (data.base_preds == j)
    return int((body & (data.truths == cls)).sum()), int(body.sum())


def _class_precision(data: RuleData, cls: Label) -> float:
    predicted = data.base_preds == cls
    return safe_ratio(int((predicted & (data.truths == cls)).sum()), int(predicted.sum()))


def corr_rule_learn(cls: Label, CC_all: Sequence[Pair], data: RuleData) -> list[Pair]:
    """Precision-ordered pass over condition-class pairs.

    The comparison set ``CC'`` starts as the full, unfiltered ``CC_all``.
    """
    if not CC_all:
        return []
    p_i = _class_precision(data, cls)
    positive = data.truths == cls
    bodies = np.vstack([data.column(c) & (data.base_preds == j) for c, j in CC_all])

    def ratio(mask: np.ndarray) -> float:
        return safe_ratio(int((mask & positive).sum()), int(mask.sum()))

    singles = [ratio(b) for b in bodies]
    order = sorted(
        (k for k in range(len(CC_all)) if singles[k] > p_i),
        key=lambda k: (-singles[k], CC_all[k][0].id, int(CC_all[k][1])),
    )

    chosen: list[int] = []
    chosen_body = np.zeros(len(data.truths), dtype=bool)
    prime_cover = bodies.sum(axis=0)
    for k in order:
        with_k = chosen_body | bodies[k]
        a = ratio(with_k) - ratio(chosen_body)
        b = ratio((prime_cover - bodies[k]) > 0) - ratio(prime_cover > 0)
        if a >= b:
            chosen.append(k)
            chosen_body = with_k
        else:
            prime_cover = prime_cover - bodies[k]

    if ratio(chosen_body) <= p_i:
        return []
    return [CC_all[k] for k in chosen]


def condition_f1(c: Condition, data: RuleData) -> float:
    fired = data.column(c)
    actual = data.truths == Label.SPIKE
    tp = int((fired & actual).sum())
    if tp == 0:
        return 0.0
    fp = int((fired & ~actual).sum())
    fn = int((~fired & actual).sum())
    return 2 * tp / (2 * tp + fp + fn)


def top_f1_filter(C: Sequence[Condition], k: int | None, data: RuleData) -> list[Condition]:
    """Keep the k best standalone-F1 conditions, preserving input order. ``None`` keeps all."""
    if k is None or k >= len(C):
        return list(C)
    if k < 1:
        raise ValueError("top-F1 k must be >= 1")
    scored = sorted(C, key=lambda c: (-condition_f1(c, data), c.id))
    keep = {c.id for c in scored[:k]}
    return [c for c in C if c.id in keep]


def mpsc_rule_learn(
    epsilon: float,
    C: Sequence[Condition],
    k: int | None,
    data: RuleData,
    primary: str,
) -> RuleSet:
    stats = class_stats(data.base_preds, data.truths, Label.NO)
    C_f = top_f1_filter(C, k, data)
    CC_all: list[Pair] = [(c, Label.NO) for c in C_f]
    DC = det_rule_learn(Label.NO, epsilon, C_f, data)
    CC = corr_rule_learn(Label.SPIKE, CC_all, data)
    pos, bod = corr_counters(CC, data, Label.SPIKE)
    rs = RuleSet(
        primary_model=primary,
        epsilon=epsilon,
        top_k=k,
        DC=tuple(DC),
        CC=tuple(CC),
        stats=stats,
        correction_precision=safe_ratio(pos, bod),
    )
    LOGGER.info(
        "Learned rules for %s: conditions=%s filtered=%s DC=%s CC=%s",
        primary,
        len(C),
        len(C_f),
        len(DC),
        len(CC),
    )
    return rs


def apply_rules(
    rs: RuleSet, base_preds: np.ndarray, matrix: PredictionMatrix
) -> tuple[np.ndarray, list[Explanation]]:
    for name in sorted(rs.condition_names()):
        if name not in matrix.model_names:
            raise UnknownConditionError(f"rule condition {name} not in prediction matrix")
    if len(base_preds) != matrix.shape[1]:
        raise ValueError("base predictions not aligned to prediction matrix")

    det_rows = {c.model_name: matrix.row(c.model_name) == Label.SPIKE for c in rs.DC}
    corr_rows = [(c.model_name, j, matrix.row(c.model_name) == Label.SPIKE) for c, j in rs.CC]
    corrected = np.array(base_preds, dtype=np.int8, copy=True)
    explanations: list[Explanation] = []

    for s, index in enumerate(matrix.sample_indices):
        base = Label(int(base_preds[s]))
        fired_det: tuple[str, ...] = ()
        fired_corr: tuple[tuple[str, Label], ...] = ()
        if base is Label.NO:
            fired_det = tuple(n for n, row in det_rows.items() if row[s])
            fired_corr = tuple((n, j) for n, j, row in corr_rows if row[s] and base == j)
            if fired_det or fired_corr:
                corrected[s] = Label.SPIKE
        explanations.append(
            Explanation(
                index=int(index),
                base=base,
                corrected=Label(int(corrected[s])),
                fired_detection_conditions=fired_det,
                fired_correction_pairs=fired_corr,
            )
        )
    return corrected, explanations


def rule_firing_counts(explanations: Iterable[Explanation]) -> dict[tuple[str, str], int]:
    counts: Counter[tuple[str, str]] = Counter()
    for e in explanations:
        for name in e.fired_detection_conditions:
            counts[("detection", name)] += 1
        for name, _ in e.fired_correction_pairs:
            counts[("correction", name)] += 1
    return dict(sorted(counts.items()))


def _rule_line(model_name: str, prior: Label = Label.NO) -> str:
    return f"corr_spike(w) <- assign_{prior.token}(w) AND cond_{model_name}(w)"


def render_rules(rs: RuleSet) -> str:
    k = "all" if rs.top_k is None else str(rs.top_k)
    lines = [
        f"# corr_spike rules: primary={rs.primary_model} epsilon={rs.epsilon:g} "
        f"filter=top_f1(k={k}) detection={len(rs.DC)} correction={len(rs.CC)}"
    ]
    lines.extend(_rule_line(c.model_name) for c in sorted(rs.DC, key=lambda c: c.model_name))
    lines.extend(_rule_line(c.model_name, j) for c, j in sorted(rs.CC, key=lambda p: (p[0].model_name, int(p[1]))))
    return "\n".join(lines) + "\n"


def render_explanation(e: Explanation, primary: str = "f_theta") -> str:
    lines = [f"sample {e.index}: base={e.base.token} corrected={e.corrected.token} flipped={'yes' if e.flipped else 'no'}"]
    for name in e.fired_detection_conditions:
        lines.append(f"  [detection]  {_rule_line(name)}")
        lines.append(
            f"    If base model {primary} identifies sample w as not having a spike (class no) and "
            f"auxiliary model {name} classifies it as a spike, then the overall ensemble prediction is spike."
        )
    for name, prior in e.fired_correction_pairs:
        lines.append(f"  [correction] {_rule_line(name, prior)}")
    if not e.fired_detection_conditions and not e.fired_correction_pairs:
        lines.append("  no rule fired")
    return "\n".join(lines) + "\n"
