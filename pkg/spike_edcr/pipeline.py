from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .charts import emit_plots
from .config import RunConfig
from .dataset import (
    build_samples,
    chronological_split,
    read_dataset_csv,
    read_dataset_meta,
    spike_prevalence,
    write_dataset_csv,
    write_dataset_meta,
)
from .edcr import (
    Explanation,
    RuleData,
    RuleSet,
    apply_rules,
    build_conditions,
    mpsc_rule_learn,
    render_explanation,
    render_rules,
)
from .evaluation import (
    AblationReport,
    EvalReport,
    ablate,
    default_families,
    emit_ablation,
    emit_report,
    evaluate,
    fit_and_apply,
    select_best_models,
)
from .market_data import (
    PriceSeries,
    generate_synthetic,
    label_spikes,
    load_price_csv,
    random_jumps,
    read_labels_csv,
    rolling_stats,
    write_labels_csv,
)
from .model_pool import (
    PredictionMatrix,
    build_builtin_pool,
    export_predictions,
    import_predictions,
    merge_matrices,
    predict_matrix,
)
from .state import RunManifest
from .types import UndefinedRecallError

LOGGER = logging.getLogger(__name__)

LABELS_CSV = "labels.csv"
TRAIN_CSV = "train.csv"
TEST_CSV = "test.csv"
DATASET_META = "dataset.json"
BUILTIN_TRAIN = "builtin_train.csv"
BUILTIN_TEST = "builtin_test.csv"
POOL_JSON = "pool.json"
IMPORTED_TRAIN = "imported_train.csv"
IMPORTED_TEST = "imported_test.csv"
RULES_JSON = "rules.json"
RULES_TXT = "rules.txt"
CORRECTED_CSV = "corrected.csv"
EXPLANATIONS_JSON = "explanations.json"
CHARTS_DIR = "charts"


@dataclass(slots=True)
class StageResult:
    stage: str
    outputs: list[Path] = field(default_factory=list)


def _finish(cfg: RunConfig, stage: str, outputs: list[Path]) -> StageResult:
    manifest = RunManifest(cfg.output.out_dir)
    manifest.load()
    manifest.record(stage, outputs)
    manifest.save()
    LOGGER.info("Stage %s done: outputs=%s", stage, ",".join(p.name for p in outputs) or "-")
    return StageResult(stage=stage, outputs=outputs)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `{producer}` first")
    return path


def load_series(cfg: RunConfig) -> PriceSeries:
    if cfg.data.csv_path is not None:
        return load_price_csv(cfg.data.csv_path, cfg.data.symbol)
    s = cfg.synthetic
    jumps = random_jumps(
        cfg.app.seed,
        s.length,
        s.jump_count,
        s.jump_sigmas_min,
        s.jump_sigmas_max,
        window=cfg.labels.window,
    )
    LOGGER.info("Generating synthetic %s: length=%s jumps=%s seed=%s", cfg.data.symbol, s.length, len(jumps), cfg.app.seed)
    return generate_synthetic(
        cfg.app.seed,
        s.length,
        s.start,
        s.drift,
        s.vol,
        jumps,
        symbol=cfg.data.symbol,
        start_date=date.fromisoformat(cfg.data.start_date),
        sigma_window=cfg.labels.window,
    )


def stage_label(cfg: RunConfig) -> StageResult:
    series = load_series(cfg)
    stats = rolling_stats(series, cfg.labels.window)
    labels = label_spikes(series, cfg.labels.window, cfg.labels.k)
    path = cfg.output.out_dir / LABELS_CSV
    write_labels_csv(path, series, labels, stats)
    return _finish(cfg, "label", [path])


def stage_featurize(cfg: RunConfig) -> StageResult:
    out = cfg.output.out_dir
    series, labels = read_labels_csv(_require(out / LABELS_CSV, "label"), cfg.data.symbol, cfg.labels.window, cfg.labels.k)
    ds = build_samples(series, labels, cfg.dataset.n)
    split = chronological_split(ds, cfg.dataset.ratio)
    write_dataset_csv(out / TRAIN_CSV, split.train)
    write_dataset_csv(out / TEST_CSV, split.test)
    write_dataset_meta(out / DATASET_META, split, cfg.data.symbol)
    return _finish(cfg, "featurize", [out / TRAIN_CSV, out / TEST_CSV, out / DATASET_META])


def _load_split(cfg: RunConfig):
    out = cfg.output.out_dir
    meta = read_dataset_meta(_require(out / DATASET_META, "featurize"))
    if meta.get("n") != cfg.dataset.n:
        raise ValueError(f"{DATASET_META} was built with n={meta.get('n')}, config has n={cfg.dataset.n}; rerun `featurize`")
    train = read_dataset_csv(_require(out / TRAIN_CSV, "featurize"), meta["n"], meta["feature_spec"])
    test = read_dataset_csv(_require(out / TEST_CSV, "featurize"), meta["n"], meta["feature_spec"])
    if len(train) != meta["train_samples"] or len(test) != meta["test_samples"]:
        raise ValueError(f"{TRAIN_CSV}/{TEST_CSV} do not match the sample counts in {DATASET_META}; rerun `featurize`")
    return train, test


def stage_train(cfg: RunConfig) -> StageResult:
    out = cfg.output.out_dir
    train, test = _load_split(cfg)
    pool = build_builtin_pool(train, cfg.pool, cfg.app.seed)
    export_predictions(predict_matrix(pool, train), out / BUILTIN_TRAIN)
    export_predictions(predict_matrix(pool, test), out / BUILTIN_TEST)
    specs = [p.spec.to_json() for p in sorted(pool, key=lambda p: p.spec.name)]
    (out / POOL_JSON).write_text(json.dumps({"predictors": specs}, indent=2) + "\n", encoding="utf-8")
    return _finish(cfg, "train", [out / BUILTIN_TRAIN, out / BUILTIN_TEST, out / POOL_JSON])


def stage_import(cfg: RunConfig) -> StageResult:
    if not cfg.pool.import_paths:
        raise ValueError("import-preds needs at least one --import-preds PATH or [pool].import_paths entry")
    out = cfg.output.out_dir
    train, test = _load_split(cfg)
    imported = merge_matrices(*(import_predictions(p) for p in cfg.pool.import_paths))
    export_predictions(imported.select(train.indices), out / IMPORTED_TRAIN)
    export_predictions(imported.select(test.indices), out / IMPORTED_TEST)
    return _finish(cfg, "import-preds", [out / IMPORTED_TRAIN, out / IMPORTED_TEST])


def load_matrices(cfg: RunConfig) -> tuple[PredictionMatrix, PredictionMatrix]:
    """Built-in pool, plus the imported predictions when [pool].import_paths is set."""
    out = cfg.output.out_dir
    train_parts = [import_predictions(_require(out / BUILTIN_TRAIN, "train"))]
    test_parts = [import_predictions(_require(out / BUILTIN_TEST, "train"))]
    if cfg.pool.import_paths:
        train_parts.append(import_predictions(_require(out / IMPORTED_TRAIN, "import-preds")))
        test_parts.append(import_predictions(_require(out / IMPORTED_TEST, "import-preds")))
    elif (out / IMPORTED_TRAIN).exists():
        LOGGER.info("Ignoring %s: no [pool].import_paths configured", IMPORTED_TRAIN)
    return merge_matrices(*train_parts).canonical(), merge_matrices(*test_parts).canonical()


def _check_primary(primary: str, matrix: PredictionMatrix) -> str:
    if primary not in matrix.model_names:
        raise ValueError(f"primary model {primary!r} not in pool {list(matrix.model_names)}")
    return primary


def _require_primary(cfg: RunConfig, matrix: PredictionMatrix) -> str:
    if not cfg.edcr.primary:
        raise ValueError("no primary model designated; set [edcr].primary or pass --primary")
    return _check_primary(cfg.edcr.primary, matrix)


def _load_rules(cfg: RunConfig) -> RuleSet:
    rules = RuleSet.load(_require(cfg.output.out_dir / RULES_JSON, "learn"))
    if cfg.edcr.primary and cfg.edcr.primary != rules.primary_model:
        LOGGER.warning(
            "%s was learned for %s, not the configured %s; using the stored rules",
            RULES_JSON,
            rules.primary_model,
            cfg.edcr.primary,
        )
    return rules


def stage_learn(cfg: RunConfig) -> StageResult:
    out = cfg.output.out_dir
    train, _ = _load_split(cfg)
    train_m, _ = load_matrices(cfg)
    train_m = train_m.select(train.indices)
    primary = _require_primary(cfg, train_m)
    data = RuleData(matrix=train_m, base_preds=train_m.row(primary), truths=train.labels)
    rules = mpsc_rule_learn(cfg.edcr.epsilon, build_conditions(train_m, primary), cfg.top_k, data, primary)
    rules.save(out / RULES_JSON)
    (out / RULES_TXT).write_text(render_rules(rules), encoding="utf-8")
    return _finish(cfg, "learn", [out / RULES_JSON, out / RULES_TXT])


def stage_apply(cfg: RunConfig) -> StageResult:
    out = cfg.output.out_dir
    rules = _load_rules(cfg)
    train, test = _load_split(cfg)
    train_m, test_m = load_matrices(cfg)
    _check_primary(rules.primary_model, train_m)

    frames: list[pd.DataFrame] = []
    samples: list[dict] = []
    for split_name, ds, matrix in (("train", train, train_m), ("test", test, test_m)):
        matrix = matrix.select(ds.indices)
        base = matrix.row(rules.primary_model)
        corrected, explanations = apply_rules(rules, base, matrix)
        frames.append(
            pd.DataFrame(
                {
                    "sample_index": ds.indices.astype(int),
                    "split": split_name,
                    "truth": ds.labels.astype(int),
                    "base": base.astype(int),
                    "corrected": corrected.astype(int),
                }
            )
        )
        samples.extend({"split": split_name, **e.to_json()} for e in explanations)

    pd.concat(frames, ignore_index=True).to_csv(out / CORRECTED_CSV, index=False, lineterminator="\n")
    payload = {"primary_model": rules.primary_model, "samples": samples}
    (out / EXPLANATIONS_JSON).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    flipped = sum(1 for s in samples if s["flipped"])
    LOGGER.info("Applied rules of %s: flipped=%s", rules.primary_model, flipped)
    return _finish(cfg, "apply", [out / CORRECTED_CSV, out / EXPLANATIONS_JSON])


def _primaries(cfg: RunConfig, primary: str, train_m: PredictionMatrix, truths: np.ndarray) -> list[str]:
    primaries = [primary]
    if cfg.edcr.compare_best:
        primaries.extend(n for n in select_best_models(train_m, truths) if n not in primaries)
    return primaries


def _provenance(cfg: RunConfig, rules: RuleSet) -> dict[str, object]:
    return {
        "symbol": cfg.data.symbol,
        "source": str(cfg.data.csv_path.name) if cfg.data.csv_path else "synthetic",
        "label_window": cfg.labels.window,
        "k_sigma": cfg.labels.k,
        "n": cfg.dataset.n,
        "ratio": cfg.dataset.ratio,
        "primary": rules.primary_model,
        "epsilon": rules.epsilon,
        "top_k": rules.top_k if rules.top_k is not None else "all",
        "seed": cfg.app.seed,
    }


def stage_eval(cfg: RunConfig) -> StageResult:
    rules = _load_rules(cfg)
    train, test = _load_split(cfg)
    train_m, test_m = load_matrices(cfg)
    train_m, test_m = train_m.select(train.indices), test_m.select(test.indices)
    primary = _check_primary(rules.primary_model, train_m)

    report = EvalReport(provenance=_provenance(cfg, rules), prevalence=spike_prevalence(test))
    base = test_m.row(primary)
    corrected, explanations = apply_rules(rules, base, test_m)
    report.extend(evaluate(base, corrected, test.labels, variant=primary, explanations=explanations))

    # comparison primaries have no stored rules; learn them with the stored settings
    for extra in _primaries(cfg, primary, train_m, train.labels)[1:]:
        try:
            run = fit_and_apply(extra, train_m, train.labels, test_m, test.labels, rules.epsilon, rules.top_k)
        except UndefinedRecallError as e:
            LOGGER.warning("Skipping comparison primary %s: %s", extra, e)
            continue
        report.extend(
            evaluate(run.test_base, run.test_corrected, test.labels, variant=extra, explanations=run.test_explanations)
        )
    return _finish(cfg, "eval", emit_report(report, cfg.output.out_dir))


def stage_ablate(cfg: RunConfig) -> StageResult:
    rules = _load_rules(cfg)
    train, test = _load_split(cfg)
    train_m, test_m = load_matrices(cfg)
    train_m, test_m = train_m.select(train.indices), test_m.select(test.indices)
    primary = _check_primary(rules.primary_model, train_m)

    reports: list[AblationReport] = []
    for candidate in _primaries(cfg, primary, train_m, train.labels):
        families = default_families([c.model_name for c in build_conditions(train_m, candidate)])
        try:
            reports.append(
                ablate(families, candidate, rules.epsilon, rules.top_k, train_m, train.labels, test_m, test.labels)
            )
        except UndefinedRecallError as e:
            if candidate == primary:
                raise
            LOGGER.warning("Skipping comparison primary %s: %s", candidate, e)
    outputs = emit_ablation(reports, cfg.output.out_dir)
    outputs.extend(emit_plots(reports, cfg.output.out_dir / CHARTS_DIR))
    return _finish(cfg, "ablate", outputs)


def explain_sample(cfg: RunConfig, sample: int) -> str:
    path = _require(cfg.output.out_dir / EXPLANATIONS_JSON, "apply")
    payload = json.loads(path.read_text(encoding="utf-8"))
    for item in payload.get("samples", []):
        if int(item["index"]) == sample:
            text = render_explanation(Explanation.from_json(item), payload.get("primary_model", "f_theta"))
            return f"[{item.get('split', '?')}] {text}"
    raise ValueError(f"sample {sample} not in {path.name}")


def run_demo(cfg: RunConfig) -> list[StageResult]:
    stages = [stage_label, stage_featurize, stage_train]
    if cfg.pool.import_paths:
        stages.append(stage_import)
    stages.extend([stage_learn, stage_apply, stage_eval, stage_ablate])
    results: list[StageResult] = []
    for stage in stages:
        results.append(stage(cfg))
    LOGGER.info("Demo complete: out_dir=%s stages=%s", cfg.output.out_dir, len(results))
    return results
