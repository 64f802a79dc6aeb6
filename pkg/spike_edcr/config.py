from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any


@dataclass(slots=True)
class AppConfig:
    log_level: str = "INFO"
    seed: int = 7


@dataclass(slots=True)
class DataConfig:
    symbol: str = "SYNTH"
    # empty means: generate a synthetic series from [synthetic]
    csv_path: Path | None = None
    start_date: str = "2020-01-01"


@dataclass(slots=True)
class SyntheticConfig:
    length: int = 1000
    start: float = 100.0
    drift: float = 0.0002
    vol: float = 0.01
    jump_count: int = 40
    jump_sigmas_min: float = 3.0
    jump_sigmas_max: float = 8.0


@dataclass(slots=True)
class LabelConfig:
    window: int = 20
    k: float = 2.0


@dataclass(slots=True)
class DatasetConfig:
    n: int = 20
    ratio: float = 0.6


@dataclass(slots=True)
class LogisticVariant:
    lr: float = 0.5
    epochs: int = 300
    pos_weight: float = 1.0
    feature_fraction: float = 1.0


@dataclass(slots=True)
class PoolConfig:
    logistic: list[LogisticVariant] = field(
        default_factory=lambda: [
            LogisticVariant(pos_weight=1.0),
            LogisticVariant(pos_weight=4.0),
            LogisticVariant(pos_weight=8.0, feature_fraction=0.5),
            LogisticVariant(lr=0.1, epochs=500, pos_weight=6.0, feature_fraction=0.7),
        ]
    )
    zscore: list[tuple[int, float]] = field(
        default_factory=lambda: [(5, 1.5), (5, 2.5), (10, 1.5), (10, 2.5), (15, 1.5), (15, 2.5)]
    )
    import_paths: list[Path] = field(default_factory=list)


@dataclass(slots=True)
class EdcrConfig:
    primary: str = "LOGIT-2"
    epsilon: float = 0.1
    # 0 disables Top-F1 filtering
    top_k: int = 200
    compare_best: bool = True


@dataclass(slots=True)
class OutputConfig:
    out_dir: Path = Path("edcr-out")


@dataclass(slots=True)
class RunConfig:
    app: AppConfig = field(default_factory=AppConfig)
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    labels: LabelConfig = field(default_factory=LabelConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    pool: PoolConfig = field(default_factory=PoolConfig)
    edcr: EdcrConfig = field(default_factory=EdcrConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def top_k(self) -> int | None:
        return self.edcr.top_k if self.edcr.top_k > 0 else None


def default_config() -> RunConfig:
    return RunConfig()


def _expand_path(path: str, base: Path | None) -> Path:
    p = Path(path).expanduser()
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def _parse_logistic(items: Any) -> list[LogisticVariant]:
    if not isinstance(items, list) or not items:
        raise ValueError("[pool].logistic must be a non-empty array of tables")
    out: list[LogisticVariant] = []
    for item in items:
        if not isinstance(item, dict):
            raise ValueError("[pool].logistic entries must be tables")
        out.append(
            LogisticVariant(
                lr=float(item.get("lr", 0.5)),
                epochs=int(item.get("epochs", 300)),
                pos_weight=float(item.get("pos_weight", 1.0)),
                feature_fraction=float(item.get("feature_fraction", 1.0)),
            )
        )
    return out


def _parse_zscore(items: Any) -> list[tuple[int, float]]:
    if not isinstance(items, list):
        raise ValueError("[pool].zscore must be an array of [window, threshold] pairs")
    out: list[tuple[int, float]] = []
    for item in items:
        if not isinstance(item, list) or len(item) != 2:
            raise ValueError("[pool].zscore entries must be [window, threshold]")
        out.append((int(item[0]), float(item[1])))
    return out


def validate_config(cfg: RunConfig) -> RunConfig:
    if cfg.labels.window < 2:
        raise ValueError("[labels].window must be >= 2")
    if cfg.labels.k <= 0:
        raise ValueError("[labels].k must be > 0")
    if cfg.dataset.n < 2:
        raise ValueError("[dataset].n must be >= 2")
    if not 0 < cfg.dataset.ratio < 1:
        raise ValueError("[dataset].ratio must be in (0, 1)")
    if cfg.edcr.epsilon < 0:
        raise ValueError("[edcr].epsilon must be >= 0")
    if cfg.edcr.top_k < 0:
        raise ValueError("[edcr].top_k must be >= 1, or 0 to disable filtering")
    if cfg.synthetic.length < 1:
        raise ValueError("[synthetic].length must be >= 1")
    for window, threshold in cfg.pool.zscore:
        if window < 2 or threshold <= 0:
            raise ValueError("[pool].zscore needs window >= 2 and threshold > 0")
        if window > cfg.dataset.n - 2:
            raise ValueError(f"[pool].zscore window {window} exceeds the {cfg.dataset.n - 2} returns available")
    for variant in cfg.pool.logistic:
        if variant.lr <= 0:
            raise ValueError("[pool].logistic lr must be > 0")
        if not 0 < variant.feature_fraction <= 1:
            raise ValueError("[pool].logistic feature_fraction must be in (0, 1]")
    return cfg


def load_config(path: Path) -> RunConfig:
    with path.open("rb") as f:
        data = tomllib.load(f)
    base = path.expanduser().resolve().parent

    app_data = data.get("app", {})
    data_data = data.get("data", {})
    synth_data = data.get("synthetic", {})
    label_data = data.get("labels", {})
    dataset_data = data.get("dataset", {})
    pool_data = data.get("pool", {})
    edcr_data = data.get("edcr", {})
    output_data = data.get("output", {})

    defaults = RunConfig()
    csv_path = str(data_data.get("csv_path", "")).strip()

    cfg = RunConfig(
        app=AppConfig(
            log_level=str(app_data.get("log_level", "INFO")).upper(),
            seed=int(app_data.get("seed", defaults.app.seed)),
        ),
        data=DataConfig(
            symbol=str(data_data.get("symbol", defaults.data.symbol)).strip(),
            csv_path=_expand_path(csv_path, base) if csv_path else None,
            start_date=str(data_data.get("start_date", defaults.data.start_date)),
        ),
        synthetic=SyntheticConfig(
            length=int(synth_data.get("length", defaults.synthetic.length)),
            start=float(synth_data.get("start", defaults.synthetic.start)),
            drift=float(synth_data.get("drift", defaults.synthetic.drift)),
            vol=float(synth_data.get("vol", defaults.synthetic.vol)),
            jump_count=int(synth_data.get("jump_count", defaults.synthetic.jump_count)),
            jump_sigmas_min=float(synth_data.get("jump_sigmas_min", defaults.synthetic.jump_sigmas_min)),
            jump_sigmas_max=float(synth_data.get("jump_sigmas_max", defaults.synthetic.jump_sigmas_max)),
        ),
        labels=LabelConfig(
            window=int(label_data.get("window", 20)),
            k=float(label_data.get("k", 2.0)),
        ),
        dataset=DatasetConfig(
            n=int(dataset_data.get("n", 20)),
            ratio=float(dataset_data.get("ratio", 0.6)),
        ),
        pool=PoolConfig(
            logistic=_parse_logistic(pool_data["logistic"]) if "logistic" in pool_data else defaults.pool.logistic,
            zscore=_parse_zscore(pool_data["zscore"]) if "zscore" in pool_data else defaults.pool.zscore,
            import_paths=[_expand_path(str(p), base) for p in pool_data.get("import_paths", [])],
        ),
        edcr=EdcrConfig(
            primary=str(edcr_data.get("primary", defaults.edcr.primary)).strip(),
            epsilon=float(edcr_data.get("epsilon", defaults.edcr.epsilon)),
            top_k=int(edcr_data.get("top_k", defaults.edcr.top_k)),
            compare_best=bool(edcr_data.get("compare_best", defaults.edcr.compare_best)),
        ),
        output=OutputConfig(
            out_dir=_expand_path(str(output_data.get("out_dir", defaults.output.out_dir)), base),
        ),
    )
    return validate_config(cfg)


def apply_overrides(
    cfg: RunConfig,
    *,
    seed: int | None = None,
    epsilon: float | None = None,
    top_k: int | None = None,
    primary: str | None = None,
    out_dir: Path | None = None,
    import_paths: list[Path] | None = None,
) -> RunConfig:
    """Flags win over file values."""
    if seed is not None:
        cfg.app = replace(cfg.app, seed=seed)
    if epsilon is not None:
        cfg.edcr = replace(cfg.edcr, epsilon=epsilon)
    if top_k is not None:
        cfg.edcr = replace(cfg.edcr, top_k=top_k)
    if primary is not None:
        cfg.edcr = replace(cfg.edcr, primary=primary.strip())
    if out_dir is not None:
        cfg.output = replace(cfg.output, out_dir=out_dir)
    if import_paths:
        cfg.pool = replace(cfg.pool, import_paths=[*cfg.pool.import_paths, *import_paths])
    return validate_config(cfg)


def _toml_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _toml_string(s: str) -> str:
    return f"\"{_toml_escape(s)}\""


def _toml_str_list(items: list[str]) -> str:
    return "[" + ", ".join(_toml_string(i) for i in items) + "]"


def _toml_float(x: float) -> str:
    return repr(float(x))


def save_config(path: Path, cfg: RunConfig) -> None:
    path = path.expanduser().resolve()
    lines: list[str] = []

    lines.extend([
        "[app]",
        f"log_level = {_toml_string(cfg.app.log_level)}",
        f"seed = {cfg.app.seed}",
        "",
        "[data]",
        f"symbol = {_toml_string(cfg.data.symbol)}",
        f"csv_path = {_toml_string(str(cfg.data.csv_path) if cfg.data.csv_path else '')}",
        f"start_date = {_toml_string(cfg.data.start_date)}",
        "",
        "[synthetic]",
        f"length = {cfg.synthetic.length}",
        f"start = {_toml_float(cfg.synthetic.start)}",
        f"drift = {_toml_float(cfg.synthetic.drift)}",
        f"vol = {_toml_float(cfg.synthetic.vol)}",
        f"jump_count = {cfg.synthetic.jump_count}",
        f"jump_sigmas_min = {_toml_float(cfg.synthetic.jump_sigmas_min)}",
        f"jump_sigmas_max = {_toml_float(cfg.synthetic.jump_sigmas_max)}",
        "",
        "[labels]",
        f"window = {cfg.labels.window}",
        f"k = {_toml_float(cfg.labels.k)}",
        "",
        "[dataset]",
        f"n = {cfg.dataset.n}",
        f"ratio = {_toml_float(cfg.dataset.ratio)}",
        "",
        "[pool]",
        "zscore = [" + ", ".join(f"[{w}, {_toml_float(t)}]" for w, t in cfg.pool.zscore) + "]",
        f"import_paths = {_toml_str_list([str(p) for p in cfg.pool.import_paths])}",
        "logistic = [",
        *(
            f"  {{ lr = {_toml_float(v.lr)}, epochs = {v.epochs}, pos_weight = {_toml_float(v.pos_weight)}, "
            f"feature_fraction = {_toml_float(v.feature_fraction)} }},"
            for v in cfg.pool.logistic
        ),
        "]",
        "",
        "[edcr]",
        f"primary = {_toml_string(cfg.edcr.primary)}",
        f"epsilon = {_toml_float(cfg.edcr.epsilon)}",
        f"top_k = {cfg.edcr.top_k}",
        f"compare_best = {'true' if cfg.edcr.compare_best else 'false'}",
        "",
        "[output]",
        f"out_dir = {_toml_string(str(cfg.output.out_dir))}",
        "",
    ])

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines), encoding="utf-8")
