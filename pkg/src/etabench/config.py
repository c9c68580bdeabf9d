"""Run configuration: one YAML file drives train/explain/attack/eval.

Validation is collect-everything: a bad config reports every problem found in
one shot instead of failing at the first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .attack import AttackConfig
from .errors import ConfigError, IoFailureError
from .models import MODEL_KINDS

__all__ = ["DatasetConfig", "ModelConfig", "ExplainConfig", "RunConfig", "load_run_config"]

KNOWN_STUDIES = (
    "transfer_matrix",
    "isfs_ablation",
    "remove_nonrobust",
    "nonrobust_only",
    "jaccard_vs_asr",
    "limited_knowledge_features",
    "limited_knowledge_data",
    "hyperparam_sweep",
)

_SENS_MODES = ("asr", "degradation")


@dataclass
class DatasetConfig:
    csv: str
    schema: str
    benign_label: str = "0"
    malicious_label: str = "1"
    normalize: bool = True
    ratios: tuple[int, int, int] = (3, 1, 1)


@dataclass
class ModelConfig:
    name: str
    kind: str
    threshold: float = 0.5
    hyper: dict = field(default_factory=dict)


@dataclass
class ExplainConfig:
    outer_samples: int = 2000
    inner_samples: int = 8
    mi_threshold: float = 0.01
    top_count: int = 10
    sensitivity_threshold: float = 0.33
    select_count: int | None = None
    budget: int = 50
    mode: str = "asr"


@dataclass
class RunConfig:
    dataset: DatasetConfig
    models: list[ModelConfig]
    substitute: list[str]
    targets: list[str]
    attack: AttackConfig
    explain: ExplainConfig
    studies: list[tuple[str, dict]]
    seed: int = 7
    output_dir: str = "runs"
    workers: int | None = None
    max_attack_rows: int | None = None

    def model_named(self, name: str) -> ModelConfig:
        for mc in self.models:
            if mc.name == name:
                return mc
        raise KeyError(name)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise IoFailureError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"config is not valid YAML: {exc}"])
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    return parse_run_config(raw)


def parse_run_config(raw: dict) -> RunConfig:
    problems: list[str] = []

    def need(section, key, types, default=None, where="top level"):
        if key not in section:
            if default is not None:
                return default
            problems.append(f"{where}: missing required key {key!r}")
            return None
        val = section[key]
        if not isinstance(val, types):
            problems.append(f"{where}: {key!r} has wrong type")
            return default
        return val

    seed = raw.get("seed", 7)
    if not isinstance(seed, int):
        problems.append("seed must be an integer")
        seed = 7
    output_dir = raw.get("output_dir", "runs")
    workers = raw.get("workers")
    if workers is not None and (not isinstance(workers, int) or workers < 1):
        problems.append("workers must be a positive integer")
        workers = None
    max_rows = raw.get("max_attack_rows")
    if max_rows is not None and (not isinstance(max_rows, int) or max_rows < 1):
        problems.append("max_attack_rows must be a positive integer")
        max_rows = None

    ds_raw = raw.get("dataset")
    dataset = None
    if not isinstance(ds_raw, dict):
        problems.append("missing or malformed 'dataset' section")
    else:
        csv = need(ds_raw, "csv", str, where="dataset")
        schema = need(ds_raw, "schema", str, where="dataset")
        ratios = ds_raw.get("ratios", [3, 1, 1])
        if (
            not isinstance(ratios, (list, tuple))
            or len(ratios) != 3
            or not all(isinstance(r, int) and r > 0 for r in ratios)
        ):
            problems.append("dataset: ratios must be three positive integers")
            ratios = [3, 1, 1]
        if csv and schema:
            dataset = DatasetConfig(
                csv=csv,
                schema=schema,
                benign_label=str(ds_raw.get("benign_label", "0")),
                malicious_label=str(ds_raw.get("malicious_label", "1")),
                normalize=bool(ds_raw.get("normalize", True)),
                ratios=tuple(ratios),
            )

    models: list[ModelConfig] = []
    models_raw = raw.get("models")
    if not isinstance(models_raw, list) or not models_raw:
        problems.append("missing or empty 'models' list")
        models_raw = []
    names_seen = set()
    for i, m in enumerate(models_raw):
        where = f"models[{i}]"
        if not isinstance(m, dict):
            problems.append(f"{where}: must be a mapping")
            continue
        name = need(m, "name", str, where=where)
        kind = need(m, "kind", str, where=where)
        if kind is not None and kind not in MODEL_KINDS:
            problems.append(
                f"{where}: unknown kind {kind!r} (choose from {', '.join(MODEL_KINDS)})"
            )
            kind = None
        threshold = m.get("threshold", 0.5)
        if not isinstance(threshold, (int, float)) or not 0 < threshold < 1:
            problems.append(f"{where}: threshold must lie in (0, 1)")
            threshold = 0.5
        if name:
            if name in names_seen:
                problems.append(f"{where}: duplicate model name {name!r}")
            names_seen.add(name)
        if name and kind:
            hyper = {
                k: v
                for k, v in m.items()
                if k not in ("name", "kind", "threshold")
            }
            models.append(ModelConfig(name, kind, float(threshold), hyper))

    def name_list(key):
        vals = raw.get(key, [])
        if isinstance(vals, str):
            vals = [vals]
        if not isinstance(vals, list) or not all(isinstance(v, str) for v in vals):
            problems.append(f"'{key}' must be a list of model names")
            return []
        for v in vals:
            if v not in names_seen:
                problems.append(f"{key}: unknown model name {v!r}")
        return vals

    substitute = name_list("substitute")
    targets = name_list("targets")
    if not substitute:
        problems.append("'substitute' needs at least one model name")

    attack_raw = raw.get("attack", {})
    attack = None
    if not isinstance(attack_raw, dict):
        problems.append("'attack' must be a mapping")
    else:
        allowed = {
            "distance_weight",
            "step_size",
            "max_iterations",
            "smoothing_radius",
            "sample_count",
            "sampling_std",
            "weight_reg",
            "weight_lr",
        }
        unknown = set(attack_raw) - allowed
        for k in sorted(unknown):
            problems.append(f"attack: unknown parameter {k!r}")
        try:
            attack = AttackConfig(
                **{k: v for k, v in attack_raw.items() if k in allowed}, seed=seed
            )
        except (ValueError, TypeError) as exc:
            problems.append(f"attack: {exc}")

    explain_raw = raw.get("explain", {})
    explain = None
    if not isinstance(explain_raw, dict):
        problems.append("'explain' must be a mapping")
    else:
        explain = ExplainConfig(
            outer_samples=explain_raw.get("outer_samples", 2000),
            inner_samples=explain_raw.get("inner_samples", 8),
            mi_threshold=explain_raw.get("mi_threshold", 0.01),
            top_count=explain_raw.get("top_count", 10),
            sensitivity_threshold=explain_raw.get("sensitivity_threshold", 0.33),
            select_count=explain_raw.get("select_count"),
            budget=explain_raw.get("budget", 50),
            mode=explain_raw.get("mode", "asr"),
        )
        for key in ("outer_samples", "inner_samples", "top_count", "budget"):
            if not isinstance(getattr(explain, key), int) or getattr(explain, key) < 1:
                problems.append(f"explain: {key} must be a positive integer")
        if explain.mode not in _SENS_MODES:
            problems.append(f"explain: mode must be one of {', '.join(_SENS_MODES)}")
        if explain.select_count is not None and (
            not isinstance(explain.select_count, int) or explain.select_count < 1
        ):
            problems.append("explain: select_count must be a positive integer")

    studies: list[tuple[str, dict]] = []
    studies_raw = raw.get("studies", [])
    if not isinstance(studies_raw, list):
        problems.append("'studies' must be a list")
        studies_raw = []
    for i, s in enumerate(studies_raw):
        if isinstance(s, str):
            name, params = s, {}
        elif isinstance(s, dict) and "name" in s:
            name = s["name"]
            params = {k: v for k, v in s.items() if k != "name"}
        else:
            problems.append(f"studies[{i}]: must be a name or a mapping with 'name'")
            continue
        if name not in KNOWN_STUDIES:
            problems.append(
                f"studies[{i}]: unknown study {name!r} (choose from {', '.join(KNOWN_STUDIES)})"
            )
            continue
        studies.append((name, params))

    if problems:
        raise ConfigError(problems)
    return RunConfig(
        dataset=dataset,
        models=models,
        substitute=substitute,
        targets=targets,
        attack=attack,
        explain=explain,
        studies=studies,
        seed=seed,
        output_dir=str(output_dir),
        workers=workers,
        max_attack_rows=max_rows,
    )
