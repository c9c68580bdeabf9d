"""Command-line front end.

Subcommands: extract (pcap to feature CSV), train, explain, attack, eval.
The last four are config-file driven and self-contained: each rebuilds its
pipeline deterministically from the config, so no state needs to survive
between invocations. Exit codes: 0 success, 1 runtime failure, 2 bad usage
or configuration.

Worker-pool size resolves as: --workers flag, then the ETA_BENCH_WORKERS
environment variable, then the config file, then the machine's CPU count.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd

from . import afterimage, flows
from .attack import AttackConfig
from .config import RunConfig, load_run_config
from .dataset import (
    Dataset,
    fit_normalizer,
    fit_valid_ranges,
    load_csv_dataset,
    split_dataset,
)
from .errors import ConfigError, EtaBenchError
from .explain import compute_fai, isfs_pipeline, mutual_info_screen
from .harness import (
    adv_matrix,
    asr,
    crafting_rows,
    detection_metrics,
    evasion_against,
    hyperparam_sweep,
    isfs_ablation,
    js_vs_asr_study,
    limited_knowledge_data,
    limited_knowledge_features,
    nonrobust_only_study,
    remove_nonrobust_study,
    run_attacks,
    transfer_matrix,
    write_report,
)
from .models import make_ensemble, save_model, train_model
from .pcap import parse_pcap
from .schema import load_schema, save_schema

log = logging.getLogger(__name__)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except EtaBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="etabench",
        description="Adversarial-robustness benchmark for ML network intrusion detectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--verbose", action="store_true", help="debug logging")

    ex = sub.add_parser("extract", help="pcap to feature CSV")
    ex.add_argument("pcap", help="classic pcap capture")
    ex.add_argument("--mode", choices=("flow", "packet"), default="flow")
    ex.add_argument("--out", required=True, help="output CSV path")
    ex.add_argument("--schema-out", help="also write the matching schema file")
    ex.add_argument("--label", choices=("0", "1"), default="0",
                    help="label value stamped on every row")
    ex.add_argument("--attack-type", default="Generic")
    ex.add_argument("--timeout", type=float, default=flows.FLOW_TIMEOUT,
                    help="flow episode timeout in seconds")
    ex.add_argument("--idle-threshold", type=float, default=flows.IDLE_THRESHOLD,
                    help="gap length that counts as idle, in seconds")
    ex.add_argument("--lambdas", default=None,
                    help="comma-separated decay rates for packet mode")
    ex.add_argument("--free-window", type=int, default=0,
                    help="index of the modifiable window in packet mode")
    common(ex)
    ex.set_defaults(func=cmd_extract)

    for name, func, help_text in (
        ("train", cmd_train, "fit the configured detectors"),
        ("explain", cmd_explain, "feature importance, sensitivity, selection"),
        ("attack", cmd_attack, "craft evasion samples with the configured substitute"),
        ("eval", cmd_eval, "detection metrics and the configured studies"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config YAML")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--workers", type=int, help="worker pool size")
        common(p)
        p.set_defaults(func=func)
    return parser


def _resolve_workers(flag, cfg_value) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("ETA_BENCH_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer ETA_BENCH_WORKERS=%r", env)
    if cfg_value is not None:
        return cfg_value
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------


def cmd_extract(args) -> int:
    capture = parse_pcap(args.pcap)
    if args.mode == "flow":
        schema = flows.flow_schema(args.attack_type)
        X, _keys = flows.extract_flow_features(
            capture.packets, timeout=args.timeout,
            idle_threshold=args.idle_threshold, schema=schema,
        )
    else:
        lambdas = afterimage.DEFAULT_LAMBDAS
        if args.lambdas:
            lambdas = tuple(float(v) for v in args.lambdas.split(","))
        schema = afterimage.packet_schema(lambdas, args.free_window, args.attack_type)
        X = afterimage.extract_packet_features(capture.packets, lambdas)
    frame = pd.DataFrame(X, columns=schema.names)
    frame[schema.label_column] = args.label
    frame.to_csv(args.out, index=False)
    if args.schema_out:
        save_schema(schema, args.schema_out)
    print(
        f"wrote {len(frame)} rows x {schema.n_features} features to {args.out}"
        f" ({capture.skipped_frames} non-IP frames skipped)"
    )
    return 0


# ---------------------------------------------------------------------------
# config-driven pipeline
# ---------------------------------------------------------------------------


class _Pipeline:
    """Everything the config-driven commands share, built deterministically."""

    def __init__(self, cfg: RunConfig, workers: int):
        self.cfg = cfg
        self.workers = workers
        schema = load_schema(cfg.dataset.schema)
        full = load_csv_dataset(
            cfg.dataset.csv, schema, cfg.dataset.benign_label,
            cfg.dataset.malicious_label,
        )
        self.dropped_rows = full.dropped_rows
        train, val, test = split_dataset(full, cfg.seed, cfg.dataset.ratios)
        self.normalizer = None
        if cfg.dataset.normalize:
            self.normalizer = fit_normalizer(train)
            train, val, test = (self.normalizer.apply(d) for d in (train, val, test))
        fitted = fit_valid_ranges(schema, train)
        self.train = Dataset(train.X, train.y, fitted)
        self.val = Dataset(val.X, val.y, fitted)
        self.test = Dataset(test.X, test.y, fitted)
        self.schema = fitted
        self.models = {}
        for i, mc in enumerate(cfg.models):
            self.models[mc.name] = train_model(
                mc.kind, self.train, seed=cfg.seed + 1000 * i,
                threshold=mc.threshold, **mc.hyper,
            )
        self.substitute = make_ensemble(
            [self.models[n] for n in cfg.substitute], gamma=cfg.attack.weight_reg
        )
        self.targets = {n: self.models[n] for n in cfg.targets}

    def factory_for(self, name: str):
        mc = self.cfg.model_named(name)
        return lambda ds, seed: train_model(
            mc.kind, ds, seed=seed, threshold=mc.threshold, **mc.hyper
        )

    def selection(self):
        ex = self.cfg.explain
        mi, screened = mutual_info_screen(self.train, ex.mi_threshold)
        fai = compute_fai(
            self.substitute, self.train, ex.outer_samples, ex.inner_samples,
            seed=self.cfg.seed, screened=screened,
        )
        sel = isfs_pipeline(
            self.substitute, self.train, fai,
            top_count=ex.top_count,
            sensitivity_threshold=ex.sensitivity_threshold,
            select_count=ex.select_count,
            budget=ex.budget, mode=ex.mode, cfg=self.cfg.attack,
            normalizer=self.normalizer, seed=self.cfg.seed,
        )
        return mi, fai, sel

    def manifest(self) -> dict:
        return {
            "seed": self.cfg.seed,
            "dropped_rows": self.dropped_rows,
            "rows": {
                "train": self.train.n_rows,
                "val": self.val.n_rows,
                "test": self.test.n_rows,
            },
            "models": {
                name: {"kind": m.kind, "threshold": m.threshold, "seed": m.seed}
                for name, m in self.models.items()
            },
            "substitute": list(self.cfg.substitute),
            "targets": list(self.cfg.targets),
        }


def _setup(args) -> tuple[RunConfig, _Pipeline, str]:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = replace(
            cfg, seed=args.seed, attack=replace(cfg.attack, seed=args.seed)
        )
    out_dir = args.out or cfg.output_dir
    workers = _resolve_workers(args.workers, cfg.workers)
    return cfg, _Pipeline(cfg, workers), out_dir


def cmd_train(args) -> int:
    cfg, pipe, out_dir = _setup(args)
    os.makedirs(out_dir, exist_ok=True)
    manifest = pipe.manifest()
    manifest["val_metrics"] = {}
    for name, model in pipe.models.items():
        save_model(model, os.path.join(out_dir, f"{name}.model"))
        manifest["val_metrics"][name] = detection_metrics(model, pipe.val).to_dict()
    write_report(manifest, os.path.join(out_dir, "train_manifest.json"))
    print(f"trained {len(pipe.models)} models into {out_dir}")
    return 0


def cmd_explain(args) -> int:
    cfg, pipe, out_dir = _setup(args)
    mi, fai, sel = pipe.selection()
    report = {
        "manifest": pipe.manifest(),
        "mutual_information": [float(v) for v in mi],
        "fai": fai.to_dict(),
        "selection": sel.to_dict(),
        "selected_names": sel.selected_names(pipe.schema),
    }
    write_report(report, os.path.join(out_dir, "explain.json"))
    if sel.empty:
        log.warning("selection is empty; attacks will fall back to all modifiable features")
    print(
        f"selected {len(sel.selected)} non-robust features: "
        f"{', '.join(sel.selected_names(pipe.schema)) or '(none)'}"
    )
    return 0


def cmd_attack(args) -> int:
    cfg, pipe, out_dir = _setup(args)
    _mi, _fai, sel = pipe.selection()
    attack_cfg = cfg.attack
    if not sel.empty:
        attack_cfg = replace(attack_cfg, feature_mask=sel.mask())
    else:
        log.warning("empty selection; attacking over all modifiable features")
    rows = crafting_rows(pipe.substitute, pipe.test)
    if cfg.max_attack_rows is not None and rows.shape[0] > cfg.max_attack_rows:
        take = np.random.default_rng(cfg.seed).choice(
            rows.shape[0], size=cfg.max_attack_rows, replace=False
        )
        rows = rows[take]
    outcomes = run_attacks(
        pipe.substitute, rows, pipe.schema, attack_cfg, pipe.normalizer, pipe.workers
    )
    report = {
        "manifest": pipe.manifest(),
        "selection": sel.to_dict(),
        "crafted_rows": int(rows.shape[0]),
        "self_asr": asr(outcomes) if outcomes else None,
        "outcomes": [o.to_dict() for o in outcomes],
    }
    if outcomes:
        X_adv = adv_matrix(outcomes)
        report["per_target_asr"] = {
            name: float(np.mean(evasion_against(t, X_adv)))
            for name, t in pipe.targets.items()
        }
    write_report(report, os.path.join(out_dir, "attack.json"))
    printable = report.get("per_target_asr", {})
    print(
        f"attacked {len(outcomes)} rows, substitute ASR="
        f"{report['self_asr'] if report['self_asr'] is not None else 'n/a'}"
        + (f", transfer: {printable}" if printable else "")
    )
    return 0


def cmd_eval(args) -> int:
    cfg, pipe, out_dir = _setup(args)
    report = {"manifest": pipe.manifest(), "test_metrics": {}, "studies": {}}
    for name, model in pipe.models.items():
        report["test_metrics"][name] = detection_metrics(model, pipe.test).to_dict()
    sel_cache = None

    def selection():
        nonlocal sel_cache
        if sel_cache is None:
            sel_cache = pipe.selection()
        return sel_cache

    for study, params in cfg.studies:
        report["studies"][study] = _run_study(cfg, pipe, study, params, selection)
    write_report(report, os.path.join(out_dir, "eval.json"))
    print(f"wrote eval report with {len(cfg.studies)} studies to {out_dir}")
    return 0


def _run_study(cfg: RunConfig, pipe: _Pipeline, study: str, params: dict, selection):
    max_rows = params.get("max_rows", cfg.max_attack_rows)
    if study == "transfer_matrix":
        subs = {"substitute": pipe.substitute}
        for name in params.get("substitutes", list(pipe.models)):
            subs[name] = pipe.models[name]
        return transfer_matrix(
            subs, pipe.targets, pipe.test, cfg.attack, pipe.normalizer,
            pipe.workers, max_rows, cfg.seed,
        )
    if study == "isfs_ablation":
        _mi, _fai, sel = selection()
        return isfs_ablation(
            pipe.substitute, pipe.targets, pipe.test, cfg.attack, sel.mask(),
            pipe.normalizer, pipe.workers, max_rows, cfg.seed,
        )
    if study == "remove_nonrobust":
        _mi, _fai, sel = selection()
        names = sel.selected_names(pipe.schema)
        model_name = params.get("model", cfg.substitute[0])
        norm = pipe.normalizer

        def normalizer_for(kept):
            if norm is None:
                return None
            idx = [pipe.schema.index_of(n) for n in kept]
            from .dataset import Normalizer

            return Normalizer(norm.mins[idx], norm.spans[idx])

        return remove_nonrobust_study(
            pipe.factory_for(model_name), pipe.train, pipe.test, names,
            cfg.attack, normalizer_for, pipe.workers, cfg.seed,
        )
    if study == "nonrobust_only":
        _mi, _fai, sel = selection()
        model_name = params.get("model", cfg.substitute[0])
        return nonrobust_only_study(
            pipe.factory_for(model_name), pipe.train, pipe.test,
            sel.selected_names(pipe.schema), cfg.seed,
        )
    if study == "jaccard_vs_asr":
        ex = cfg.explain
        selections = {}
        for name, model in pipe.models.items():
            mi, screened = mutual_info_screen(pipe.train, ex.mi_threshold)
            fai = compute_fai(
                model, pipe.train, ex.outer_samples, ex.inner_samples,
                seed=cfg.seed, screened=screened,
            )
            sel = isfs_pipeline(
                model, pipe.train, fai, ex.top_count, ex.sensitivity_threshold,
                ex.select_count, ex.budget, ex.mode, cfg.attack,
                pipe.normalizer, cfg.seed,
            )
            selections[name] = set(sel.selected)
        singles = {name: model for name, model in pipe.models.items()}
        res = transfer_matrix(
            singles, {n: pipe.models[n] for n in pipe.models}, pipe.test,
            cfg.attack, pipe.normalizer, pipe.workers, max_rows, cfg.seed,
        )
        study_out = js_vs_asr_study(selections, res["matrix"])
        study_out["selections"] = {k: sorted(v) for k, v in selections.items()}
        return study_out
    if study == "limited_knowledge_features":
        model_name = params.get("model", cfg.substitute[0])
        return limited_knowledge_features(
            pipe.train, pipe.test, float(params.get("fraction", 0.25)),
            pipe.factory_for(model_name), pipe.targets, cfg.attack,
            pipe.normalizer, cfg.seed, pipe.workers, max_rows,
        )
    if study == "limited_knowledge_data":
        model_name = params.get("model", cfg.substitute[0])
        return limited_knowledge_data(
            pipe.train, pipe.test, float(params.get("fraction", 0.5)),
            pipe.factory_for(model_name), pipe.targets, cfg.attack,
            pipe.normalizer, cfg.seed, pipe.workers, max_rows,
        )
    if study == "hyperparam_sweep":
        parameter = params.get("parameter", "smoothing_radius")
        values = params.get("values")
        if not values:
            raise ConfigError([f"hyperparam_sweep needs a 'values' list"])
        rows = crafting_rows(pipe.substitute, pipe.test)
        if max_rows is not None and rows.shape[0] > max_rows:
            take = np.random.default_rng(cfg.seed).choice(
                rows.shape[0], size=max_rows, replace=False
            )
            rows = rows[take]
        return hyperparam_sweep(
            pipe.substitute, rows, pipe.schema, cfg.attack, parameter, values,
            pipe.normalizer, pipe.workers,
        )
    raise ConfigError([f"unknown study {study!r}"])


if __name__ == "__main__":
    sys.exit(main())
