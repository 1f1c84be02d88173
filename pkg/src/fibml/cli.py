"""Command-line entry point.

Every command reads an optional run file (``--config``, JSON or YAML) and
lets flags override its keys.  Outputs go to ``--out`` and are byte-stable
for a fixed config and seed; wall-clock facts live only in the
``metadata`` block of JSON outputs.

Exit codes: 0 success, 1 internal error, 2 input or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DomainError, FibError, InputError, PipelineError, ShapeError
from .evaluation import kfold_cv, r_squared, rmse, spatial_holdout, temporal_holdout
from .explain import DEPENDENCE_HEADER, dependence_export, mean_abs_shap, tree_shap_matrix, write_table
from .hyperopt import MLP_SPACE, SVR_SPACE, FwaConfig, SearchSpace, tune_model
from .monitoring_data import (
    AntecedentWindowSpec,
    FeatureMatrix,
    build_features,
    classify_quality,
    default_registry,
    format_time,
    load_env_dir,
    read_samples,
    registry_from_manifest,
    write_manifest,
    write_samples,
)
from .pipeline import FAMILIES, Pipeline, load_pipeline
from .preprocess import inv_log10p, log10p
from .synth import SynthConfig, generate
from .trees import TreeEnsemble

log = logging.getLogger("fibml")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2

# allowed keys per run-file section; values are the accepted JSON types
SCHEMA = {
    "seed": int,
    "out": str,
    "threads": int,
    "synth": dict,
    "data": {"samples": str, "env_dir": str, "matrix": str, "registry": str,
             "target": str, "utc_offset_hours": (int, float)},
    "features": {"cumulative_windows_hours": list, "lag_hours": list},
    "model": {"family": str, "params": dict, "standardize": (bool, type(None))},
    "protocol": {"kind": str, "k": int, "seed": int, "holdout_site": str,
                 "cutoff_year": int, "test_sites": (list, str), "test_year": int},
    "tune": {"family": str, "space": dict, "params": dict, "budget": int, "n_folds": int,
             "n_fireworks": int, "total_sparks": int, "amplitude_max": (int, float),
             "n_gaussian": int, "s_min": int, "s_max": int},
    "explain": {"model": str, "matrix": str, "dependence": str, "color": str},
    "predict": {"model": str, "ent_model": str, "matrix": str},
}


# --------------------------------------------------------------------------
# run file


def _type_name(t) -> str:
    if isinstance(t, tuple):
        return " or ".join(x.__name__ for x in t)
    return t.__name__


def validate_config(doc) -> dict:
    """Check a run document against :data:`SCHEMA`; unknown keys are errors."""
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise InputError("run file must be a mapping at the top level")
    for key, value in doc.items():
        if key not in SCHEMA:
            raise InputError(f"unknown config key {key!r}")
        rule = SCHEMA[key]
        if isinstance(rule, dict):
            if not isinstance(value, dict):
                raise InputError(f"config section {key!r} must be a mapping")
            for sub, v in value.items():
                if sub not in rule:
                    raise InputError(f"unknown config key {key}.{sub}")
                if not isinstance(v, rule[sub]) or (isinstance(v, bool) and rule[sub] in (int, (int, float))):
                    raise InputError(f"{key}.{sub} must be {_type_name(rule[sub])}")
        elif not isinstance(value, rule) or (isinstance(value, bool) and rule is int):
            raise InputError(f"config key {key!r} must be {_type_name(rule)}")
    if "synth" in doc:
        _synth_config(doc["synth"], None)  # reject unknown synth options early
    return doc


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file {p} not found")
    text = p.read_text()
    try:
        if p.suffix.lower() in (".yaml", ".yml"):
            import yaml

            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
    except Exception as exc:  # parser errors of either format
        raise InputError(f"{p}: cannot parse run file ({exc})") from None
    return validate_config(doc)


def _section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name) or {})


def _override(section: dict, **flags) -> dict:
    out = dict(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def _require(section: dict, key: str, what: str):
    if section.get(key) in (None, ""):
        raise InputError(f"missing {what} (set {key!r} in the run file or pass a flag)")
    return section[key]


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


# --------------------------------------------------------------------------
# output helpers


def _dump_json(path: Path, doc: dict, metadata: dict | None = None) -> None:
    if metadata is not None:
        doc = {**doc, "metadata": metadata}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _metadata(started: float) -> dict:
    return {
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "elapsed_seconds": round(time.perf_counter() - started, 3),
        "fibml_version": __version__,
    }


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, cfg) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    if seed < 0:
        raise InputError("seed must be >= 0")
    return int(seed)


def _load_matrix(path) -> FeatureMatrix:
    p = Path(path)
    if not p.exists():
        raise InputError(f"feature matrix {p} not found")
    X = FeatureMatrix.read_csv(p)
    if X.n_rows == 0:
        raise InputError(f"{p}: feature matrix has no rows")
    return X


def _target(X: FeatureMatrix, name: str) -> np.ndarray:
    if name not in ("ec", "ent"):
        raise InputError(f"target must be 'ec' or 'ent', got {name!r}")
    counts = getattr(X, name)
    if counts is None:
        raise InputError(f"feature matrix has missing {name} counts")
    return log10p(counts)


def _pipeline(model: dict, seed: int) -> Pipeline:
    family = model.get("family", "cb-like")
    if family not in FAMILIES:
        raise InputError(f"unknown model family {family!r}; choose from {', '.join(FAMILIES)}")
    return Pipeline(family, dict(model.get("params") or {}), model.get("standardize"), seed)


def _synth_config(section: dict, seed: int | None) -> SynthConfig:
    doc = dict(section)
    if seed is not None:
        doc["seed"] = seed
    if "years" in doc:
        doc["years"] = tuple(doc["years"])
    try:
        return SynthConfig.from_dict(doc)
    except TypeError as exc:
        raise InputError(f"synth: {exc}") from None
    except DomainError as exc:
        raise InputError(f"synth: {exc}") from None


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg) -> int:
    seed = _seed(args, cfg)
    scfg = _synth_config(_section(cfg, "synth"), seed)
    out = _out_dir(args, cfg)
    samples, env, truth = generate(scfg)
    write_samples(samples, out / "samples.csv")
    env_dir = out / "env"
    env_dir.mkdir(exist_ok=True)
    for name in sorted(env):
        env[name].to_csv(env_dir / f"{name}.csv")
    (out / "truth.json").write_text(truth.to_json() + "\n")
    rows = summary_table(samples)
    write_table(out / "summary.csv", SUMMARY_HEADER, rows)
    print(format_summary(rows))
    return EXIT_OK


SUMMARY_HEADER = ("site", "target", "n", "mean", "median", "std", "min", "max")


def summary_table(samples) -> list:
    """Per site and target: count, mean, median, std, min, max."""
    by_site: dict[str, list] = {}
    for s in samples:
        by_site.setdefault(s.site, []).append(s)
    rows = []
    for site in sorted(by_site):
        for target in ("ec", "ent"):
            v = np.array([getattr(s, target) for s in by_site[site]], dtype=np.float64)
            rows.append((site, target, int(v.size), round(float(v.mean()), 1),
                         round(float(np.median(v)), 1), round(float(v.std(ddof=1)) if v.size > 1 else 0.0, 1),
                         int(v.min()), int(v.max())))
    return rows


def format_summary(rows) -> str:
    lines = ["{:<6} {:<4} {:>5} {:>9} {:>8} {:>9} {:>6} {:>8}".format(*SUMMARY_HEADER)]
    for r in rows:
        lines.append("{:<6} {:<4} {:>5} {:>9.1f} {:>8.1f} {:>9.1f} {:>6} {:>8}".format(*r))
    return "\n".join(lines)


def _registry(cfg: dict):
    data, feats = _section(cfg, "data"), _section(cfg, "features")
    if data.get("registry"):
        p = Path(data["registry"])
        if not p.exists():
            raise InputError(f"registry manifest {p} not found")
        return registry_from_manifest(json.loads(p.read_text()))
    if feats:
        kw = {}
        if "cumulative_windows_hours" in feats:
            kw["cumulative_windows"] = tuple(int(round(h * 3600)) for h in feats["cumulative_windows_hours"])
        if "lag_hours" in feats:
            kw["lag_hours"] = tuple(feats["lag_hours"])
        try:
            return default_registry(AntecedentWindowSpec(**kw))
        except DomainError as exc:
            raise InputError(f"features: {exc}") from None
    return default_registry()


def cmd_features(args, cfg) -> int:
    data = _override(_section(cfg, "data"), samples=args.samples, env_dir=args.env_dir)
    samples_path = Path(_require(data, "samples", "samples file"))
    env_dir = Path(_require(data, "env_dir", "environmental series directory"))
    if not samples_path.exists():
        raise InputError(f"samples file {samples_path} not found")
    if not env_dir.is_dir():
        raise InputError(f"environmental directory {env_dir} not found")
    registry = _registry(cfg)
    records, errors = read_samples(samples_path, utc_offset_hours=float(data.get("utc_offset_hours", 0.0)))
    if errors:
        for line, msg in errors:
            print(f"{samples_path}:{line}: {msg}", file=sys.stderr)
        raise InputError(f"{len(errors)} invalid sample row(s)")
    if not records:
        raise InputError(f"{samples_path}: no samples")
    sources = sorted({c.source for c in registry if c.kind != "sample"})
    env = load_env_dir(env_dir, sources)
    X = build_features(records, env, registry=registry)
    out = _out_dir(args, cfg)
    X.to_csv(out / "features.csv")
    write_manifest(registry, out / "registry.json")
    print(f"{X.n_rows} rows x {X.n_features} features -> {out / 'features.csv'}")
    return EXIT_OK


def _train_inputs(args, cfg):
    data = _override(_section(cfg, "data"), matrix=args.matrix, target=getattr(args, "target", None))
    X = _load_matrix(_require(data, "matrix", "feature matrix"))
    y = _target(X, data.get("target", "ec"))
    return X, y


def cmd_train(args, cfg) -> int:
    started = time.perf_counter()
    seed = _seed(args, cfg)
    X, y = _train_inputs(args, cfg)
    model_cfg = _override(_section(cfg, "model"), family=args.family)
    pipe = _pipeline(model_cfg, seed)
    fit_start = time.perf_counter()
    fitted = pipe.fit(X, y)
    fit_seconds = time.perf_counter() - fit_start
    out = _out_dir(args, cfg)
    fitted.save(out / "model.json")
    pred = fitted.predict(X)
    report = {
        "family": pipe.family,
        "params": json.loads(json.dumps(pipe._params(), default=list)),
        "standardize": pipe.scales,
        "seed": seed,
        "config_hash": config_hash({**cfg, "seed": seed, "model": model_cfg}),
        "model_hash": fitted.digest(),
        "n_rows": X.n_rows,
        "train_rmse": rmse(y, pred),
        "train_r2": r_squared(y, pred) if np.ptp(y) > 0 else None,
    }
    meta = _metadata(started)
    meta["fit_seconds"] = round(fit_seconds, 3)
    _dump_json(out / "train_report.json", report, meta)
    print(f"model {report['model_hash'][:12]} -> {out / 'model.json'}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    started = time.perf_counter()
    seed = _seed(args, cfg)
    X, y = _train_inputs(args, cfg)
    pipe = _pipeline(_override(_section(cfg, "model"), family=args.family), seed)
    test_sites = args.test_sites.split(",") if args.test_sites else None
    proto = _override(_section(cfg, "protocol"), kind=args.protocol, k=args.k,
                      holdout_site=args.holdout_site, cutoff_year=args.cutoff_year,
                      test_sites=test_sites, test_year=args.test_year)
    kind = proto.get("kind", "kfold")
    if kind == "kfold":
        report = kfold_cv(pipe, X, y, k=int(proto.get("k", 10)), seed=int(proto.get("seed", seed)))
    elif kind == "spatial":
        report = spatial_holdout(pipe, X, y, _require(proto, "holdout_site", "holdout site"))
    elif kind == "temporal":
        cutoff = int(_require(proto, "cutoff_year", "cutoff year"))
        report = temporal_holdout(
            pipe, X, y, cutoff, _require(proto, "test_sites", "test sites"),
            int(proto.get("test_year", cutoff)),
        )
    else:
        raise InputError(f"unknown protocol {kind!r}; choose kfold, spatial or temporal")
    out = _out_dir(args, cfg)
    _dump_json(out / "eval_report.json", report.to_dict(), _metadata(started))
    report.write_predictions(out / "predictions.csv")
    m = report.mean
    line = f"{kind}: R2 {m['r2']:.3f}" if m["r2"] is not None else f"{kind}: R2 n/a"
    if report.std and report.std.get("r2") is not None:
        line += f" ± {report.std['r2']:.3f}"
    print(f"{line}, RMSE {m['rmse']:.3f}")
    return EXIT_OK


def cmd_explain(args, cfg) -> int:
    sec = _override(_section(cfg, "explain"), model=args.model, matrix=args.matrix,
                    dependence=args.dependence, color=args.color)
    fitted = load_pipeline(_existing(_require(sec, "model", "model file")))
    if not isinstance(fitted.model, TreeEnsemble):
        raise InputError(f"explain supports tree models only (model family is {fitted.spec.family})")
    X = _load_matrix(_require(sec, "matrix", "feature matrix"))
    Xt = fitted.transform(X)
    phi, base, pred = tree_shap_matrix(fitted.model, Xt.values)
    out = _out_dir(args, cfg)
    ranking = mean_abs_shap(phi, X.columns)
    write_table(out / "ranking.csv", ("feature", "mean_abs_shap"), ranking)
    write_table(out / "shap_values.csv", ("row_id", "feature", "shap_value"),
                [(int(r), name, float(v)) for r, p in zip(X.row_ids, phi)
                 for name, v in zip(X.columns, p)])
    _dump_json(out / "explain_summary.json",
               {"base": base, "rows": X.n_rows, "max_local_accuracy_gap":
                float(np.max(np.abs(base + phi.sum(axis=1) - pred)))})
    if sec.get("dependence"):
        color = sec.get("color") or sec["dependence"]
        try:
            table = dependence_export(sec["dependence"], color, Xt.values, phi, X.columns)
        except ShapeError as exc:
            raise InputError(str(exc)) from None
        write_table(out / f"dependence_{sec['dependence']}.csv", DEPENDENCE_HEADER, table)
    for name, value in ranking[:10]:
        print(f"{name:<22} {value:.4f}")
    return EXIT_OK


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{p} not found")
    return p


def cmd_predict(args, cfg) -> int:
    sec = _override(_section(cfg, "predict"), model=args.model, ent_model=args.ent_model,
                    matrix=args.matrix)
    ec_model = load_pipeline(_existing(_require(sec, "model", "model file")))
    ent_model = load_pipeline(_existing(sec["ent_model"])) if sec.get("ent_model") else None
    X = _load_matrix(_require(sec, "matrix", "feature matrix"))
    ec = inv_log10p(ec_model.predict(X))
    header = ["row_id", "site", "timestamp", "pred_ec"]
    ent = None
    if ent_model is not None:
        ent = inv_log10p(ent_model.predict(X))
        header += ["pred_ent", "quality"]
    rows = []
    for i in range(X.n_rows):
        row = [int(X.row_ids[i]), "" if X.sites is None else X.sites[i],
               "" if X.times is None else format_time(X.times[i]), float(ec[i])]
        if ent is not None:
            row += [float(ent[i]), classify_quality(ec[i], ent[i]).label]
        rows.append(row)
    out = _out_dir(args, cfg)
    write_table(out / "predictions.csv", header, rows)
    print(f"{X.n_rows} predictions -> {out / 'predictions.csv'}")
    return EXIT_OK


def _space(family: str, spec: dict | None) -> SearchSpace:
    if not spec:
        return SVR_SPACE if family == "svr" else MLP_SPACE
    try:
        return SearchSpace.from_bounds({k: tuple(v) for k, v in spec.items()})
    except (DomainError, TypeError, IndexError) as exc:
        raise InputError(f"tune.space: {exc}") from None


def cmd_tune(args, cfg) -> int:
    started = time.perf_counter()
    seed = _seed(args, cfg)
    X, y = _train_inputs(args, cfg)
    sec = _override(_section(cfg, "tune"), family=args.family, budget=args.budget)
    family = sec.get("family", "svr")
    if family not in ("svr", "mlp"):
        raise InputError(f"tuning supports svr and mlp, not {family!r}")
    space = _space(family, sec.get("space"))
    fwa_keys = ("n_fireworks", "total_sparks", "amplitude_max", "n_gaussian", "s_min", "s_max")
    try:
        fwa = FwaConfig(eval_budget=int(sec.get("budget", 100)), seed=seed,
                        **{k: sec[k] for k in fwa_keys if k in sec})
    except DomainError as exc:
        raise InputError(f"tune: {exc}") from None
    base = dict(sec.get("params") or {})
    if family == "mlp":
        base.setdefault("seed", seed)
    best, best_rmse, result = tune_model(family, X, y, space, fwa, base,
                                         n_folds=int(sec.get("n_folds", 5)))
    out = _out_dir(args, cfg)
    _dump_json(out / "best_params.json",
               {"family": family, "params": best, "cv_rmse": best_rmse,
                "evaluations": len(result.history), "seed": seed},
               _metadata(started))
    result.write_history(out / "fwa_history.csv")
    print(f"best {json.dumps(best, sort_keys=True)} CV RMSE {best_rmse:.4f}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "features": cmd_features, "train": cmd_train, "eval": cmd_eval,
    "explain": cmd_explain, "predict": cmd_predict, "tune": cmd_tune,
}


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run file (JSON or YAML)")
    common.add_argument("--seed", type=int, help="master seed (overrides the run file)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads for compiled kernels")

    parser = argparse.ArgumentParser(prog="fibml", description="FIB prediction pipeline")
    parser.add_argument("--version", action="version", version=f"fibml {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic monitoring cluster")

    p = sub.add_parser("features", parents=[common], help="build the feature matrix")
    p.add_argument("--samples")
    p.add_argument("--env-dir")

    for name, text in (("train", "fit and save a model"), ("eval", "evaluate a model family"),
                       ("tune", "tune svr/mlp hyperparameters")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--matrix")
        p.add_argument("--target", choices=("ec", "ent"))
        p.add_argument("--family")
        if name == "eval":
            p.add_argument("--protocol", choices=("kfold", "spatial", "temporal"))
            p.add_argument("--k", type=int)
            p.add_argument("--holdout-site")
            p.add_argument("--cutoff-year", type=int)
            p.add_argument("--test-sites", help="comma separated")
            p.add_argument("--test-year", type=int)
        if name == "tune":
            p.add_argument("--budget", type=int)

    p = sub.add_parser("explain", parents=[common], help="SHAP ranking and dependence tables")
    p.add_argument("--model")
    p.add_argument("--matrix")
    p.add_argument("--dependence")
    p.add_argument("--color")

    p = sub.add_parser("predict", parents=[common], help="predict counts and quality class")
    p.add_argument("--model", help="EC model")
    p.add_argument("--ent-model")
    p.add_argument("--matrix")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # argparse exits with 2 on usage errors, which matches the contract
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="fibml: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        threads = args.threads if args.threads is not None else cfg.get("threads")
        if threads is not None:
            if threads < 1:
                raise InputError("--threads must be >= 1")
            import numba

            numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
        return COMMANDS[args.command](args, cfg)
    except (InputError, PipelineError, DomainError, ShapeError) as exc:
        print(f"fibml {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FibError as exc:
        print(f"fibml {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"fibml {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
