"""Command-line interface.

Subcommands: calibrate, gate, gpso-eval, simulate, moments, report.
Every knob is available both as a flag and as a ``key = value`` line in
a config file passed with --config; flags take precedence. Unknown keys
and flags are hard errors. All randomness flows from --seed.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, io, plots
from .calibrators import WeightLaw, bb_crc_calibrate, crc_calibrate, rbwa_crc_calibrate
from .errors import CONFIG_ERRORS, DATA_ERRORS, NUMERIC_ERRORS, ConfigError
from .gpso import PipelineConfig, grouped_cv_evaluate
from .policy import Threshold, gate

METHOD_ALIASES = {
    "crc": "crc",
    "bb": "bb_crc",
    "bb_crc": "bb_crc",
    "rbwa": "rbwa_crc",
    "rbwa_crc": "rbwa_crc",
}

CALIBRATION_SUMMARY_COLUMNS = (
    "calibrator",
    "alpha",
    "mean_empirical_risk",
    "risk_se",
    "mean_lambda",
    "lambda_se",
    "reject_rate",
    "trials",
)

FS_REDUCTION_COLUMNS = (
    "policy",
    "alpha",
    "fs_unshipped",
    "fs_shipped",
    "fs_reduction_pct",
    "acceptance_rate",
    "n_shipped",
    "n_unshipped",
)

MOMENTS_COLUMNS = (
    "losses",
    "eta",
    "kappa",
    "samples",
    "mu_closed",
    "mu_empirical",
    "mu_rel_err",
    "var_closed",
    "var_empirical",
    "var_rel_err",
    "cantelli_pass",
)

CLT_COLUMNS = ("G", "replications", "ks_distance", "zero_variance", "mu_plugin", "var_plugin")

GPSO_FOLD_COLUMNS = (
    "group_id",
    "split",
    "predicted",
    "true",
    "margin",
    "norm_margin",
    "rank",
    "delta_P",
    "epsilon",
    "gamma",
    "delta_proto",
    "margin_pass",
)


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean value {text!r}")


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(part) for part in str(text).split(",") if part != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse float list {text!r}") from exc


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(part) for part in str(text).split(",") if part != ""]
    except ValueError as exc:
        raise ConfigError(f"cannot parse int list {text!r}") from exc


_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "floats": _parse_floats,
    "ints": _parse_ints,
}

# key -> (type name, default, help); drives both argparse and config merging
KEYS = {
    "calibrate": {
        "items": ("str", None, "input item CSV (id,group_id,q_score,severity)"),
        "out": ("str", None, "output threshold CSV path"),
        "method": ("str", "rbwa", "comma list of calibrators: crc, bb, rbwa"),
        "alpha": ("floats", [0.1], "comma list of risk budgets in (0,1)"),
        "batches": ("int", 10, "batch count G for bb/rbwa"),
        "replicates": ("int", 50, "bootstrap replicates K per batch (bb)"),
        "eta": ("float", 1.0, "Dirichlet concentration (rbwa)"),
        "law": ("str", "dirichlet", "rbwa weight law: dirichlet, uniform, multinomial"),
        "seed": ("int", 0, "master seed for resampling draws"),
        "allow_truncate": ("bool", False, "drop trailing items when G does not divide n"),
    },
    "gate": {
        "thresholds": ("str", None, "threshold CSV from calibrate"),
        "scores": ("str", None, "scores CSV (id,q_score); severities never read"),
        "out": ("str", None, "output decisions CSV path"),
        "method": ("str", None, "select threshold row by calibrator"),
        "alpha": ("float", None, "select threshold row by alpha"),
    },
    "gpso-eval": {
        "embeddings": ("str", None, "embedding CSV (group_id,class_label,dim_*)"),
        "out": ("str", None, "output directory (fold and summary CSVs)"),
        "l2": ("bool", True, "row-normalize embeddings"),
        "center": ("bool", False, "remove the batch mean before the scatter"),
        "r_max": ("int", 3, "rank cap for eigengap selection"),
        "bootstrap_b": ("int", 8, "bootstrap replicates per prototype"),
        "train_fraction": ("float", 0.6, "train fraction of each class"),
        "n_splits": ("int", 5, "stratified splits per group"),
        "seed": ("int", 0, "split/bootstrap seed"),
        "space": ("str", "feature", "projector space: feature or item"),
    },
    "simulate": {
        "out": ("str", None, "output directory (calibration_summary.csv)"),
        "preset": ("str", "logistic", "benchmark preset: logistic or custom"),
        "trials": ("int", 500, "Monte Carlo trials"),
        "n": ("int", 200, "calibration items per trial"),
        "alphas": ("floats", [0.05, 0.1, 0.15, 0.2], "risk budgets"),
        "fresh_eval_size": ("int", 2000, "fresh items per trial"),
        "seed": ("int", 0, "master seed"),
        "batches": ("int", 10, "batch count G"),
        "replicates": ("int", 50, "bootstrap replicates K"),
        "eta": ("float", 1.0, "Dirichlet concentration"),
        "workers": ("int", 1, "parallel workers (output independent of N)"),
        "score_law": ("str", "uniform01", "score law: uniform01 or beta"),
        "beta_a": ("float", 1.0, "beta score parameter a"),
        "beta_b": ("float", 1.0, "beta score parameter b"),
        "severity": ("str", "logistic", "severity model: logistic or deterministic"),
        "k": ("float", 10.0, "logistic slope"),
        "q0": ("float", 0.5, "logistic midpoint"),
        "tau": ("float", 0.5, "deterministic severity cutoff"),
    },
    "moments": {
        "out": ("str", None, "output directory (moments.csv, optional clt.csv)"),
        "losses": ("floats", None, "comma list of per-item losses"),
        "eta": ("float", 1.0, "Dirichlet concentration"),
        "samples": ("int", 100000, "Monte Carlo draws"),
        "seed": ("int", 0, "sampling seed"),
        "clt": ("bool", False, "also run the normality check"),
        "clt_g_list": ("ints", [10, 100, 1000], "batch counts G for the CLT"),
        "clt_replications": ("int", 2000, "replications per G"),
        "clt_batch": ("int", 4, "items per batch I"),
        "clt_lambda": ("float", 0.5, "fixed gate threshold"),
        "clt_tau": ("float", 0.51, "deterministic severity cutoff"),
        "clt_pool": ("int", 200000, "plug-in moment estimation pool"),
    },
    "report": {
        "out": ("str", None, "output directory"),
        "items": ("str", None, "item CSV for the severity-reduction protocol"),
        "thresholds": ("str", None, "threshold CSV to report against"),
        "policy": ("str", "policy", "policy label for the reduction table"),
        "summary": ("str", None, "calibration_summary.csv to render"),
        "clt_csv": ("str", None, "clt.csv to render"),
        "moments_csv": ("str", None, "moments.csv to render"),
        "figures": ("bool", True, "render PNG figures next to the CSVs"),
    },
}

REQUIRED = {
    "calibrate": ("items", "out"),
    "gate": ("thresholds", "scores", "out"),
    "gpso-eval": ("embeddings", "out"),
    "simulate": ("out",),
    "moments": ("out", "losses"),
    "report": ("out",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gramgate",
        description="Risk-controlled gating: calibrate thresholds, gate scores, "
        "evaluate the spectral-overlap classifier, and verify guarantees.",
        epilog="Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, keys in KEYS.items():
        sub = subparsers.add_parser(
            command,
            help={
                "calibrate": "select thresholds from an item CSV",
                "gate": "apply a calibrated threshold to scores",
                "gpso-eval": "grouped CV for the spectral-overlap classifier",
                "simulate": "Monte Carlo risk/stability benchmark",
                "moments": "weighted-loss moment and normality checks",
                "report": "severity-reduction tables and figures",
            }[command],
        )
        sub.add_argument("--config", default=None, help="key = value config file")
        for key, (type_name, default, help_text) in keys.items():
            flag = "--" + key.replace("_", "-")
            if type_name == "bool":
                sub.add_argument(
                    flag, dest=key, default=None, action=argparse.BooleanOptionalAction,
                    help=f"{help_text} (default {default})",
                )
            else:
                sub.add_argument(
                    flag, dest=key, default=None, type=str,
                    help=f"{help_text} (default {default})",
                )
    return parser


def merge_config(args: argparse.Namespace) -> dict:
    """Apply precedence: flags beat config-file keys beat defaults."""
    command = args.command
    keys = KEYS[command]
    merged = {}
    file_values = {}
    if args.config:
        file_values = io.parse_config(args.config)
        unknown = set(file_values) - set(keys)
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    for key, (type_name, default, _) in keys.items():
        flag_value = getattr(args, key)
        if flag_value is not None:
            value = flag_value if type_name == "bool" else _PARSERS[type_name](flag_value)
        elif key in file_values:
            value = _PARSERS[type_name](file_values[key])
        else:
            value = default
        merged[key] = value
    missing = [key for key in REQUIRED[command] if merged.get(key) is None]
    if missing:
        raise ConfigError(f"missing required keys for {command}: {missing}")
    return merged


def _methods(spec: str) -> list[str]:
    methods = []
    for part in spec.split(","):
        part = part.strip()
        if part not in METHOD_ALIASES:
            raise ConfigError(f"unknown method {part!r}; choose from {sorted(set(METHOD_ALIASES))}")
        methods.append(METHOD_ALIASES[part])
    return methods


def _weight_law(cfg: dict) -> WeightLaw:
    law = cfg["law"]
    if law == "dirichlet":
        return WeightLaw.dirichlet(cfg["eta"])
    if law == "uniform":
        return WeightLaw.uniform()
    if law == "multinomial":
        return WeightLaw.multinomial_count(cfg["replicates"])
    raise ConfigError(f"unknown weight law {law!r}")


def cmd_calibrate(cfg: dict) -> int:
    items = io.load_items(cfg["items"])
    n = len(items)
    rows = []
    for method in _methods(cfg["method"]):
        for alpha in cfg["alpha"]:
            if method == "crc":
                thr = crc_calibrate(items, alpha)
                rows.append(io.threshold_row(thr, n, 1, "", n))
                continue
            g = cfg["batches"]
            size = n // g if g else 0
            if method == "bb_crc":
                thr = bb_crc_calibrate(
                    items, g, cfg["replicates"], alpha, cfg["seed"],
                    allow_truncate=cfg["allow_truncate"],
                )
                rows.append(io.threshold_row(thr, g, size, str(cfg["replicates"]), n))
            else:
                law = _weight_law(cfg)
                thr = rbwa_crc_calibrate(
                    items, g, law, alpha, cfg["seed"], allow_truncate=cfg["allow_truncate"]
                )
                rows.append(io.threshold_row(thr, g, size, law.describe(), n))
    io.write_thresholds(cfg["out"], rows)
    print(f"wrote {len(rows)} threshold rows to {cfg['out']}")
    return 0


def cmd_gate(cfg: dict) -> int:
    rows = io.load_thresholds(cfg["thresholds"])
    threshold = io.select_threshold(rows, calibrator=cfg["method"], alpha=cfg["alpha"])
    ids, scores = io.load_scores(cfg["scores"])
    decisions = [
        {"id": i, "q_score": q, "decision": "ship" if gate(q, threshold) else "abstain"}
        for i, q in zip(ids, scores)
    ]
    io.write_report(cfg["out"], decisions, columns=("id", "q_score", "decision"))
    shipped = sum(1 for d in decisions if d["decision"] == "ship")
    print(f"gated {len(decisions)} items: {shipped} ship, {len(decisions) - shipped} abstain")
    return 0


def cmd_gpso_eval(cfg: dict) -> int:
    batches = io.load_embeddings(cfg["embeddings"])
    pipeline = PipelineConfig(
        l2=cfg["l2"],
        center=cfg["center"],
        r_max=cfg["r_max"],
        bootstrap_b=cfg["bootstrap_b"],
        train_fraction=cfg["train_fraction"],
        n_splits=cfg["n_splits"],
        seed=cfg["seed"],
        space=cfg["space"],
    )
    report = grouped_cv_evaluate(batches, pipeline)
    outdir = Path(cfg["out"])
    io.write_report(outdir / "gpso_folds.csv", report.fold_rows(), columns=GPSO_FOLD_COLUMNS)
    io.write_report(outdir / "gpso_summary.csv", [report.summary_row()])
    print(
        f"macro accuracy {report.macro_accuracy:.3f} over {report.groups_evaluated} groups "
        f"({report.groups_skipped} skipped); margin condition pass rate "
        f"{report.margin_pass_fraction:.3f}"
    )
    for label in sorted(report.class_accuracy):
        print(f"  acc[{label}] = {report.class_accuracy[label]:.3f}")
    return 0


def cmd_simulate(cfg: dict) -> int:
    if cfg["preset"] == "logistic":
        score_law = harness.ScoreLaw(kind="uniform01")
        severity = harness.SeverityModel(kind="logistic", k=cfg["k"], q0=cfg["q0"])
    elif cfg["preset"] == "custom":
        score_law = harness.ScoreLaw(kind=cfg["score_law"], a=cfg["beta_a"], b=cfg["beta_b"])
        severity = harness.SeverityModel(
            kind=cfg["severity"], k=cfg["k"], q0=cfg["q0"], tau=cfg["tau"]
        )
    else:
        raise ConfigError(f"unknown preset {cfg['preset']!r}; choose logistic or custom")
    spec = harness.SyntheticSpec(
        n=cfg["n"],
        score_law=score_law,
        severity_model=severity,
        trials=cfg["trials"],
        fresh_eval_size=cfg["fresh_eval_size"],
        seed=cfg["seed"],
    )
    configs = harness.benchmark_calibrators(
        batch_count=cfg["batches"], replicates=cfg["replicates"], eta=cfg["eta"]
    )
    result = harness.run_risk_experiment(spec, configs, cfg["alphas"], workers=cfg["workers"])
    outdir = Path(cfg["out"])
    io.write_report(
        outdir / "calibration_summary.csv",
        [row.as_dict() for row in result.rows],
        columns=CALIBRATION_SUMMARY_COLUMNS,
    )
    for row in result.rows:
        print(
            f"{row.calibrator:9s} alpha={row.alpha:<5g} risk={row.mean_empirical_risk:.4f} "
            f"(se {row.risk_se:.4f}) lambda_se={row.lambda_se:.2e} reject={row.reject_rate:.2f}"
        )
    return 0


def cmd_moments(cfg: dict) -> int:
    outdir = Path(cfg["out"])
    report = harness.rbwa_moment_check(cfg["losses"], cfg["eta"], cfg["samples"], cfg["seed"])
    io.write_report(outdir / "moments.csv", [report.as_dict()], columns=MOMENTS_COLUMNS)
    print(
        f"weighted-loss variance: empirical {report.var_empirical:.6g} vs closed form "
        f"{report.var_closed:.6g} (rel err {report.var_rel_err:.3%})"
    )
    if cfg["clt"]:
        spec = harness.SyntheticSpec(
            n=cfg["clt_batch"],
            score_law=harness.ScoreLaw(kind="uniform01"),
            severity_model=harness.SeverityModel(kind="deterministic", tau=cfg["clt_tau"]),
            trials=1,
            fresh_eval_size=100,
            seed=cfg["seed"],
        )
        rows = harness.clt_check(
            spec,
            cfg["clt_lambda"],
            cfg["clt_g_list"],
            WeightLaw.dirichlet(cfg["eta"]),
            cfg["clt_replications"],
            np.random.default_rng(cfg["seed"]),
            plugin_pool=cfg["clt_pool"],
        )
        io.write_report(outdir / "clt.csv", [r.as_dict() for r in rows], columns=CLT_COLUMNS)
        for row in rows:
            print(f"G={row.batch_groups:<5d} KS={row.ks_distance:.4f}")
    return 0


def cmd_report(cfg: dict) -> int:
    outdir = Path(cfg["out"])
    did_anything = False
    if cfg["items"] or cfg["thresholds"]:
        if not (cfg["items"] and cfg["thresholds"]):
            raise ConfigError("the reduction protocol needs both items and thresholds")
        items = io.load_items(cfg["items"])
        rows = []
        for entry in io.load_thresholds(cfg["thresholds"]):
            reduction = harness.fs_reduction_report(items, entry["threshold"])
            row = {"policy": cfg["policy"], "alpha": entry["alpha"]}
            row.update(reduction.as_dict())
            rows.append(row)
        io.write_report(outdir / "fs_reduction.csv", rows, columns=FS_REDUCTION_COLUMNS)
        if cfg["figures"]:
            plots.render_fs_reduction(rows, outdir)
        did_anything = True
    if cfg["summary"]:
        rows = io.read_report(cfg["summary"])
        if cfg["figures"]:
            plots.render_calibration_figures(rows, outdir)
        did_anything = True
    if cfg["clt_csv"]:
        rows = io.read_report(cfg["clt_csv"])
        if cfg["figures"]:
            plots.render_clt(rows, outdir)
        did_anything = True
    if cfg["moments_csv"]:
        rows = io.read_report(cfg["moments_csv"])
        if cfg["figures"]:
            plots.render_moments(rows, outdir)
        did_anything = True
    if not did_anything:
        raise ConfigError(
            "report needs at least one input: items+thresholds, summary, clt_csv, or moments_csv"
        )
    print(f"report artifacts written to {outdir}")
    return 0


COMMANDS = {
    "calibrate": cmd_calibrate,
    "gate": cmd_gate,
    "gpso-eval": cmd_gpso_eval,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = merge_config(args)
        return COMMANDS[args.command](cfg)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NUMERIC_ERRORS as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
