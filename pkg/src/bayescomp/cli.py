"""Command line pipeline: train -> prune -> quantize -> compress -> report.

Settings resolve as flag > ``--config`` JSON file > built-in default, and the
resolved settings are echoed and embedded in every artifact written.
"""

import argparse
import json
import math
import sys
from pathlib import Path

from . import compression, data, prior_analysis, pruning, quantization, store
from .errors import BayesCompError
from .model import parse_arch
from .training import TrainConfig, config_dict, train

EXIT_MISSING_MODEL = 2

DEFAULTS = {
    "train": {
        "prior": "gnj", "arch": "784-300-100", "epochs": 50, "batch_size": 100, "lr": 1e-3,
        "warmup_epochs": None, "seed": 1, "tau0": 1e-5, "std_ceilings": "auto",
        "dataset": "mnist", "subset": None, "data_dir": None,
        "blob_n": 2000, "blob_classes": 2, "blob_dim": 2, "blob_separation": 10.0,
        "out": "model.bcmp", "log": None,
    },
    "prune": {"model": None, "threshold": None, "thresholds": None, "out": None},
    "quantize": {"model": None, "threshold": None, "thresholds": None, "roundoff_rule": "sqrt_mean_var",
                 "out": None},
    "compress": {"model": None, "threshold": None, "thresholds": None, "roundoff_rule": "sqrt_mean_var",
                 "kmeans_k": 32, "kmeans_seed": 0, "data_dir": None, "out_dir": ".", "bins": 100},
    "report": {"model": None, "threshold": None, "thresholds": None, "roundoff_rule": "sqrt_mean_var",
               "kmeans_k": 32, "kmeans_seed": 0, "data_dir": None},
    "analyze-shrinkage": {"samples": 1_000_000, "seed": 0, "eps": 0.01, "eps_samples": 100_000,
                          "bins": 50, "out_dir": "."},
    "export-histograms": {"model": None, "bins": 100, "out_dir": "."},
}


class CliError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


def _floats(text):
    if text is None:
        return None
    return [None if p.strip().lower() in ("", "none") else float(p) for p in str(text).split(",")]


def _add(p, flag, **kw):
    p.add_argument(flag, default=argparse.SUPPRESS, **kw)


def _model_flags(p, thresholds=True):
    _add(p, "--model", help="input model file")
    if thresholds:
        _add(p, "--threshold", type=float, help="one pruning threshold for every layer")
        _add(p, "--thresholds", help="comma-separated per-layer thresholds")


def build_parser():
    parser = argparse.ArgumentParser(prog="bcmp", description="Bayesian group-sparse network compression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a variational network")
    _add(p, "--config", help="JSON file with settings")
    _add(p, "--prior", choices=["gnj", "ghs"])
    _add(p, "--arch", help="hidden widths like 784-300-100, or lenet5")
    _add(p, "--epochs", type=int)
    _add(p, "--batch-size", type=int)
    _add(p, "--lr", type=float)
    _add(p, "--warmup-epochs", type=float)
    _add(p, "--seed", type=int)
    _add(p, "--tau0", type=float)
    _add(p, "--std-ceilings", help="per-layer weight std ceilings, e.g. 0.2,none,none, or auto")
    _add(p, "--dataset", choices=["mnist", "blobs"])
    _add(p, "--subset", type=int)
    _add(p, "--data-dir")
    _add(p, "--blob-n", type=int)
    _add(p, "--blob-classes", type=int)
    _add(p, "--blob-dim", type=int)
    _add(p, "--blob-separation", type=float)
    _add(p, "--out")
    _add(p, "--log")

    p = sub.add_parser("prune", help="score groups and store keep-masks")
    _add(p, "--config")
    _model_flags(p)
    _add(p, "--out", help="output model file (default: overwrite input)")

    p = sub.add_parser("quantize", help="assign per-layer bit widths")
    _add(p, "--config")
    _model_flags(p)
    _add(p, "--roundoff-rule", choices=list(quantization.ROUNDOFF_RULES))
    _add(p, "--out")

    for name, help_text in (("compress", "storage accounting for all three layouts"),
                            ("report", "human-readable summary of a model")):
        p = sub.add_parser(name, help=help_text)
        _add(p, "--config")
        _model_flags(p)
        _add(p, "--roundoff-rule", choices=list(quantization.ROUNDOFF_RULES))
        _add(p, "--kmeans-k", type=int)
        _add(p, "--kmeans-seed", type=int)
        _add(p, "--data-dir")
        if name == "compress":
            _add(p, "--out-dir")
            _add(p, "--bins", type=int)

    p = sub.add_parser("analyze-shrinkage", help="shrinkage-coefficient laws of the scale priors")
    _add(p, "--config")
    _add(p, "--samples", type=int)
    _add(p, "--seed", type=int)
    _add(p, "--eps", type=float)
    _add(p, "--eps-samples", type=int)
    _add(p, "--bins", type=int)
    _add(p, "--out-dir")

    p = sub.add_parser("export-histograms", help="per-layer score histograms as CSV")
    _add(p, "--config")
    _model_flags(p, thresholds=False)
    _add(p, "--bins", type=int)
    _add(p, "--out-dir")
    return parser


def resolve(command, flags):
    """Merge defaults, the optional config file and explicit flags."""
    cfg = dict(DEFAULTS[command])
    path = flags.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config file {path}: {exc}") from None
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise CliError(f"unknown keys in config file: {sorted(unknown)}")
        cfg.update(from_file)
    cfg.update(flags)
    cfg["command"] = command
    return cfg


def _emit(obj, stream=None):
    print(json.dumps(obj, sort_keys=True), file=stream or sys.stdout, flush=True)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


# train ------------------------------------------------------------------


def _std_ceilings(text, arch_text, n_layers):
    if text == "auto":
        arch_text = arch_text.strip().lower()
        if arch_text.startswith("lenet5"):
            return [0.5] + [None] * (n_layers - 1)
        if arch_text.startswith("784-"):
            return [0.2] + [None] * (n_layers - 1)
        return []
    vals = _floats(text) or []
    if len(vals) > n_layers:
        raise CliError(f"{len(vals)} std ceilings for {n_layers} layers")
    return vals + [None] * (n_layers - len(vals))


def load_datasets(cfg):
    if cfg["dataset"] == "blobs":
        args = (cfg["blob_classes"], cfg["blob_dim"], cfg["blob_separation"])
        train_set = data.synth_blobs(cfg["blob_n"], *args, seed=2 * cfg["seed"], split="train")
        test_set = data.synth_blobs(cfg["blob_n"], *args, seed=2 * cfg["seed"] + 1, split="test")
        return train_set, test_set
    try:
        return data.load_mnist(cfg.get("data_dir"), cfg.get("subset"))
    except FileNotFoundError as exc:
        raise CliError(f"MNIST files not found ({exc.filename}); set --data-dir or BCMP_DATA_DIR") from None


def cmd_train(cfg):
    n_classes = cfg["blob_classes"] if cfg["dataset"] == "blobs" else 10
    arch_text = cfg["arch"]
    if cfg["dataset"] == "blobs" and not arch_text.startswith(str(cfg["blob_dim"])):
        raise CliError(f"architecture {arch_text} does not start with the blob dimension {cfg['blob_dim']}")
    arch = parse_arch(arch_text, n_classes)
    warmup = cfg["warmup_epochs"]
    if warmup is None:
        # 10 epochs for full runs, a fifth of the run for short ones
        warmup = min(10.0, cfg["epochs"] / 5)
    tc = TrainConfig(
        learning_rate=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        warmup_epochs=warmup, seed=cfg["seed"], tau0=cfg["tau0"],
        std_ceilings=_std_ceilings(cfg["std_ceilings"], arch_text, len(arch["layers"])),
        dataset=cfg["dataset"],
    )
    resolved = dict(cfg, train_config=config_dict(tc))
    _emit({"config": resolved})
    train_set, test_set = load_datasets(cfg)
    log_path = cfg.get("log")
    if log_path:
        # config first, then the epoch records appended by the trainer
        with open(log_path, "w") as fh:
            fh.write(json.dumps({"config": resolved}, sort_keys=True) + "\n")
    model, log = train(tc, train_set, test_set, arch, cfg["prior"], log_path=None)
    if log_path:
        with open(log_path, "a") as fh:
            for record in log:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
    store.save(cfg["out"], model, config=resolved, extra={"epoch_log": log})
    return 0


# model-consuming commands ----------------------------------------------


def _open_model(cfg):
    path = cfg.get("model")
    if not path:
        raise CliError("--model is required", EXIT_MISSING_MODEL)
    if not Path(path).is_file():
        raise CliError(f"model file not found: {path}", EXIT_MISSING_MODEL)
    return store.load(path)


def _thresholds(cfg, n_layers):
    if cfg.get("thresholds") is not None:
        vals = _floats(cfg["thresholds"])
        if len(vals) != n_layers or any(v is None for v in vals):
            raise CliError(f"--thresholds needs {n_layers} numbers")
        return vals
    if cfg.get("threshold") is not None:
        return [float(cfg["threshold"])] * n_layers
    return None


def _prune_report(mf, cfg):
    """Cascade from explicit thresholds, else stored masks, else default thresholds."""
    model = mf.model
    thresholds = _thresholds(cfg, len(model.layers))
    if thresholds is None and mf.masks is not None:
        stored = (mf.extra or {}).get("prune", {}).get("thresholds", [])
        return pruning.cascade(model, mf.masks, stored)
    return pruning.prune(model, thresholds)


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def cmd_prune(cfg):
    mf = _open_model(cfg)
    _emit({"config": cfg})
    thresholds = _thresholds(cfg, len(mf.model.layers))
    report = pruning.prune(mf.model, thresholds)
    out = {"config": cfg, "prune": report.to_dict()}
    extra = dict(mf.extra, prune=report.to_dict(), prune_config=cfg)
    store.save(cfg.get("out") or cfg["model"], mf.model, masks=report.masks, quant=mf.quant,
               config=mf.config, extra=extra)
    _emit(_json_safe(out))
    return 0


def cmd_quantize(cfg):
    mf = _open_model(cfg)
    _emit({"config": cfg})
    report = _prune_report(mf, cfg)
    rows = [r.to_dict() for r in quantization.quantize_model(mf.model, report, cfg["roundoff_rule"])]
    extra = dict(mf.extra, quant_config=cfg)
    store.save(cfg.get("out") or cfg["model"], mf.model, masks=report.masks, quant=rows,
               config=mf.config, extra=extra)
    _emit({"config": cfg, "quant": rows})
    return 0


def _test_set(mf, cfg):
    train_cfg = dict(DEFAULTS["train"], **(mf.config or {}))
    if cfg.get("data_dir"):
        train_cfg["data_dir"] = cfg["data_dir"]
    return load_datasets(train_cfg)[1]


def _full_report(mf, cfg):
    report = _prune_report(mf, cfg)
    rows = quantization.quantize_model(mf.model, report, cfg["roundoff_rule"])
    comp = compression.compression_report(mf.model, report, rows, _test_set(mf, cfg),
                                          k=cfg["kmeans_k"], seed=cfg["kmeans_seed"])
    return report, rows, comp


def cmd_compress(cfg):
    mf = _open_model(cfg)
    _emit({"config": cfg})
    report, rows, comp = _full_report(mf, cfg)
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    comp_out = dict(comp.to_dict(), config=cfg, model_config=mf.config)
    _write_json(out_dir / "compression.json", _json_safe(comp_out))
    _write_json(out_dir / "quant.json", {"config": cfg, "quant": [r.to_dict() for r in rows]})
    scores = pruning.model_scores(mf.model)
    hist_rows, suggested = pruning.score_histogram_export(scores, cfg["bins"])
    _write_json(out_dir / "prune.json", _json_safe({"config": cfg, "prune": report.to_dict(),
                                                    "suggested_thresholds": suggested}))
    pruning.write_histogram_csv(out_dir / f"histograms_{scores.kind}.csv", hist_rows)
    _emit(_json_safe(comp_out))
    return 0


def cmd_report(cfg):
    mf = _open_model(cfg)
    report, rows, comp = _full_report(mf, cfg)
    model = mf.model
    lines = [
        f"prior            {model.prior}",
        f"architecture     {report.original_architecture} -> {report.architecture}",
        f"retained weights {sum(report.retained_weights)} / {sum(report.original_weights)}"
        f" ({comp.sparsity_pct:.2f}%)",
        f"test error       {comp.error_pct:.2f}%",
        "",
        f"{'layer':>5} {'groups':>12} {'weights':>16} {'mean var':>11} {'bits':>5}",
    ]
    for l, row in enumerate(rows):
        groups = f"{report.retained_groups[l]}/{report.original_groups[l]}"
        weights = f"{report.retained_weights[l]}/{report.original_weights[l]}"
        lines.append(f"{l:>5} {groups:>12} {weights:>16} {row.mean_var:>11.3e} {row.total_bits:>5}")
    lines += [
        "",
        f"rate (pruning)   {comp.rate_pruning:.2f}",
        f"rate (fast)      {comp.rate_fast:.2f}",
        f"rate (max)       {comp.rate_max:.2f}",
        "",
        "config " + json.dumps(cfg, sort_keys=True),
    ]
    print("\n".join(lines))
    return 0


def cmd_analyze_shrinkage(cfg):
    _emit({"config": cfg})
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    hs = prior_analysis.half_cauchy_shrinkage(cfg["samples"], cfg["seed"])
    ks_hs = prior_analysis.ks_against_beta(hs.lam, 0.5, 0.5)
    nj = prior_analysis.sample_symmetric_beta(cfg["eps"], cfg["eps_samples"], cfg["seed"])
    mass = prior_analysis.beta_endpoint_mass(cfg["eps"], cfg["eps_samples"], cfg["seed"])
    prior_analysis.write_density_csv(out_dir / "shrinkage_hs.csv",
                                     prior_analysis.density_rows(hs.lam, 0.5, 0.5, cfg["bins"]))
    prior_analysis.write_density_csv(out_dir / "shrinkage_nj.csv",
                                     prior_analysis.density_rows(nj, cfg["eps"], cfg["eps"], cfg["bins"]))
    result = {
        "config": cfg,
        "ks_hs_beta_half": ks_hs,
        "nj_endpoint_mass_sampled": mass.sampled,
        "nj_endpoint_mass_exact": mass.exact,
        "endpoint_width": mass.width,
    }
    _write_json(out_dir / "shrinkage.json", result)
    _emit(result)
    return 0


def cmd_export_histograms(cfg):
    mf = _open_model(cfg)
    _emit({"config": cfg})
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    scores = pruning.model_scores(mf.model)
    rows, suggested = pruning.score_histogram_export(scores, cfg["bins"])
    path = out_dir / f"histograms_{scores.kind}.csv"
    pruning.write_histogram_csv(path, rows)
    _emit({"config": cfg, "kind": scores.kind, "csv": str(path), "suggested_thresholds": suggested,
           "default_threshold": pruning.default_threshold(scores.kind)})
    return 0


COMMANDS = {
    "train": cmd_train,
    "prune": cmd_prune,
    "quantize": cmd_quantize,
    "compress": cmd_compress,
    "report": cmd_report,
    "analyze-shrinkage": cmd_analyze_shrinkage,
    "export-histograms": cmd_export_histograms,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k != "command"}
    try:
        cfg = resolve(args.command, flags)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (BayesCompError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
