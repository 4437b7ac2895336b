"""``tifl`` command line: synth, train, extract, classify, eval, viz.

Options come from three layers, later ones winning: built-in defaults, a
``--config`` file of ``key=value`` lines (``#`` starts a comment), and flags.
Config keys are flag names with dashes or underscores.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, classify, data, experiments, features, tiae, tiomp, tirbm, viz
from ._common import TrainConfig
from .transform_ops import preset

log = logging.getLogger("tifl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage().strip())


# (flag, type, default, help) per subcommand
_COMMON = [("seed", int, 0, "global seed")]


def _train_opts(base: TrainConfig, lr_help: str):
    return [
        ("epochs", int, base.epochs, "training epochs"),
        ("lr", float, None, lr_help),
        ("batch-size", int, base.batch_size, "minibatch size"),
        ("cd-steps", int, base.cd_steps, "Gibbs steps per CD update"),
        ("sparsity-target", float, base.sparsity_target, "target mean pooled activation"),
        ("sparsity-weight", float, base.sparsity_weight, "sparsity penalty weight"),
        ("init-scale", float, base.init_scale, "half-width of the uniform weight init"),
    ]


OPTIONS = {
    "synth": _COMMON + [
        ("images", str, None, "IDX image file (default: bundled digits)"),
        ("labels", str, None, "IDX label file"),
        ("variation", str, "rot", "rot | scale | trans"),
        ("background", str, "none", "none | random_uniform"),
        ("n", int, 0, "number of base digits to use (0 = all)"),
        ("out", str, "variation.tifv", "output dataset"),
    ],
    "train": _COMMON + _train_opts(TrainConfig(), "learning rate (default 0.05 binary, "
                                                  "0.005 real-valued)") + [
        ("model", str, "tirbm", "tirbm | tiae | tiomp"),
        ("transforms", str, "identity28", "transform preset name (a+b concatenates)"),
        ("k", int, 100, "number of filters"),
        ("data", str, None, "dataset from 'synth' (default: bundled digits)"),
        ("n", int, 2000, "use at most this many examples"),
        ("patches", int, 10000, "patches to sample when data images are larger than r"),
        ("preprocess", str, "none", "none | per_patch_standardize | zca_whiten"),
        ("visible", str, None, "binary | gaussian (tirbm); sigmoid_cross_entropy | "
                               "linear_squared_error (tiae)"),
        ("gamma", int, 1, "TIOMP support budget"),
        ("out", str, "model.tifl", "checkpoint path"),
        ("metrics", str, None, "per-epoch metrics CSV"),
    ],
    "extract": _COMMON + [
        ("checkpoint", str, None, "trained model"),
        ("data", str, None, "dataset to encode"),
        ("alpha", float, 0.25, "soft threshold for TIOMP features"),
        ("stride", int, 1, "dense extraction stride"),
        ("pooling", str, "quadrant_average", "quadrant_average | global_average"),
        ("out", str, "features.tifv", "feature file"),
    ],
    "classify": _COMMON + [
        ("train", str, None, "training feature file (labels in <file>.labels)"),
        ("test", str, None, "test feature file"),
        ("reg", float, None, "L2 weight; cross-validated over reg-grid when omitted"),
        ("reg-grid", str, ",".join(map(str, classify.DEFAULT_REG_GRID)), "comma list"),
        ("folds", int, 5, "cross-validation folds"),
        ("dataset", str, "custom", "dataset name for the results row"),
        ("model-name", str, "model", "model name for the results row"),
        ("out", str, "results.csv", "results CSV"),
        ("confusion", str, None, "confusion-matrix CSV"),
    ],
    "eval": _COMMON + _train_opts(experiments.DIGIT_TRAIN_CONFIG, "learning rate (default "
                                  f"{experiments.DIGIT_TRAIN_CONFIG.learning_rate})") + [
        ("experiment", str, "mnist-rot-small",
         "mnist-{rot,scale,trans}[-bgrand]-small | synthetic-color-smoke"),
        ("k", int, 100, "number of filters"),
        ("n-train", int, 2000, "training examples"),
        ("n-test", int, 1000, "test examples"),
        ("images", str, None, "IDX base digits (default: bundled digits)"),
        ("labels", str, None, "IDX labels for --images"),
        ("checkpoint-dir", str, None, "save one checkpoint per model here"),
        ("out", str, "results.csv", "results CSV"),
    ],
    "viz": [
        ("checkpoint", str, None, "trained model"),
        ("transform-index", int, None, "render T_s^T w_j for this transform"),
        ("out", str, "filters.pgm", "output PGM"),
    ],
}
REQUIRED = {"extract": ("checkpoint", "data"), "classify": ("train",), "viz": ("checkpoint",)}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tifl", description="Transformation-invariant feature learning.")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in OPTIONS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key=value config file")
        for flag, typ, default, help_ in opts:
            sp.add_argument(f"--{flag}", type=typ, default=None,
                            help=f"{help_} [default: {default}]")
    return p


def read_config(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags; reject unknown config keys."""
    known = {f.replace("-", "_"): (typ, default) for f, typ, default, _ in OPTIONS[command]}
    cfg = {k: d for k, (_, d) in known.items()}
    if ns.config:
        try:
            filecfg = read_config(ns.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        for k, v in filecfg.items():
            if k not in known:
                raise UsageError(f"unknown config key {k!r} for '{command}'")
            try:
                cfg[k] = known[k][0](v)
            except ValueError as exc:
                raise UsageError(f"bad value for {k}: {v!r}") from exc
    for k in known:
        if getattr(ns, k) is not None:
            cfg[k] = getattr(ns, k)
    missing = [k for k in REQUIRED.get(command, ()) if cfg[k] is None]
    if missing:
        raise UsageError(f"'{command}' needs --{missing[0].replace('_', '-')}")
    return cfg


def _train_config(cfg, default_lr) -> TrainConfig:
    return TrainConfig(learning_rate=cfg["lr"] if cfg["lr"] is not None else default_lr,
                       batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                       cd_steps=cfg["cd_steps"], sparsity_target=cfg["sparsity_target"],
                       sparsity_weight=cfg["sparsity_weight"],
                       init_scale=cfg["init_scale"], seed=cfg["seed"])


# --- subcommands ----------------------------------------------------------------

def cmd_synth(cfg):
    base = data.load_digits(cfg["images"], cfg["labels"])
    if cfg["n"]:
        base = base.subset(np.arange(min(cfg["n"], len(base))))
    out = data.synthesize_variation(base, cfg["variation"], cfg["background"], cfg["seed"])
    data.save_dataset(cfg["out"], out)
    log.info("wrote %d examples to %s", len(out), cfg["out"])


def cmd_train(cfg):
    ds = data.load_dataset(cfg["data"]) if cfg["data"] else data.load_digits()
    ts = preset(cfg["transforms"], ds.channels)
    if ds.r != ts.input_width:
        ds = data.sample_patches(ds.images(), cfg["patches"], ts.input_width, cfg["seed"])
    ds = ds.subset(np.arange(min(cfg["n"], len(ds))))
    pre = data.fit_preprocessing(ds.patches, cfg["preprocess"])
    X = pre.apply(ds.patches)
    kind = cfg["model"]
    if kind == "tirbm":
        visible = cfg["visible"] or ("binary" if cfg["preprocess"] == "none" else "gaussian")
        tcfg = _train_config(cfg, 0.05 if visible == "binary" else 0.005)
        model = tirbm.init_model(ts, cfg["k"], visible, tcfg.init_scale, tcfg.seed)
        model, metrics = tirbm.train(model, X, tcfg)
    elif kind == "tiae":
        output = cfg["visible"] or ("sigmoid_cross_entropy" if cfg["preprocess"] == "none"
                                    else "linear_squared_error")
        tcfg = _train_config(cfg, 0.05 if output == "sigmoid_cross_entropy" else 0.005)
        model = tiae.init_model(ts, cfg["k"], output, tcfg.init_scale, tcfg.seed)
        model, metrics = tiae.train(model, X, tcfg)
    elif kind == "tiomp":
        model = tiomp.init_dictionary(ts, cfg["k"], seed=cfg["seed"], data=X)
        model, metrics = tiomp.train(model, X, cfg["gamma"], cfg["epochs"],
                                     cfg["batch_size"], cfg["seed"])
    else:
        raise UsageError(f"unknown model {kind!r}")
    checkpoint.save(cfg["out"], model, pre)
    if cfg["metrics"] and metrics:
        checkpoint.append_metrics(cfg["metrics"], metrics)
    log.info("wrote checkpoint %s", cfg["out"])


def cmd_extract(cfg):
    model, pre = checkpoint.load(cfg["checkpoint"])
    ts = model.transforms
    ds = data.load_dataset(cfg["data"])
    fx = features.extractor_for(model, ts.input_width, ts.channels, cfg["alpha"],
                                pre if pre.kind != "none" else None, cfg["stride"],
                                cfg["pooling"])
    if ds.r == ts.input_width:
        F = features.patch_features(fx, ds.patches)
    else:
        F = features.extract_all(fx, ds.images())
    features.write_features(cfg["out"], F)
    if ds.labels is not None:
        out = Path(cfg["out"])
        data.write_idx_labels(out.with_name(out.name + ".labels"), ds.labels)
    log.info("wrote %s features of dim %d to %s", F.shape[0], F.shape[1], cfg["out"])


def _features_and_labels(path):
    X = features.read_features(path).astype(np.float64)
    lab = Path(path).with_name(Path(path).name + ".labels")
    if not lab.exists():
        raise FileNotFoundError(f"missing label file {lab}")
    return X, data.read_idx_labels(lab).astype(np.int64)


def cmd_classify(cfg):
    Xtr, ytr = _features_and_labels(cfg["train"])
    reg = cfg["reg"]
    if reg is None:
        grid = [float(g) for g in cfg["reg_grid"].split(",") if g.strip()]
        reg, cv = classify.cross_validate(Xtr, ytr, grid, cfg["folds"], cfg["seed"])
        log.info("cross-validated reg %g (%s)", reg, cv)
    clf = classify.fit(Xtr, ytr, reg)
    Xte, yte = _features_and_labels(cfg["test"]) if cfg["test"] else (Xtr, ytr)
    acc, conf = classify.evaluate(clf, Xte, yte)
    classify.write_results(cfg["out"], [{
        "dataset": cfg["dataset"], "model": cfg["model_name"], "K": Xtr.shape[1], "S": "",
        "reg": reg, "accuracy": f"{acc:.6f}", "error": f"{1 - acc:.6f}"}])
    if cfg["confusion"]:
        classify.write_confusion(cfg["confusion"], conf)
    print(f"accuracy {acc:.6f}")


def cmd_eval(cfg):
    name = cfg["experiment"]
    if name == "synthetic-color-smoke":
        imgs, labels = experiments.synthetic_color_images(500, seed=cfg["seed"])
        model, _, F = experiments.patch_pipeline(imgs, labels, K=min(cfg["k"], 32),
                                                 epochs=cfg["epochs"], seed=cfg["seed"])
        tr, te = np.arange(400), np.arange(400, 500)
        clf = classify.fit(F[tr], labels[tr], 1e-2)
        acc, _ = classify.evaluate(clf, F[te], labels[te])
        rows = [{"dataset": name, "model": "TIRBM", "K": model.K, "S": model.S,
                 "reg": 1e-2, "accuracy": f"{acc:.6f}", "error": f"{1 - acc:.6f}"}]
    else:
        parts = name.split("-")
        if len(parts) < 3 or parts[0] != "mnist" or parts[-1] != "small" \
                or parts[1] not in experiments.VARIATION_PRESETS:
            raise UsageError(f"unknown experiment {name!r}")
        bg = "random_uniform" if "bgrand" in parts else "none"
        exp_lr = experiments.DIGIT_TRAIN_CONFIG.learning_rate
        exp = experiments.DigitExperiment(parts[1], bg, cfg["n_train"], cfg["n_test"],
                                          cfg["k"], cfg["seed"],
                                          _train_config(cfg, exp_lr))
        base = data.load_digits(cfg["images"], cfg["labels"])
        results = experiments.run_digit_experiment(exp, base)
        rows = experiments.result_rows(results)
        if cfg["checkpoint_dir"]:
            d = Path(cfg["checkpoint_dir"])
            d.mkdir(parents=True, exist_ok=True)
            for label, res in results.items():
                checkpoint.save(d / f"{name}-{label}.tifl", res["model"])
    classify.write_results(cfg["out"], rows)
    for row in rows:
        print(f"{row['dataset']} {row['model']} error {row['error']}")


def cmd_viz(cfg):
    img = viz.export_filter_grid(cfg["checkpoint"], cfg["out"], cfg["transform_index"])
    log.info("wrote %dx%d grid to %s", img.shape[1], img.shape[0], cfg["out"])


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "extract": cmd_extract,
            "classify": cmd_classify, "eval": cmd_eval, "viz": cmd_viz}


def _usage_error(exc: UsageError):
    print(f"error: {exc.args[0]}", file=sys.stderr)
    if len(exc.args) > 1:
        print(exc.args[1], file=sys.stderr)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg = resolve(ns.command, ns)
    except UsageError as exc:
        _usage_error(exc)
        return 1
    level = getattr(logging, str(ns.log_level).upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    log.setLevel(level)
    log.info("resolved config: %s %s", ns.command,
             " ".join(f"{k}={v}" for k, v in sorted(cfg.items())))
    try:
        COMMANDS[ns.command](cfg)
    except UsageError as exc:
        _usage_error(exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 2
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
