"""Command-line entry point: ``netrpca <command> [options]``.

Every option can also come from a key=value config file (``--config``).
The file may hold a ``[common]`` section and one section per command;
keys are the long option names with ``-`` or ``_``. Flags given on the
command line win over the file, which wins over built-in defaults.

Each command writes into ``--out`` and leaves ``config.json`` there with
the fully resolved settings.
"""

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .detector import (
    DEFAULT_ALPHA,
    DEFAULT_GAMMA,
    DegenerateModelError,
    DimensionMismatchError,
    NominalModel,
    fit_nominal,
    fit_pca,
    score,
)
from .features import (
    DEFAULT_PORTS,
    DEFAULT_PROTOCOLS,
    WIRESHARK_COLUMNS,
    PacketFormatError,
    build_encoder,
    encode,
    load_feature_matrix,
    parse_label_csv,
    parse_packet_csv,
    save_feature_matrix,
    slice_columns,
    write_label_csv,
    write_packet_csv,
)
from .io import atomic_write_text
from .matfactor import NumericalError
from .rpca import RpcaConfig, nominal_lambda
from .synth import ScenarioConfig, generate
from .trainer import (
    HOLDOUT_NAME,
    METRICS,
    DegenerateLabelsError,
    LabeledWindow,
    LeakageError,
    TrainingError,
    choose_alpha,
    default_alpha_grid,
    evaluate_holdout,
    pca_baseline,
    sweep_lambda,
)

logger = logging.getLogger("netrpca")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_FORMAT = 4
EXIT_DIMENSION = 5
EXIT_NUMERICAL = 6

ROC_METHODS = ("pca", "rpca-nominal", "rpca-optimized")


class ConfigError(ValueError):
    pass


# ---- option parsing helpers ----

def _int_list(text):
    return [int(v) for v in _split(text)]


def _float_list(text):
    return [float(v) for v in _split(text)]


def _str_list(text):
    return _split(text)


def _split(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _grid(text):
    """``default`` or a comma list of floats."""
    if text is None or str(text).strip().lower() == "default":
        return None
    vals = _float_list(text)
    if not vals:
        raise ValueError("grid is empty")
    return vals


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none", "auto", "nominal"):
        return None
    return float(text)


def _optional_int(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return int(text)


def _mu_init(text):
    return "auto" if str(text).strip().lower() == "auto" else float(text)


def _window(text):
    name, _, rng = str(text).partition("=")
    start, sep, stop = rng.partition(":")
    if not name or not sep:
        raise ValueError(f"window must look like name=start:stop, got {text!r}")
    return name.strip(), (int(start), int(stop))


# (name, type, default, help); list-valued options take comma lists
RPCA_OPTIONS = [
    ("lam", _optional_float, None, "RPCA coupling constant (default: 1/sqrt(max(m, n)))"),
    ("epsilon", float, 0.0, "elementwise noise bound"),
    ("tol", float, 1e-7, "relative residual stopping tolerance"),
    ("max-iter", int, 1000, "iteration cap"),
    ("max-rank", int, 40, "rank cap on the low-rank part"),
    ("mu-init", _mu_init, "auto", "initial penalty or 'auto'"),
    ("rho", float, 1.5, "penalty growth factor"),
    ("gamma", float, DEFAULT_GAMMA, "relative singular-value cutoff for the basis"),
]

WINDOW_OPTIONS = [
    ("windows", str, None, "windows CSV (name,start,stop) as written by synth"),
    ("window", _window, None, "name=start:stop, repeatable; overrides --windows"),
]

OPTIONS = {
    "synth": [
        ("seed", int, 7, "random seed"),
        ("scenario", str, None, "JSON file with ScenarioConfig fields"),
        ("nominal-packets", _optional_int, None, "length of the attack-free prefix"),
        ("rare-benign-rate", _optional_float, None, "share of rare benign packets"),
    ],
    "encode": [
        ("packets", str, None, "packet CSV"),
        ("labels", str, None, "label CSV (index,label)"),
        ("column-map", str, "canonical", "'canonical', 'wireshark' or a JSON file mapping names"),
        ("ports", _int_list, list(DEFAULT_PORTS), "important ports"),
        ("protocols", _str_list, list(DEFAULT_PROTOCOLS), "protocol tokens"),
        ("vocab-window", str, "y0", "window whose packets define the IP vocabulary, or 'all'"),
    ] + WINDOW_OPTIONS,
    "fit": [
        ("features", str, None, "feature matrix file"),
        ("train-window", str, "y0", "attack-free window to fit on, or 'all'"),
        ("method", str, "rpca", "rpca or pca"),
        ("k", _optional_int, None, "basis size for method=pca"),
        ("alpha", float, DEFAULT_ALPHA, "detection threshold stored in the model"),
    ] + WINDOW_OPTIONS + RPCA_OPTIONS,
    "sweep": [
        ("features", str, None, "feature matrix file"),
        ("train-window", str, "y0", "attack-free window to fit on"),
        ("train", _str_list, ["stage1", "stage2"], "labeled windows used for selection"),
        ("holdout", str, HOLDOUT_NAME, "window that may never be used for training"),
        ("lambda-grid", _grid, None, "comma list or 'default'"),
        ("alpha-grid", _grid, None, "comma list or 'default'"),
        ("metric", str, "auc", f"lambda selection metric, one of {METRICS}"),
        ("alpha-metric", str, "youden", "alpha selection metric"),
        ("max-fpr", float, 0.05, "fpr bound for tpr_at_fpr"),
        ("n-jobs", int, 1, "parallel lambda fits"),
    ] + WINDOW_OPTIONS + RPCA_OPTIONS,
    "detect": [
        ("features", str, None, "feature matrix file"),
        ("model", str, None, "model file"),
        ("alpha", _optional_float, None, "override the model threshold"),
        ("score-window", str, "all", "window to score, or 'all'"),
    ] + WINDOW_OPTIONS,
    "roc": [
        ("features", str, None, "feature matrix file"),
        ("model", str, None, "trained model for rpca-optimized (default: run a sweep)"),
        ("methods", _str_list, list(ROC_METHODS), "subset of pca,rpca-nominal,rpca-optimized"),
        ("eval", _str_list, [HOLDOUT_NAME], "windows to draw ROC curves for"),
        ("train-window", str, "y0", "attack-free window to fit on"),
        ("train", _str_list, ["stage1", "stage2"], "labeled windows for alpha (and lambda) selection"),
        ("holdout", str, HOLDOUT_NAME, "window that may never be used for training"),
        ("k", _optional_int, None, "PCA basis size (default: gamma rule)"),
        ("lambda-grid", _grid, None, "comma list or 'default'"),
        ("alpha-grid", _grid, None, "comma list or 'default'"),
        ("metric", str, "auc", "lambda selection metric"),
        ("alpha-metric", str, "youden", "alpha selection metric"),
        ("max-fpr", float, 0.05, "fpr bound for tpr_at_fpr"),
        ("n-jobs", int, 1, "parallel lambda fits"),
    ] + WINDOW_OPTIONS + RPCA_OPTIONS,
}

REQUIRED = {
    "encode": ["packets"],
    "fit": ["features"],
    "sweep": ["features"],
    "detect": ["features", "model"],
    "roc": ["features"],
}


def _key(name):
    return name.replace("-", "_")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    p = _Parser(prog="netrpca", description="Robust-PCA packet anomaly detection.")
    p.add_argument("--version", action="version", version=f"netrpca {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd, help=COMMANDS[cmd].__doc__.splitlines()[0])
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--out", required=False, help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
        for name, typ, default, helptext in opts:
            kw = dict(dest=_key(name), default=argparse.SUPPRESS,
                      help=f"{helptext} (default: {default})")
            if name == "window":
                sp.add_argument(f"--{name}", type=typ, action="append", **kw)
            else:
                sp.add_argument(f"--{name}", type=typ, **kw)
    return p


def _read_config_file(path, command):
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file {path} not found")
    cp = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[common]\n" + text
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from exc
    out = {}
    for section in ("common", command):
        if cp.has_section(section):
            for k, v in cp.items(section):
                out[_key(k)] = v
    return out


def resolve(command, ns):
    """Merge defaults, config file and flags into one dict of typed values."""
    opts = {_key(n): (typ, default) for n, typ, default, _ in OPTIONS[command]}
    cfg = dict((k, d) for k, (_, d) in opts.items())
    if ns.config:
        for k, raw in _read_config_file(ns.config, command).items():
            if k == "out":
                cfg["out"] = raw
                continue
            if k not in opts:
                raise ConfigError(f"unknown key {k!r} in {ns.config} for command {command}")
            typ = opts[k][0]
            try:
                if k == "window":
                    cfg[k] = [_window(v) for v in raw.split(",")]
                else:
                    cfg[k] = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k!r}: {exc}") from exc
    for k in opts:
        if hasattr(ns, k):
            cfg[k] = getattr(ns, k)
    if ns.out:
        cfg["out"] = ns.out
    if not cfg.get("out"):
        raise ConfigError("--out is required")
    for k in REQUIRED.get(command, []):
        if cfg.get(k) is None:
            raise ConfigError(f"--{k.replace('_', '-')} is required")
    return cfg


# ---- shared pieces ----

def _require_file(path, what):
    if path is None or not os.path.isfile(path):
        raise FileNotFoundError(f"{what} {path} not found")
    return path


def _echo(cfg, command, out):
    resolved = {"command": command, "version": __version__}
    for k, v in sorted(cfg.items()):
        if k == "window" and v is not None:
            v = {name: list(r) for name, r in v}
        resolved[k] = v
    atomic_write_text(os.path.join(out, "config.json"), json.dumps(resolved, indent=1, sort_keys=True) + "\n")


def read_windows_csv(path):
    windows = {}
    with open(_require_file(path, "windows file"), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["name", "start", "stop"]:
            raise PacketFormatError(f"{path}: expected header name,start,stop")
        for row in reader:
            try:
                windows[row["name"]] = (int(row["start"]), int(row["stop"]))
            except (TypeError, ValueError) as exc:
                raise PacketFormatError(f"{path}: bad window row {row}") from exc
    return windows


def write_windows_csv(windows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "start", "stop"])
    for name, (a, b) in windows.items():
        w.writerow([name, a, b])
    return buf.getvalue()


def _windows(cfg):
    windows = read_windows_csv(cfg["windows"]) if cfg.get("windows") else {}
    for name, rng in cfg.get("window") or []:
        windows[name] = rng
    return windows


def _get_window(windows, name, fm):
    if name == "all":
        return fm
    if name not in windows:
        raise ConfigError(f"window {name!r} is not defined (known: {', '.join(windows) or 'none'})")
    return slice_columns(fm, *windows[name])


def _labeled(windows, names, fm):
    out = []
    for n in names:
        part = _get_window(windows, n, fm)
        if part.labels is None:
            raise ConfigError(f"window {n!r} has no labels; encode with --labels")
        out.append(LabeledWindow(part, n))
    return out


def _rpca_config(cfg, lam):
    return RpcaConfig(lam=lam, epsilon=cfg["epsilon"], tol=cfg["tol"], max_iter=cfg["max_iter"],
                      max_rank=cfg["max_rank"], mu_init=cfg["mu_init"], rho=cfg["rho"])


def _load_features(cfg):
    return load_feature_matrix(_require_file(cfg["features"], "feature matrix"))


# ---- commands ----

def cmd_synth(cfg):
    """Generate a labeled synthetic packet trace."""
    base = {}
    if cfg.get("scenario"):
        with open(_require_file(cfg["scenario"], "scenario file")) as fh:
            base = json.load(fh)
    base["seed"] = cfg["seed"]
    if cfg.get("nominal_packets") is not None:
        base["nominal_packets"] = cfg["nominal_packets"]
    if cfg.get("rare_benign_rate") is not None:
        base["rare_benign_rate"] = cfg["rare_benign_rate"]
    try:
        scenario = ScenarioConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError(f"scenario: {exc}") from exc
    trace = generate(scenario)
    out = cfg["out"]
    packets, labels = io.StringIO(), io.StringIO()
    write_packet_csv(trace.records, packets)
    write_label_csv(trace.labels, labels)
    atomic_write_text(os.path.join(out, "packets.csv"), packets.getvalue())
    atomic_write_text(os.path.join(out, "labels.csv"), labels.getvalue())
    atomic_write_text(os.path.join(out, "windows.csv"), write_windows_csv(trace.windows))
    atomic_write_text(os.path.join(out, "scenario.json"),
                      json.dumps(scenario.to_dict(), indent=1, sort_keys=True) + "\n")
    logger.info("wrote %d packets (%d attacks)", len(trace.records), int(trace.labels.sum()))


def _column_map(spec):
    if spec == "canonical":
        return None
    if spec == "wireshark":
        return WIRESHARK_COLUMNS
    with open(_require_file(spec, "column map")) as fh:
        return json.load(fh)


def cmd_encode(cfg):
    """Encode a packet CSV into a feature matrix."""
    with open(_require_file(cfg["packets"], "packet CSV"), newline="") as fh:
        records = parse_packet_csv(fh, columns=_column_map(cfg["column_map"]))
    labels = None
    if cfg.get("labels"):
        with open(_require_file(cfg["labels"], "label CSV"), newline="") as fh:
            labels = parse_label_csv(fh, n=len(records))
    windows = _windows(cfg)
    vocab = cfg["vocab_window"]
    if vocab == "all" or (vocab == "y0" and "y0" not in windows):
        vocab_records = records
    elif vocab in windows:
        a, b = windows[vocab]
        vocab_records = records[a:b]
    else:
        raise ConfigError(f"vocab window {vocab!r} is not defined")
    spec = build_encoder(vocab_records, important_ports=cfg["ports"], protocols=cfg["protocols"])
    fm = encode(records, spec, labels)
    out = cfg["out"]
    save_feature_matrix(fm, os.path.join(out, "features.fmat"))
    atomic_write_text(os.path.join(out, "encoder.json"),
                      json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    if windows:
        atomic_write_text(os.path.join(out, "windows.csv"), write_windows_csv(windows))
    logger.info("encoded %d packets into %d rows", fm.n_packets, spec.total_dim)


def cmd_fit(cfg):
    """Fit the nominal model on an attack-free window."""
    fm = _load_features(cfg)
    y0 = _get_window(_windows(cfg), cfg["train_window"], fm)
    m, n = y0.matrix.shape
    if cfg["method"] == "pca":
        model = fit_pca(y0, cfg["k"], cfg["gamma"], cfg["max_rank"])
    elif cfg["method"] == "rpca":
        lam = cfg["lam"] if cfg["lam"] is not None else nominal_lambda(m, n)
        model = fit_nominal(y0, lam, cfg["gamma"], _rpca_config(cfg, lam))
    else:
        raise ConfigError(f"method must be rpca or pca, got {cfg['method']!r}")
    model = model.with_alpha(cfg["alpha"])
    model.save(os.path.join(cfg["out"], "model.json"))
    logger.info("basis dimension %d", model.n_components)


def _sweep(cfg, fm, windows):
    y0 = _get_window(windows, cfg["train_window"], fm)
    train = _labeled(windows, cfg["train"], fm)
    template = _rpca_config(cfg, cfg["lam"] or 1.0)
    grid = cfg["lambda_grid"]
    if grid is None and cfg["lam"] is not None:
        grid = [cfg["lam"]]
    return sweep_lambda(y0, train, grid, cfg["gamma"], template, _alpha_grid(cfg), cfg["metric"],
                        cfg["alpha_metric"], cfg["max_fpr"], cfg["holdout"], cfg["n_jobs"])


def _alpha_grid(cfg):
    g = cfg.get("alpha_grid")
    return default_alpha_grid() if g is None else np.asarray(g, dtype=float)


def cmd_sweep(cfg):
    """Select lambda and alpha on labeled training windows."""
    fm = _load_features(cfg)
    outcome = _sweep(cfg, fm, _windows(cfg))
    out = cfg["out"]
    outcome.model.save(os.path.join(out, "model.json"))
    outcome.save(os.path.join(out, "train_report.json"))
    atomic_write_text(os.path.join(out, "train_report.csv"), outcome.report_csv())
    logger.info("lambda*=%g alpha*=%g", outcome.lambda_star, outcome.alpha_star)


def cmd_detect(cfg):
    """Score packets and flag those above the threshold."""
    fm = _load_features(cfg)
    model = NominalModel.load(_require_file(cfg["model"], "model file"))
    if cfg.get("alpha") is not None:
        model = model.with_alpha(cfg["alpha"])
    part = _get_window(_windows(cfg), cfg["score_window"], fm)
    rep = score(part, model)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    has_labels = part.labels is not None
    w.writerow(["packet_index", "score", "flag"] + (["label"] if has_labels else []))
    for i, (idx, s, f) in enumerate(zip(rep.packet_index, rep.scores, rep.flags)):
        row = [int(idx), repr(float(s)), int(f)]
        if has_labels:
            row.append(int(part.labels[i]))
        w.writerow(row)
    atomic_write_text(os.path.join(cfg["out"], "detections.csv"), buf.getvalue())
    logger.info("flagged %d of %d packets", int(rep.flags.sum()), rep.flags.size)


def cmd_roc(cfg):
    """ROC tables per method and evaluation window."""
    methods = cfg["methods"]
    bad = [m for m in methods if m not in ROC_METHODS]
    if bad or not methods:
        raise ConfigError(f"methods must be drawn from {', '.join(ROC_METHODS)}")
    fm = _load_features(cfg)
    windows = _windows(cfg)
    y0 = _get_window(windows, cfg["train_window"], fm)
    train = _labeled(windows, cfg["train"], fm)
    evals = [LabeledWindow(_get_window(windows, n, fm), n) for n in cfg["eval"]]
    alphas = _alpha_grid(cfg)

    models = {}
    if "pca" in methods:
        models["pca"], _ = pca_baseline(y0, [], alphas, cfg["k"], cfg["gamma"], None, train, cfg["holdout"])
    if "rpca-nominal" in methods:
        lam = nominal_lambda(*y0.matrix.shape)
        nom = fit_nominal(y0, lam, cfg["gamma"], _rpca_config(cfg, lam))
        alpha, _ = choose_alpha(nom, train, alphas, cfg["alpha_metric"], cfg["max_fpr"], cfg["holdout"])
        models["rpca-nominal"] = nom.with_alpha(alpha)
    if "rpca-optimized" in methods:
        if cfg.get("model"):
            models["rpca-optimized"] = NominalModel.load(_require_file(cfg["model"], "model file"))
        else:
            models["rpca-optimized"] = _sweep(cfg, fm, windows).model

    out = cfg["out"]
    summary = io.StringIO()
    sw = csv.writer(summary, lineterminator="\n")
    sw.writerow(["method", "window", "lambda", "basis_dim", "auc", "alpha", "fpr", "tpr"])
    tables = {}
    for method in methods:
        model = models[method]
        for w in evals:
            rep = evaluate_holdout(model, w, alphas)
            tables[f"roc_{method}_{w.name}.csv"] = rep.roc.to_csv()
            lam = "" if np.isinf(model.lam) else repr(float(model.lam))
            sw.writerow([method, w.name, lam, model.n_components, repr(rep.roc.auc), repr(rep.alpha),
                         repr(rep.fpr), repr(rep.tpr)])
    for name, text in tables.items():
        atomic_write_text(os.path.join(out, name), text)
    atomic_write_text(os.path.join(out, "roc_summary.csv"), summary.getvalue())


COMMANDS = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "detect": cmd_detect,
    "roc": cmd_roc,
}


def _classify(exc):
    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING, "missing-file"
    if isinstance(exc, (ConfigError, LeakageError)):
        return EXIT_CONFIG, "config"
    if isinstance(exc, DimensionMismatchError):
        return EXIT_DIMENSION, "dimension"
    if isinstance(exc, (PacketFormatError, json.JSONDecodeError)):
        return EXIT_FORMAT, "format"
    if isinstance(exc, (NumericalError, TrainingError, DegenerateModelError, DegenerateLabelsError)):
        return EXIT_NUMERICAL, "numerical"
    if isinstance(exc, ValueError):
        return EXIT_CONFIG, "config"
    return None, None


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(ns.command, ns)
        os.makedirs(cfg["out"], exist_ok=True)
        COMMANDS[ns.command](cfg)
        _echo(cfg, ns.command, cfg["out"])
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        code, category = _classify(exc)
        if code is None:
            raise
        msg = " ".join(str(exc).split()) or type(exc).__name__
        if isinstance(exc, PacketFormatError) and exc.row_errors:
            first = exc.row_errors[0]
            msg = f"{len(exc.row_errors)} bad rows; first at line {first.line}, {first.column}: {first.message}"
        print(f"error: {category}: {msg}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
