"""``streamhar`` command line: pretrain, stream, eval, plot-pca, synth-data.

Every command takes ``--config``, ``--seed`` and ``--out-dir``. On failure a
single JSON object ``{"error": ..., "message": ...}`` is written to stderr and
the exit code is 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datasets as ds
from .config import config_from_dict, load_config
from .errors import InputError, LengthMismatch, TooFewSamples
from .features import load_fe, save_fe
from .pipeline import normalize_split, prepare_split, pretrain, stream
from .replay import snapshot_save
from .streaming import accuracy, macro_f1, pca_project, per_class_f1

log = logging.getLogger("streamhar")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _parse_set(items) -> dict:
    """``key=value`` overrides; values are parsed as YAML scalars/lists."""
    import yaml

    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def _config(args):
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.config:
        return load_config(args.config, **overrides)
    return config_from_dict({}, **overrides)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_pretrain(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args)
    fe, report = pretrain(cfg)
    report["artifact_bytes"] = save_fe(fe, out / "fe.bin")
    report["parameter_checksum"] = fe.parameter_checksum()
    (out / "pretrain_report.json").write_text(_dump(report))
    return {"fe": str(out / "fe.bin"), "report": str(out / "pretrain_report.json"),
            "train_accuracy": report["train_accuracy"]}


def cmd_stream(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args)
    fe = load_fe(args.fe or out / "fe.bin")
    with open(out / "metrics.jsonl", "w") as fh:
        report, replay, _ = stream(cfg, fe, on_batch=lambda rec: fh.write(json.dumps(rec, sort_keys=True) + "\n"))
    summary = dict(report.summary(), config=cfg.to_dict())
    (out / "summary.json").write_text(_dump(summary))
    snapshot_save(replay, out / "replay.bin")
    (out / "predictions.txt").write_text("".join(f"{p}\n" for p in report.predictions))
    (out / "truth.txt").write_text("".join(f"{t}\n" for t in report.truths))
    return {k: summary[k] for k in ("final_accuracy", "final_macro_f1", "base_macro_f1", "new_macro_f1")}


def _read_labels(path) -> list:
    labels = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            labels.append(int(line.strip()))
        except ValueError:
            raise InputError(f"{path}:{n}: not an integer label: {line!r}") from None
    return labels


def cmd_eval(args) -> dict:
    preds, truths = _read_labels(args.predictions), _read_labels(args.truth)
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    classes = sorted(set(truths) | set(preds))
    f1s = per_class_f1(preds, truths, classes)
    result = {
        "accuracy": accuracy(preds, truths),
        "macro_f1": macro_f1(preds, truths, classes),
        "per_class_f1": {str(c): v for c, v in f1s.items()},
        "n": len(truths),
    }
    if args.out_dir:
        (_out_dir(args) / "eval.json").write_text(_dump(result))
    return result


def cmd_plot_pca(args) -> dict:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cfg = _config(args)
    out = _out_dir(args)
    fe = load_fe(args.fe or out / "fe.bin")
    split = prepare_split(cfg)
    if fe.normalizer is not None:
        split = normalize_split(split, fe.normalizer)
    windows = split.test
    if len({w.label for w in windows}) < 2:
        raise TooFewSamples("plot-pca needs windows from at least two classes")
    points, ratio = pca_project(fe.embed_array(np.stack([w.data for w in windows])), 2)
    labels = np.array([w.label for w in windows])

    plt.rcParams["svg.hashsalt"] = "streamhar"
    fig, ax = plt.subplots(figsize=(6, 5))
    for c in sorted(set(labels.tolist())):
        m = labels == c
        ax.scatter(points[m, 0], points[m, 1], s=6, label=str(c))
    ax.set_xlabel(f"PC1 ({ratio[0]:.1%})")
    ax.set_ylabel(f"PC2 ({ratio[1]:.1%})")
    ax.legend(title="class", markerscale=2, fontsize="small")
    target = Path(args.output) if args.output else out / "pca.svg"
    fig.savefig(target, metadata={"Date": None} if target.suffix == ".svg" else None)
    plt.close(fig)
    return {"output": str(target), "n_points": int(len(points)), "explained_variance_ratio": [float(r) for r in ratio]}


def cmd_synth_data(args) -> dict:
    cfg = _config(args)
    out = _out_dir(args)
    recs = ds.synth_generate(cfg.synth_spec())
    ds.write_csv_dir(recs, out)
    return {"out_dir": str(out), "n_recordings": len(recs)}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON run config (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", default="runs/default", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="streamhar", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="train and save the feature extractor").set_defaults(fn=cmd_pretrain)
    s = sub.add_parser("stream", parents=[common], help="run the streaming stage with a saved extractor")
    s.add_argument("--fe", help="feature extractor artifact (default OUT_DIR/fe.bin)")
    s.set_defaults(fn=cmd_stream)
    e = sub.add_parser("eval", parents=[common], help="score a predictions file against a truth file")
    e.add_argument("predictions")
    e.add_argument("truth")
    e.set_defaults(fn=cmd_eval, out_dir=None)
    g = sub.add_parser("plot-pca", parents=[common], help="2-D PCA scatter of test-window embeddings")
    g.add_argument("--fe", help="feature extractor artifact (default OUT_DIR/fe.bin)")
    g.add_argument("--output", help="image path (default OUT_DIR/pca.svg)")
    g.set_defaults(fn=cmd_plot_pca)
    sub.add_parser("synth-data", parents=[common], help="write the synthetic dataset as CSVs").set_defaults(fn=cmd_synth_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.fn(args)
    except Exception as exc:  # reported, not raised: callers read the JSON
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
