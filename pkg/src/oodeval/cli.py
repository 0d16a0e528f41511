"""The ``oodeval`` command line: score -> evaluate -> report, plus builders.

Subcommands: score | eval | seg-eval | typicality | calibrate | aurra |
augment.  Every command validates its inputs before writing anything,
returns exit code 0 only on success, and emits structured errors on stderr.
JSON outputs are schema-versioned and byte-stable; pass ``--no-timestamp``
to drop the one non-deterministic field from sidecars and reports.

Thread count for the per-image evaluation loop comes from ``--threads`` or
the ``OODEVAL_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, deepaugment, detectors, metrics, outliers, tensorio
from .errors import (
    AlignmentError,
    ConfigError,
    ModeError,
    OodevalError,
    ShapeError,
)

REPORT_VERSION = 1

DETECTOR_NAMES = ("msp", "maxlogit", "logitavg", "background", "kl",
                  "typicality", "iforest", "lof", "dropout", "ae")
SEG_DETECTORS = ("msp", "maxlogit", "background", "ae")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _thread_count(value: int | None) -> int | None:
    if value is not None:
        return value
    env = os.environ.get("OODEVAL_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"OODEVAL_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count()  # default: available parallelism


def _load_scores_file(path):
    """Scores as (ids or None, float vector); CSV by extension, else NPY."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return tensorio.read_scores_csv(path)
    arr = tensorio.read_array(path)
    if arr.ndim != 1:
        raise ShapeError(f"{path}: expected a 1-D score vector, got shape {arr.shape}")
    return None, arr.astype(np.float64)


def _load_labels_file(path):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return tensorio.read_labels_csv(path)
    arr = tensorio.read_array(path)
    if arr.ndim != 1:
        raise ShapeError(f"{path}: expected a 1-D label vector, got shape {arr.shape}")
    return None, arr


def _align(score_ids, scores, label_ids, labels):
    """Match label order to score order by id; positional when ids are absent."""
    if score_ids is not None and label_ids is not None:
        if len(set(score_ids)) != len(score_ids):
            dupes = [i for i in score_ids if score_ids.count(i) > 1]
            raise AlignmentError(f"duplicate score id {dupes[0]!r}")
        by_id = dict(zip(label_ids, labels))
        if len(by_id) != len(label_ids):
            dupes = [i for i in label_ids if label_ids.count(i) > 1]
            raise AlignmentError(f"duplicate label id {dupes[0]!r}")
        aligned = []
        for item_id in score_ids:
            if item_id not in by_id:
                raise AlignmentError(f"id {item_id!r} has a score but no label")
            aligned.append(by_id[item_id])
        extra = set(label_ids) - set(score_ids)
        if extra:
            raise AlignmentError(f"id {sorted(extra)[0]!r} has a label but no score")
        return scores, np.asarray(aligned)
    if len(scores) != len(labels):
        raise AlignmentError(
            f"{len(scores)} scores vs {len(labels)} labels and no ids to align by"
        )
    return scores, labels


def _prob_matrix_from(args, arr) -> detectors.ProbMatrix:
    if args.probs is not None:
        if args.prob_mode is None:
            raise ConfigError("--probs requires --prob-mode softmax|sigmoid")
        return detectors.ProbMatrix(arr, args.prob_mode)
    # raw logits: derive the mode the detector needs
    if args.detector in ("msp", "kl", "background"):
        return detectors.softmax(arr)
    return detectors.sigmoid(arr)


def _feature_transform(arr: np.ndarray, feature: str) -> np.ndarray:
    if arr.ndim != 2:
        raise ShapeError(f"feature source must be 2-D, got shape {arr.shape}")
    if feature == "maxlogit":
        return arr.max(axis=1, keepdims=True)
    if feature == "raw":
        return arr
    raise ConfigError(f"unknown feature map {feature!r} (expected maxlogit or raw)")


def _read_manifest_rows(manifest_path):
    manifest = tensorio.load_manifest(manifest_path)
    ids = [entry.id for entry in manifest.entries]
    arrays = [tensorio.read_array(entry.logits_path) for entry in manifest.entries]
    return manifest, ids, arrays


def _stack_rows(arrays, what: str) -> np.ndarray:
    rows = []
    width = None
    for i, arr in enumerate(arrays):
        row = arr.ravel() if arr.ndim == 2 and 1 in arr.shape else arr
        if row.ndim != 1:
            raise ShapeError(f"{what}: entry {i} must be a 1-D class vector, "
                             f"got shape {arr.shape}")
        if width is None:
            width = row.shape[0]
        elif row.shape[0] != width:
            raise ShapeError(f"{what}: entry {i} has {row.shape[0]} classes, "
                             f"expected {width}")
        rows.append(row.astype(np.float64))
    return np.vstack(rows)


def _save_templates(path, templates: detectors.ClassTemplates,
                    no_timestamp: bool, source=None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensorio.write_array(path, templates.templates)
    sidecar = {
        "version": REPORT_VERSION,
        "kind": "kl_templates",
        "n_classes": templates.n_classes,
        "support_counts": [int(c) for c in templates.support_counts],
    }
    if source is not None:
        sidecar["inputs"] = {"source": {"path": str(source),
                                        "sha256": _sha256(source)}}
    if not no_timestamp:
        sidecar["created_at"] = _utc_now()
    _write_json(str(path) + ".json", sidecar)


def _load_templates(path) -> detectors.ClassTemplates:
    rows = tensorio.read_array(path)
    if rows.ndim != 2:
        raise ShapeError(f"{path}: templates must be 2-D, got shape {rows.shape}")
    try:
        sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
        supports = np.asarray(sidecar["support_counts"], dtype=np.int64)
    except (OSError, KeyError, ValueError, json.JSONDecodeError):
        supports = np.zeros(rows.shape[0], dtype=np.int64)
    return detectors.ClassTemplates(templates=rows.astype(np.float64),
                                    support_counts=supports)


def _load_typicality_matrix(path, threshold):
    rows = tensorio.read_array(path)
    if rows.ndim != 2 or rows.shape[0] != rows.shape[1]:
        raise ShapeError(f"{path}: typicality matrix must be square, got {rows.shape}")
    if threshold is None:
        try:
            sidecar = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
            threshold = float(sidecar["threshold"])
        except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
            raise ConfigError(
                f"{path}: no sidecar threshold found; pass --t explicitly"
            ) from exc
    return detectors.TypicalityMatrix(rows=rows.astype(np.float64),
                                      threshold_build=float(threshold))


def _score_rows(args, test_rows: np.ndarray) -> np.ndarray:
    """Whole-image scores for one detector over stacked (N, C) inputs."""
    name = args.detector
    if name == "maxlogit":
        if args.probs is not None:
            raise ModeError("maxlogit requires raw logits; got probabilities "
                            "(pass --logits instead)")
        return detectors.maxlogit_score(test_rows)
    if name == "logitavg":
        if args.probs is not None:
            raise ModeError("logitavg requires raw logits; got probabilities "
                            "(pass --logits instead)")
        return detectors.logitavg_score(test_rows)
    if name == "msp":
        return detectors.msp_score(_prob_matrix_from(args, test_rows))
    if name == "background":
        if args.bg_class is None:
            raise ConfigError("background detector needs --bg-class")
        return detectors.background_score(_prob_matrix_from(args, test_rows),
                                          args.bg_class)
    if name == "kl":
        if args.templates is not None:
            templates = _load_templates(args.templates)
        elif args.fit is not None:
            fit_rows = tensorio.read_array(args.fit)
            templates = detectors.kl_templates_fit(_prob_matrix_from(args, fit_rows))
        else:
            raise ConfigError("kl detector needs --fit or --templates")
        if args.save_templates:
            _save_templates(args.save_templates, templates, args.no_timestamp,
                            source=args.fit)
        return detectors.kl_score(_prob_matrix_from(args, test_rows), templates)
    if name == "typicality":
        if args.matrix is not None:
            matrix = _load_typicality_matrix(args.matrix, args.t)
        elif args.fit is not None:
            fit_rows = tensorio.read_array(args.fit)
            build_t = 0.5 if args.t is None else args.t
            matrix = detectors.typicality_build(_prob_matrix_from(args, fit_rows),
                                                threshold=build_t)
        else:
            raise ConfigError("typicality detector needs --fit or --matrix")
        return detectors.typicality_score(_prob_matrix_from(args, test_rows), matrix,
                                          threshold=args.t)
    if name == "iforest":
        if args.fit is None:
            raise ConfigError("iforest detector needs --fit with validation features")
        fit = _feature_transform(tensorio.read_array(args.fit), args.feature)
        queries = _feature_transform(test_rows, args.feature)
        model = outliers.iforest_fit(fit, n_trees=args.n_trees,
                                     subsample=args.subsample, seed=args.seed,
                                     mode=args.mode.replace("-", "_"))
        if args.save_model:
            outliers.save_model(model, args.save_model)
        return outliers.iforest_score(model, queries)
    if name == "lof":
        if args.fit is None:
            raise ConfigError("lof detector needs --fit with validation features")
        fit = _feature_transform(tensorio.read_array(args.fit), args.feature)
        queries = _feature_transform(test_rows, args.feature)
        model = outliers.lof_fit(fit, k=args.k)
        if args.save_model:
            outliers.save_model(model, args.save_model)
        return outliers.lof_score(model, queries)
    raise ConfigError(f"detector {name!r} cannot score plain class vectors")


def cmd_score(args) -> int:
    if args.seg:
        return _cmd_score_seg(args)

    inputs = {}
    name = args.detector
    if name == "dropout":
        per_item_stacks = None
        if args.manifest is not None:
            _, ids, arrays = _read_manifest_rows(args.manifest)
            per_item_stacks = []
            for i, arr in enumerate(arrays):
                if arr.ndim != 2:
                    raise ShapeError(f"dropout manifest entry {i} must be a (K, C) "
                                     f"stack, got shape {arr.shape}")
                per_item_stacks.append(arr)
            inputs["manifest"] = args.manifest
        elif args.stack is not None:
            stack = tensorio.read_array(args.stack)
            if stack.ndim != 3:
                raise ShapeError(f"--stack must be (K, N, C), got shape {stack.shape}")
            ids = [str(i) for i in range(stack.shape[1])]
            inputs["stack"] = args.stack
        else:
            raise ConfigError("dropout detector needs --stack or --manifest")
        if per_item_stacks is not None:
            scores = np.array([
                detectors.dropout_variance_score(s[:, None, :],
                                                 aggregate=args.aggregate)[0]
                for s in per_item_stacks
            ])
        else:
            scores = detectors.dropout_variance_score(stack, aggregate=args.aggregate)
    elif name == "ae":
        if args.manifest is not None:
            _, ids, arrays = _read_manifest_rows(args.manifest)
            scores = []
            for i, arr in enumerate(arrays):
                if arr.ndim != 4 or arr.shape[0] != 2:
                    raise ShapeError(f"ae manifest entry {i} must be a "
                                     f"(2, H, W, C) input/reconstruction pair, "
                                     f"got shape {arr.shape}")
                scores.append(detectors.ae_recon_score(arr[0], arr[1]).mean())
            scores = np.asarray(scores)
            inputs["manifest"] = args.manifest
        elif args.inputs is not None and args.recons is not None:
            images = tensorio.read_array(args.inputs)
            recons = tensorio.read_array(args.recons)
            if images.ndim != 4:
                raise ShapeError(f"--inputs must be (N, H, W, C), got {images.shape}")
            if images.shape != recons.shape:
                raise ShapeError(f"inputs shape {images.shape} != recons shape "
                                 f"{recons.shape}")
            ids = [str(i) for i in range(images.shape[0])]
            scores = np.array([
                detectors.ae_recon_score(img, rec).mean()
                for img, rec in zip(images, recons)
            ])
            inputs["inputs"] = args.inputs
            inputs["recons"] = args.recons
        else:
            raise ConfigError("ae detector needs --inputs and --recons, or --manifest")
    else:
        if args.manifest is not None:
            _, ids, arrays = _read_manifest_rows(args.manifest)
            test_rows = _stack_rows(arrays, "manifest")
            inputs["manifest"] = args.manifest
        elif args.logits is not None or args.probs is not None:
            source = args.logits if args.logits is not None else args.probs
            test_rows = tensorio.read_array(source)
            if test_rows.ndim != 2:
                raise ShapeError(f"{source}: expected an (N, C) matrix, got shape "
                                 f"{test_rows.shape}")
            ids = [str(i) for i in range(test_rows.shape[0])]
            inputs["logits" if args.logits is not None else "probs"] = source
        else:
            raise ConfigError(f"{name} detector needs --logits, --probs or --manifest")
        scores = _score_rows(args, test_rows)

    for extra in ("fit", "matrix", "templates"):
        if getattr(args, extra, None) is not None:
            inputs[extra] = getattr(args, extra)

    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".csv":
        tensorio.write_scores_csv(out, ids, scores)
    else:
        tensorio.write_array(out, np.asarray(scores, dtype=np.float64))
    sidecar = {
        "version": REPORT_VERSION,
        "command": "score",
        "detector": name,
        "params": _detector_params(args),
        "seed": args.seed,
        "inputs": {key: {"path": str(path), "sha256": _sha256(path)}
                   for key, path in inputs.items()},
        "n_items": int(len(ids)),
    }
    if not args.no_timestamp:
        sidecar["created_at"] = _utc_now()
    _write_json(str(out) + ".meta.json", sidecar)
    return 0


def _detector_params(args) -> dict:
    params = {}
    for key in ("t", "k", "n_trees", "subsample", "mode", "bg_class", "feature",
                "aggregate", "prob_mode"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    return params


def _cmd_score_seg(args) -> int:
    name = args.detector
    if name not in SEG_DETECTORS:
        raise ConfigError(f"--seg supports {SEG_DETECTORS}, not {name!r}")
    if name == "ae":
        if args.inputs is None or args.recons is None:
            raise ConfigError("seg ae scoring needs --inputs and --recons")
        image = tensorio.read_array(args.inputs)
        recon = tensorio.read_array(args.recons)
        score_map = detectors.ae_recon_score(image, recon)
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        tensorio.write_array(out, score_map)
        return 0
    if args.manifest is not None:
        manifest, ids, arrays = _read_manifest_rows(args.manifest)
        if args.out_dir is None:
            raise ConfigError("seg manifest scoring needs --out-dir")
        out_dir = Path(args.out_dir)
        maps = []
        for i, arr in enumerate(arrays):
            if arr.ndim != 3:
                raise ShapeError(f"seg manifest entry {i} must be (H, W, C) logits, "
                                 f"got shape {arr.shape}")
            maps.append(detectors.seg_scores(arr, name,
                                             background_class=args.bg_class))
        out_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        for entry, score_map in zip(manifest.entries, maps):
            map_path = out_dir / f"{entry.id}.npy"
            tensorio.write_array(map_path, score_map)
            entries.append((entry.id, map_path.name,
                            entry.mask_path and os.path.relpath(entry.mask_path,
                                                                out_dir)))
        tensorio.save_manifest(out_dir / "manifest.json", entries,
                               metadata={"detector": name})
        return 0
    if args.logit_map is None:
        raise ConfigError("seg scoring needs --logit-map or --manifest")
    logit_map = tensorio.read_array(args.logit_map)
    score_map = detectors.seg_scores(logit_map, name, background_class=args.bg_class)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensorio.write_array(out, score_map)
    return 0


def _report_payload(report: metrics.EvalReport, no_timestamp: bool) -> dict:
    payload = {
        "version": REPORT_VERSION,
        "auroc": report.auroc,
        "aupr": report.aupr,
        "fpr95": report.fpr_at_recall,
        "recall_level": report.recall_level,
        "n_pos": report.n_pos,
        "n_neg": report.n_neg,
        "n_images": report.n_images,
        "skipped_images": report.skipped_images,
    }
    if not no_timestamp:
        payload["created_at"] = _utc_now()
    return payload


def cmd_eval(args) -> int:
    score_ids, scores = _load_scores_file(args.scores)
    label_ids, labels = _load_labels_file(args.labels)
    scores, labels = _align(score_ids, scores, label_ids, labels)
    report = metrics.evaluate(scores, labels, recall_level=args.recall)
    payload = _report_payload(report, args.no_timestamp)
    _write_json(args.output, payload)
    if args.curves:
        thresholds, fpr, tpr, precision, recall = metrics.detection_curves(scores,
                                                                           labels)
        _write_curve(f"{args.curves}.roc.csv", ["threshold", "fpr", "tpr"],
                     [thresholds, fpr, tpr])
        _write_curve(f"{args.curves}.pr.csv", ["threshold", "recall", "precision"],
                     [thresholds, recall, precision])
    return 0


def _write_curve(path, header, columns) -> None:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([format(v, ".9g") for v in row])


def cmd_seg_eval(args) -> int:
    manifest = tensorio.load_manifest(args.manifest)
    if len(manifest) == 0:
        raise ConfigError(f"{args.manifest}: manifest has no entries")
    ids, items = [], []
    for entry in manifest.entries:
        if entry.mask_path is None:
            raise ConfigError(f"entry {entry.id!r} has no mask_path")
        score_map = tensorio.read_array(entry.logits_path)
        mask = tensorio.read_array(entry.mask_path)
        if score_map.ndim != 2 or mask.ndim != 2:
            raise ShapeError(f"entry {entry.id!r}: score map and mask must be 2-D")
        if score_map.shape != mask.shape:
            raise ShapeError(f"entry {entry.id!r}: score map shape {score_map.shape} "
                             f"!= mask shape {mask.shape}")
        ids.append(entry.id)
        items.append((score_map, mask))
    report = metrics.seg_evaluate(items, ids=ids, recall_level=args.recall,
                                  threads=_thread_count(args.threads))
    _write_json(args.output, _report_payload(report, args.no_timestamp))
    return 0


def cmd_typicality(args) -> int:
    source = args.logits if args.logits is not None else args.probs
    if source is None:
        raise ConfigError("typicality build needs --logits or --probs")
    rows = tensorio.read_array(source)
    if args.probs is not None:
        probs = detectors.ProbMatrix(rows, args.prob_mode or "sigmoid")
    else:
        probs = detectors.sigmoid(rows)
    matrix = detectors.typicality_build(probs, threshold=args.t)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensorio.write_array(out, matrix.rows)
    sidecar = {
        "version": REPORT_VERSION,
        "kind": "typicality_matrix",
        "n_classes": matrix.n_classes,
        "threshold": matrix.threshold_build,
        "inputs": {"source": {"path": str(source), "sha256": _sha256(source)}},
    }
    if not args.no_timestamp:
        sidecar["created_at"] = _utc_now()
    _write_json(str(out) + ".json", sidecar)
    return 0


def cmd_calibrate(args) -> int:
    _, confidences = _load_scores_file(args.confidences)
    _, correct = _load_labels_file(args.correct)
    error = metrics.l2_calibration_error(confidences, correct, bins=args.bins)
    payload = {
        "version": REPORT_VERSION,
        "l2_calibration_error": error,
        "n_bins": args.bins,
        "n_items": int(len(confidences)),
    }
    if not args.no_timestamp:
        payload["created_at"] = _utc_now()
    _write_json(args.output, payload)
    return 0


def cmd_aurra(args) -> int:
    _, confidences = _load_scores_file(args.confidences)
    _, correct = _load_labels_file(args.correct)
    curve = metrics.rra_curve(confidences, correct)
    payload = {
        "version": REPORT_VERSION,
        "aurra": metrics.aurra(curve),
        "accuracy_at_full_response": float(curve.accuracies[-1]),
        "n_items": int(len(confidences)),
    }
    if not args.no_timestamp:
        payload["created_at"] = _utc_now()
    _write_json(args.output, payload)
    if args.curve:
        _write_curve(args.curve, ["response_rate", "accuracy"],
                     [curve.response_rates, curve.accuracies])
    return 0


def cmd_augment(args) -> int:
    rates = {}
    for flag, key in (("dropout_rate", "dropout_rate"),
                      ("zero_rate", "zero_weight_rate"),
                      ("negate_rate", "negate_weight_rate"),
                      ("signal_negate_rate", "signal_negate_rate"),
                      ("scale_low", "scale_low"),
                      ("scale_high", "scale_high")):
        value = getattr(args, flag)
        if value is not None:
            rates[key] = value
    report = deepaugment.augment_directory(
        args.in_dir, args.out_dir, seed=args.seed, refresh_prob=args.refresh_prob,
        weights=args.weights, rates=rates or None,
    )
    if not args.no_timestamp:
        report["created_at"] = _utc_now()
    report_path = args.report or (Path(args.out_dir) / "augment_report.json")
    _write_json(report_path, report)
    return 0


def _add_no_timestamp(parser) -> None:
    parser.add_argument("--no-timestamp", action="store_true",
                        help="omit created_at so reruns are byte-identical")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodeval",
        description="Score, evaluate and augment from precomputed model outputs.",
    )
    parser.add_argument("--version", action="version", version=f"oodeval {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="turn model outputs into anomaly scores")
    p.add_argument("--detector", required=True, choices=DETECTOR_NAMES)
    p.add_argument("--logits", help="NPY of (N, C) raw logits")
    p.add_argument("--probs", help="NPY of (N, C) probabilities")
    p.add_argument("--prob-mode", choices=("softmax", "sigmoid"),
                   help="how --probs was produced")
    p.add_argument("--stack", help="NPY of (K, N, C) stochastic prediction stack")
    p.add_argument("--inputs", help="NPY of (N, H, W, C) images (ae)")
    p.add_argument("--recons", help="NPY of (N, H, W, C) reconstructions (ae)")
    p.add_argument("--manifest", help="JSON manifest of per-item arrays")
    p.add_argument("--fit", help="NPY of validation outputs (kl/typicality/iforest/lof)")
    p.add_argument("--matrix", help="prebuilt typicality matrix NPY")
    p.add_argument("--templates", help="prebuilt kl templates NPY")
    p.add_argument("--save-templates", help="also persist the fitted kl templates")
    p.add_argument("--t", type=float, default=None,
                   help="typicality threshold (default 0.5 at build)")
    p.add_argument("--k", type=int, default=20, help="LOF neighbor count")
    p.add_argument("--n-trees", type=int, default=100, help="isolation forest size")
    p.add_argument("--subsample", type=int, default=None,
                   help="isolation forest subsample (default min(256, N))")
    p.add_argument("--mode", choices=("standard", "paper-literal"), default="standard",
                   help="isolation forest scoring mode")
    p.add_argument("--bg-class", type=int, default=None,
                   help="background class index")
    p.add_argument("--feature", choices=("maxlogit", "raw"), default="maxlogit",
                   help="feature map for iforest/lof inputs")
    p.add_argument("--aggregate", choices=("mean", "max"), default="mean",
                   help="dropout variance aggregation over classes")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--save-model", help="also persist the fitted iforest/lof model")
    p.add_argument("--seg", action="store_true",
                   help="emit per-pixel score maps instead of per-item scores")
    p.add_argument("--logit-map", help="NPY of (H, W, C) logits (with --seg)")
    p.add_argument("--out-dir", help="directory for per-entry maps (seg manifest)")
    p.add_argument("-o", "--output", default="scores.csv",
                   help="scores file (.csv with ids, .npy without)")
    _add_no_timestamp(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC/AUPR/FPR report from scores and labels")
    p.add_argument("--scores", required=True, help="CSV (id,score) or NPY vector")
    p.add_argument("--labels", required=True, help="CSV (id,label) or NPY vector")
    p.add_argument("--recall", type=float, default=metrics.DEFAULT_RECALL_LEVEL)
    p.add_argument("--curves", help="prefix for ROC/PR sweep CSV dumps")
    p.add_argument("-o", "--output", default="report.json")
    _add_no_timestamp(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("seg-eval", help="per-image averaged metrics for score maps")
    p.add_argument("--manifest", required=True,
                   help="manifest whose entries point at score maps and masks")
    p.add_argument("--recall", type=float, default=metrics.DEFAULT_RECALL_LEVEL)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("-o", "--output", default="report.json")
    _add_no_timestamp(p)
    p.set_defaults(func=cmd_seg_eval)

    p = sub.add_parser("typicality", help="build and persist a typicality matrix")
    p.add_argument("--logits", help="NPY of (N, C) validation logits")
    p.add_argument("--probs", help="NPY of (N, C) sigmoid probabilities")
    p.add_argument("--prob-mode", choices=("softmax", "sigmoid"), default=None)
    p.add_argument("--t", type=float, default=0.5, help="build threshold")
    p.add_argument("-o", "--output", default="typicality.npy")
    _add_no_timestamp(p)
    p.set_defaults(func=cmd_typicality)

    p = sub.add_parser("calibrate", help="binned L2 calibration error")
    p.add_argument("--confidences", required=True)
    p.add_argument("--correct", required=True)
    p.add_argument("--bins", type=int, default=metrics.DEFAULT_CALIBRATION_BINS)
    p.add_argument("-o", "--output", default="calibration.json")
    _add_no_timestamp(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("aurra", help="response-rate accuracy curve and its area")
    p.add_argument("--confidences", required=True)
    p.add_argument("--correct", required=True)
    p.add_argument("--curve", help="CSV dump of the curve")
    p.add_argument("-o", "--output", default="aurra.json")
    _add_no_timestamp(p)
    p.set_defaults(func=cmd_aurra)

    p = sub.add_parser("augment", help="distorted-network image augmentation")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of PNGs")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--refresh-prob", type=float, default=0.05,
                   help="chance to resample the distorted network per image")
    p.add_argument("--weights", default="random",
                   help="identity | random | path to a weight bundle")
    p.add_argument("--dropout-rate", type=float, default=None)
    p.add_argument("--zero-rate", type=float, default=None)
    p.add_argument("--negate-rate", type=float, default=None)
    p.add_argument("--signal-negate-rate", type=float, default=None)
    p.add_argument("--scale-low", type=float, default=None)
    p.add_argument("--scale-high", type=float, default=None)
    p.add_argument("--report", help="run report path (default OUT/augment_report.json)")
    _add_no_timestamp(p)
    p.set_defaults(func=cmd_augment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OodevalError, IndexError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
