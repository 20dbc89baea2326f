"""Command-line entry point: ``python -m cpn <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 numerical failure (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import CheckpointError, load_params, save_params
from .data import DatasetFormatError, LabeledImage, SynthConfig, generate, load_dataset, save_dataset, write_pgm
from .data.store import image_stem, list_stems, read_annotation, read_pgm
from .efd import DegeneratePolygonError, FourierDescriptor, canonicalize, fit_descriptor, sample_contour, uniform_ts
from .geometry import iou_mask_matrix, rasterize
from .metrics import evaluate, report
from .model import CpnConfig, TrainConfig, TrainingDiverged, evaluate_model, init_params, predict, train
from .model.training import write_history_csv

log = logging.getLogger("cpn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PATH_KEYS = ("data", "out", "checkpoint", "predictions")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a command needs, loaded from one JSON document.

    Top-level sections are ``model`` (CpnConfig, including the loss weights
    ``lam`` and ``beta``), ``synth`` (SynthConfig), ``train`` (TrainConfig)
    and ``paths``.
    """

    model: CpnConfig = field(default_factory=CpnConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    paths: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ValueError("config must be a JSON object")
        unknown = set(obj) - {"model", "synth", "train", "paths"}
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        paths = dict(obj.get("paths", {}))
        bad = set(paths) - set(PATH_KEYS)
        if bad:
            raise ValueError(f"unknown path keys {sorted(bad)}")
        return cls(
            model=CpnConfig.from_dict(obj.get("model", {})),
            synth=SynthConfig.from_dict(obj.get("synth", {})),
            train=TrainConfig.from_dict(obj.get("train", {})),
            paths=paths,
        )

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "synth": self.synth.to_dict(), "train": self.train.to_dict(),
                "paths": dict(self.paths)}

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# flag dest -> (section, key); flags override values from the config file
OVERRIDES = {
    "count": ("synth", "count"),
    "synth_seed": ("synth", "seed"),
    "order": ("model", "order"),
    "iterations": ("model", "refine_iterations"),
    "score_threshold": ("model", "score_threshold"),
    "epochs": ("train", "epochs"),
    "learning_rate": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "seed": ("train", "seed"),
    "data": ("paths", "data"),
    "out": ("paths", "out"),
    "checkpoint": ("paths", "checkpoint"),
    "predictions": ("paths", "predictions"),
}


def load_run_config(args) -> RunConfig:
    raw: dict = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file {path} not found")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: byte {exc.pos}: {exc.msg}") from None
    raw = {k: dict(v) if isinstance(v, dict) else v for k, v in raw.items()}
    for dest, (section, key) in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            raw.setdefault(section, {})[key] = str(value) if section == "paths" else value
    try:
        return RunConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def require(run: RunConfig, key: str, kind: str = "any") -> Path:
    value = run.paths.get(key)
    if not value:
        raise UsageError(f"missing --{key} (or paths.{key} in the config)")
    path = Path(value)
    if kind == "dir" and not path.is_dir():
        raise DataError(f"{key} directory {path} does not exist")
    if kind == "file" and not path.is_file():
        raise DataError(f"{key} file {path} does not exist")
    return path


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def load_model(run: RunConfig) -> dict[str, ad.Tensor]:
    """Parameters from the configured checkpoint, checked against the model config."""
    raw = load_params(require(run, "checkpoint", "file"))
    expect = init_params(run.model)
    if set(raw) != set(expect) or any(raw[k].shape != expect[k].shape for k in expect):
        raise DataError("checkpoint does not match the model configuration")
    return {k: ad.Tensor(raw[k], requires_grad=True) for k in expect}


# ---------------------------------------------------------------------------
# commands


def cmd_synth_gen(args) -> int:
    run = load_run_config(args)
    out = require(run, "out")
    images = generate(run.synth)
    save_dataset(images, out)
    summary = {"images": len(images), "instances": sum(len(i.instances) for i in images), "out": str(out),
               "config_hash": run.digest()}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_efd_fit(args) -> int:
    ann = read_annotation(args.annotation)
    descs = []
    for k, poly in enumerate(ann["instances"]):
        try:
            descs.append(fit_descriptor(canonicalize(poly), args.order).to_dict())
        except DegeneratePolygonError as exc:
            raise DataError(f"{args.annotation}: instance {k}: {exc}") from None
    result = {"descriptors": descs}
    if args.out:
        write_json(Path(args.out), result)
    else:
        print(json.dumps(result))
    return EXIT_OK


def _read_descriptors(path: Path) -> list[FourierDescriptor]:
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.pos, exc.msg) from None
    items = obj["descriptors"] if isinstance(obj, dict) and "descriptors" in obj else [obj]
    try:
        return [FourierDescriptor.from_dict(d) for d in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(path, 0, f"bad descriptor: {exc}") from None


def cmd_efd_render(args) -> int:
    path = Path(args.descriptor)
    if not path.is_file():
        raise DataError(f"descriptor file {path} does not exist")
    mask = np.zeros((args.height, args.width), dtype=bool)
    for desc in _read_descriptors(path):
        mask |= rasterize(sample_contour(desc, uniform_ts(args.samples)), args.height, args.width)
    write_pgm(args.out, mask.astype(np.float64))
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args)
    data = require(run, "data", "dir")
    out = require(run, "out")
    params = load_model(run) if run.paths.get("checkpoint") else None
    dataset = load_dataset(data)
    if not dataset:
        raise DataError(f"no images in {data}")
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "run.json", {"config": run.to_dict(), "config_hash": run.digest()})
    result = train(dataset, run.model, run.train, checkpoint_dir=out / "checkpoints", params=params)
    save_params(out / "model.cpnw", result.params)
    write_history_csv(out / "history.csv", result.history)
    last = result.history[-1]["loss"] if result.history else None
    print(json.dumps({"epochs": len(result.history), "final_loss": last, "out": str(out),
                      "config_hash": run.digest()}))
    return EXIT_OK


def _prediction_masks(pred_dir: Path, stem: str, height: int, width: int) -> list[np.ndarray]:
    path = pred_dir / f"{stem}.json"
    if not path.is_file():
        raise DataError(f"no predictions for {stem} in {pred_dir}")
    try:
        obj = json.loads(path.read_text())
        contours = [np.asarray(d["contour"], dtype=np.float64).reshape(-1, 2) for d in obj["detections"]]
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.pos, exc.msg) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(path, 0, f"bad detection file: {exc}") from None
    return [rasterize(c, height, width) for c in contours]


def cmd_eval(args) -> int:
    run = load_run_config(args)
    data = require(run, "data", "dir")
    dataset = load_dataset(data)
    if run.paths.get("predictions"):
        pred_dir = require(run, "predictions", "dir")
        tables = []
        for stem, img in zip(list_stems(data), dataset):
            preds = _prediction_masks(pred_dir, stem, img.height, img.width)
            tables.append(iou_mask_matrix(preds, img.masks()))
        results = evaluate(tables)
        source = {"predictions": str(pred_dir)}
    else:
        params = load_model(run)
        results = evaluate_model(params, dataset, run.model)
        source = {"checkpoint": run.paths["checkpoint"], "refine_iterations": run.model.refine_iterations}
    out = {**report(results), "images": len(dataset), **source, "config_hash": run.digest()}
    if run.paths.get("out"):
        write_json(Path(run.paths["out"]), out)
    print(json.dumps({"f1_avg": out.get("f1_avg"), "f1_0.50": out["thresholds"]["0.50"]["f1"]}))
    return EXIT_OK


def _overlay(pixels: np.ndarray, contours) -> np.ndarray:
    img = np.array(pixels, dtype=np.float64)
    H, W = img.shape
    for c in contours:
        closed = np.vstack([c, c[:1]])
        # dense linear interpolation between consecutive contour points
        steps = np.linspace(0.0, 1.0, 8, endpoint=False)
        seg = closed[:-1, None, :] + steps[None, :, None] * np.diff(closed, axis=0)[:, None, :]
        pts = np.rint(seg.reshape(-1, 2) - 0.5).astype(int)
        ok = (pts[:, 0] >= 0) & (pts[:, 0] < W) & (pts[:, 1] >= 0) & (pts[:, 1] < H)
        img[pts[ok, 1], pts[ok, 0]] = 1.0
    return img


def cmd_infer(args) -> int:
    run = load_run_config(args)
    out = require(run, "out")
    if args.image:
        paths = [Path(p) for p in args.image]
        for p in paths:
            if not p.is_file():
                raise DataError(f"image {p} does not exist")
        stems = [p.stem for p in paths]
        images = [read_pgm(p) for p in paths]
    else:
        data = require(run, "data", "dir")
        stems = list_stems(data)
        images = [img.pixels for img in load_dataset(data)]
    params = load_model(run)
    if len({im.shape for im in images}) > 1:
        raise DataError("all images in one run must share a size")
    out.mkdir(parents=True, exist_ok=True)
    dets = predict(params, np.stack(images), run.model) if images else []
    for stem, img, found in zip(stems, images, dets):
        write_json(out / f"{stem}.json", {"detections": [d.to_dict() for d in found]})
        if args.overlay:
            write_pgm(out / f"{stem}_overlay.pgm", _overlay(img, [d.contour for d in found]))
    write_json(out / "run.json", {"config": run.to_dict(), "config_hash": run.digest()})
    print(json.dumps({"images": len(images), "detections": sum(len(d) for d in dets), "out": str(out)}))
    return EXIT_OK


def cmd_bench(args) -> int:
    run = load_run_config(args)
    if run.paths.get("data"):
        images = np.stack([img.pixels for img in load_dataset(require(run, "data", "dir"))])
    else:
        images = np.stack([img.pixels for img in generate(run.synth)])
    params = load_model(run) if run.paths.get("checkpoint") else init_params(run.model)
    if len(images) == 0:
        raise DataError("nothing to benchmark")
    for _ in range(args.warmup):
        predict(params, images, run.model)
    rates = []
    for _ in range(args.repeats):
        start = time.perf_counter()
        predict(params, images, run.model)
        rates.append(len(images) / (time.perf_counter() - start))
    p10, median, p90 = np.percentile(rates, [10, 50, 90])
    result = {"images": len(images), "warmup": args.warmup, "repeats": args.repeats,
              "images_per_sec": {"median": median, "p10": p10, "p90": p90}, "config_hash": run.digest()}
    if run.paths.get("out"):
        write_json(Path(run.paths["out"]), result)
    print(json.dumps(result))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import check_model, check_ops

    run = load_run_config(args)
    ops = check_ops(eps=args.eps)
    cfg = run.model if args.config else None
    model = check_model(cfg, size=args.size, eps=args.eps, seed=args.seed if args.seed is not None else 0)
    worst_ops, worst_model = max(ops.values()), max(model.values())
    for name, err in list(ops.items()) + list(model.items()):
        log.info("%-28s %.3e", name, err)
    worst = max(worst_ops, worst_model)
    print(json.dumps({"ops_max_rel_error": worst_ops, "model_max_rel_error": worst_model,
                      "max_rel_error": worst, "tolerance": args.tolerance, "passed": worst < args.tolerance}))
    if not worst < args.tolerance:
        raise NumericalError(f"gradient check failed: max relative error {worst:.3e} >= {args.tolerance}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpn", description="Toy contour proposal network tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, *flags):
        p.add_argument("--config", help="run configuration JSON")
        for flag in flags:
            FLAGS[flag](p)
        return p

    FLAGS = {
        "count": lambda p: p.add_argument("--count", type=int),
        "synth_seed": lambda p: p.add_argument("--synth-seed", type=int, dest="synth_seed"),
        "order": lambda p: p.add_argument("--order", type=int),
        "iterations": lambda p: p.add_argument("--iterations", type=int, help="refinement iterations r"),
        "score_threshold": lambda p: p.add_argument("--score-threshold", type=float),
        "epochs": lambda p: p.add_argument("--epochs", type=int),
        "learning_rate": lambda p: p.add_argument("--learning-rate", type=float),
        "batch_size": lambda p: p.add_argument("--batch-size", type=int),
        "seed": lambda p: p.add_argument("--seed", type=int),
        "data": lambda p: p.add_argument("--data", help="dataset directory"),
        "out": lambda p: p.add_argument("--out"),
        "checkpoint": lambda p: p.add_argument("--checkpoint", help="CPNW parameter file"),
        "predictions": lambda p: p.add_argument("--predictions", help="directory of detection JSON files"),
    }

    p = common(sub.add_parser("synth-gen", help="write a synthetic dataset"), "count", "synth_seed", "out")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("efd-fit", help="fit descriptors to the polygons of an annotation file")
    p.add_argument("annotation")
    p.add_argument("--order", type=int, default=CpnConfig().order)
    p.add_argument("--out")
    p.set_defaults(func=cmd_efd_fit)

    p = sub.add_parser("efd-render", help="rasterise descriptor JSON to a PGM mask")
    p.add_argument("descriptor")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_efd_render)

    p = common(sub.add_parser("train", help="train and write checkpoints plus history.csv"),
               "data", "out", "checkpoint", "order", "iterations", "epochs", "learning_rate", "batch_size", "seed")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="F1 report for a checkpoint or a directory of predictions"),
               "data", "out", "checkpoint", "predictions", "order", "iterations", "score_threshold")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("infer", help="write detection JSON per image"),
               "data", "out", "checkpoint", "order", "iterations", "score_threshold")
    p.add_argument("--image", nargs="+", help="PGM files instead of a dataset directory")
    p.add_argument("--overlay", action="store_true", help="also write contour overlays")
    p.set_defaults(func=cmd_infer)

    p = common(sub.add_parser("bench", help="inference throughput over repeated passes"),
               "data", "out", "checkpoint", "order", "iterations", "count")
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("gradcheck", help="finite-difference check of every op and the full loss"), "seed")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "warmup", 0) < 0 or getattr(args, "repeats", 1) < 1:
            raise UsageError("bench needs --warmup >= 0 and --repeats >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DatasetFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
