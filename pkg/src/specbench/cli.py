"""``specbench`` command line: synthesis, capture simulation, training,
classification, evaluation and calibration, all writing plain files."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .calibration import mtf_experiment, run_calibration
from .evaluate import (
    UNKNOWN_LABEL,
    classify_pixels,
    confusion_and_accuracy,
    full_scan_then_project,
    normalize_features,
    roc_curve,
    sweep_filter_count,
)
from .exceptions import ValidationError
from .filters import SpectralFilterBank, load_bank_csv, save_bank_csv
from .hsi import LabelMap, WavelengthGrid, resample_cube, synthesize_mixed_scene
from .io import (
    import_raw_bsq,
    import_raw_labels,
    load_cube,
    load_labels,
    load_planes,
    read_kv,
    read_pbm,
    save_cube,
    save_labels,
    save_planes,
    write_kv,
    write_pbm,
    write_pgm,
)
from .learn import (
    FilterMLPClassifier,
    MatchedFilterClassifier,
    OneVsAllSVM,
    extract_filters,
    load_model,
    save_model,
    split_dataset,
    sum_normalize,
    svm_hyperparameter_search,
)
from .library import random_abundances, surrogate_library, synthetic_scene
from .optics import (
    MeasurementSet,
    NoiseModel,
    acquire_measurements,
    build_aperture_model,
    identity_aperture,
    measurement_plan,
)
from .slm import encode_filter_to_slm

__all__ = ["RunConfig", "main", "build_parser"]

THREADS_ENV = "SPECBENCH_THREADS"


@dataclasses.dataclass
class RunConfig:
    """Every tunable of a run. Read from ``key=value`` files and overridden
    by command-line flags of the same name."""

    lambda_min: float = 600.0
    lambda_max: float = 900.0
    bands: int = 100
    aperture: str = "identity"
    focal_length_mm: float = 100.0
    groove_density: float = 300.0
    noise_photons: float = 0.0
    read_sigma: float = 0.0
    seed: int = 0
    slm_rows: int = 1080
    dc_rows: int = 16
    classes: int = 5
    size: str = "64x64"
    variability: float = 0.1
    spectral_noise: float = 0.01
    q: int = 5
    hidden: str = "64,32,16"
    dropout: float = 0.1
    lr: float = 1e-3
    epochs: int = 60
    batch_size: int = 256
    optimizer: str = "adam"
    reg: float = -1.0
    reg_grid: str = "1,0.1,0.01,0.001,0.0001,0.00001"
    folds: int = 3
    svm_epochs: int = 50
    fractions: str = "0.2,0.05,0.75"
    floor_rel: float = 1e-6
    nsr: float = 1e-3
    threads: int = 0

    @classmethod
    def load(cls, path=None, overrides=None) -> "RunConfig":
        values = {}
        if path is not None:
            values.update(read_kv(path))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(fields)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        kwargs = {}
        for key, raw in values.items():
            typ = type(fields[key].default)
            try:
                kwargs[key] = typ(raw) if typ is not int else int(float(raw))
            except ValueError as exc:
                raise ValidationError(f"config {key}={raw!r}: expected {typ.__name__}") from exc
        return cls(**kwargs)

    @property
    def grid(self) -> WavelengthGrid:
        return WavelengthGrid(self.lambda_min, self.lambda_max, self.bands)

    def shape(self):
        return parse_size(self.size)

    def hidden_layers(self):
        return tuple(int(h) for h in self.hidden.split(",") if h.strip())

    def split_fractions(self):
        return parse_floats(self.fractions, 3, "fractions")

    def noise(self):
        if self.noise_photons <= 0:
            return None
        return NoiseModel(self.noise_photons, self.read_sigma, self.seed)


def parse_size(text):
    try:
        h, w = (int(v) for v in str(text).lower().split("x"))
    except ValueError as exc:
        raise ValidationError(f"size must look like HxW, got {text!r}") from exc
    if h < 1 or w < 1:
        raise ValidationError(f"size must be positive, got {text!r}")
    return h, w


def parse_floats(text, count=None, what="list"):
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise ValidationError(f"{what}: expected comma-separated numbers, got {text!r}") from exc
    if count is not None and len(vals) != count:
        raise ValidationError(f"{what}: expected {count} values, got {len(vals)}")
    return vals


# --------------------------------------------------------------------------
# helpers


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, command: str, cfg: RunConfig, args) -> None:
    resolved = {"command": command, "version": __version__}
    resolved.update(dataclasses.asdict(cfg))
    for key, value in sorted(vars(args).items()):
        if key in resolved or key in ("func", "config") or value is None:
            continue
        resolved[f"arg.{key}"] = value
    write_kv(out / f"{command.replace(' ', '_')}_config.txt", resolved)


def _require(path, what):
    if path is None:
        raise ValidationError(f"missing --{what}")
    if not Path(path).is_file():
        raise ValidationError(f"{what} file not found: {path}")
    return path


def _aperture(cfg: RunConfig, grid):
    if cfg.aperture == "identity":
        return identity_aperture(grid)
    mask = None if cfg.aperture == "default" else read_pbm(_require(cfg.aperture, "aperture"))
    return build_aperture_model(mask, cfg.focal_length_mm, cfg.groove_density, grid)


def _labelled_spectra(args, cfg):
    cube = load_cube(_require(args.data, "data"))
    labels, unknown = load_labels(_require(args.labels, "labels"), return_unknown=True)
    if labels.labels.shape != cube.data.shape[:2]:
        raise ValidationError("cube and label map sizes differ")
    keep = ~unknown.ravel()
    for cls in args.ignore_class or ():
        keep &= labels.labels.ravel() != cls
    X = cube.pixels()[keep].astype(float)
    y = labels.labels.ravel()[keep]
    positive = X.sum(axis=1) > 0
    X, y = X[positive], y[positive]
    return sum_normalize(X), y, labels, cube.grid


def _load_measurements(path):
    _, planes = load_planes(_require(path, "measurements"))
    meta_path = Path(path).with_suffix(".txt")
    meta = read_kv(meta_path) if meta_path.is_file() else {}
    ms = MeasurementSet(
        sum_image=planes[0].astype(float),
        filter_images=planes[1:].astype(float),
        images_captured=int(meta.get("images_captured", 0)),
        bank_id=meta.get("bank_id", ""),
    )
    return ms, meta


def _save_measurements(out, stem, ms: MeasurementSet, extra):
    planes = np.concatenate([ms.sum_image[None], ms.filter_images], axis=0)
    save_planes(planes, np.arange(planes.shape[0]), out / f"{stem}.hsc")
    meta = {
        "planes": "sum," + ",".join(f"filter{k}" for k in range(ms.n_filters)),
        "bank_id": ms.bank_id,
        "images_captured": ms.images_captured,
        "plan": ",".join(ms.plan),
    }
    if ms.gains is not None:
        meta["gains"] = list(ms.gains)
    if ms.noise is not None:
        meta.update(noise_photons=ms.noise.peak_photons, read_sigma=ms.noise.read_sigma, seed=ms.noise.seed)
    else:
        meta["noise"] = "none"
    meta.update(extra)
    write_kv(out / f"{stem}.txt", meta)
    write_pgm(ms.sum_image, out / f"{stem}_sum.pgm")


# --------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg):
    out = _out(args)
    grid = cfg.grid
    shape = cfg.shape()
    lib = surrogate_library(grid, cfg.classes, cfg.seed)
    names = tuple(f"material_{i}" for i in range(cfg.classes))
    if args.mixed:
        ab = random_abundances(shape, cfg.classes, cfg.seed)
        cube = synthesize_mixed_scene(ab, lib)
        labels = LabelMap(np.argmax(ab.abundances, axis=2), names)
        save_planes(np.moveaxis(ab.abundances, 2, 0), np.arange(cfg.classes), out / "abundances.hsc")
    else:
        cube, labels = synthetic_scene(shape, lib, cfg.seed, cfg.variability, cfg.spectral_noise)
    save_cube(cube, out / "scene.hsc")
    save_labels(labels, out / "labels.lbl")
    write_pgm(np.asarray(cube.data).sum(axis=2), out / "scene_preview.pgm")
    with open(out / "library.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["wavelength_nm", *names])
        for i, lam in enumerate(grid.centers):
            wr.writerow([f"{lam:.6g}", *(f"{s.values[i]:.9g}" for s in lib)])
    print(f"wrote {shape[0]}x{shape[1]}x{grid.bands} scene with {cfg.classes} classes to {out}")


def cmd_import_raw(args, cfg):
    out = _out(args)
    cube = import_raw_bsq(_require(args.raw_bsq, "raw-bsq"), args.width, args.height, args.bands,
                          args.dtype, args.wl_min, args.wl_max)
    if args.resample:
        cube = resample_cube(cube, cfg.grid)
    save_cube(cube, out / "cube.hsc")
    msg = f"imported {cube.width}x{cube.height}x{cube.grid.bands} cube"
    if args.labels_raw:
        labels = import_raw_labels(args.labels_raw, args.width, args.height, args.labels_dtype)
        save_labels(labels, out / "labels.lbl")
        msg += f" and {labels.n_classes}-class labels"
    print(msg + f" to {out}")


def _make_trainer(kind, cfg, n_classes):
    if kind == "mlp":
        return FilterMLPClassifier(
            n_filters=cfg.q, hidden=cfg.hidden_layers(), dropout=cfg.dropout, learning_rate=cfg.lr,
            epochs=cfg.epochs, batch_size=cfg.batch_size, optimizer=cfg.optimizer, seed=cfg.seed,
        )
    if kind == "matched":
        if n_classes != 2:
            raise ValidationError("matched filtering needs exactly two classes")
        return MatchedFilterClassifier()
    return OneVsAllSVM(reg=cfg.reg, epochs=cfg.svm_epochs, seed=cfg.seed)


def cmd_train(args, cfg):
    out = _out(args)
    X, y, labels, grid = _labelled_spectra(args, cfg)
    data = split_dataset(X, y, cfg.split_fractions(), cfg.seed)
    classes = np.unique(y)
    report = {"kind": args.kind, "classes": classes.size, "train_samples": data.train[0].shape[0]}
    if args.kind == "svm" and cfg.reg < 0:
        reg, model = svm_hyperparameter_search(*data.train, parse_floats(cfg.reg_grid, what="reg_grid"),
                                               cfg.folds, cfg.seed, epochs=cfg.svm_epochs)
        report["reg_selected_by_cv"] = reg
    else:
        model = _make_trainer(args.kind, cfg, classes.size)
        if args.kind == "mlp":
            model.fit(*data.train, *data.val) if data.val[0].shape[0] else model.fit(*data.train)
            report["best_epoch"] = model.best_epoch_
        else:
            model.fit(*data.train)
    for part in ("train", "val", "test"):
        Xp, yp = data.part(part)
        if Xp.shape[0]:
            report[f"{part}_accuracy"] = float(model.score(Xp, yp))
    bank = extract_filters(model)
    save_model(model, out / "model.sbm", {"seed": cfg.seed, "bands": grid.bands})
    save_bank_csv(bank, out / "bank.csv", grid.centers)
    report["filters"] = bank.n_filters
    report["images_per_frame"] = len(measurement_plan(bank, cfg.dc_rows))
    write_kv(out / "train_report.txt", report)
    print(f"trained {args.kind}: {bank.n_filters} filters, "
          + ", ".join(f"{k}={v:.4f}" for k, v in report.items() if k.endswith("accuracy")))


def cmd_extract(args, cfg):
    out = _out(args)
    model = load_model(_require(args.model, "model"))
    bank = extract_filters(model)
    save_bank_csv(bank, out / "bank.csv")
    print(f"extracted {bank.n_filters} filters ({bank.source}) to {out / 'bank.csv'}")


def cmd_plan(args, cfg):
    out = _out(args)
    if args.bank:
        bank = load_bank_csv(_require(args.bank, "bank"))
    elif args.q_plan:
        # any signed bank of this size has the same plan
        bank = SpectralFilterBank(np.tile([1.0, -1.0], (args.q_plan, 1)))
    else:
        bank = None
    dc = 0 if cfg.slm_rows == 0 else cfg.dc_rows
    plan = measurement_plan(bank, dc)
    write_kv(out / "plan.txt", {"filters": 0 if bank is None else bank.n_filters,
                                "images_captured": len(plan), "captures": plan})
    if args.patterns and bank is not None and cfg.slm_rows > 0:
        for k, d in enumerate(bank.filters):
            pair = encode_filter_to_slm(d, cfg.slm_rows, cfg.dc_rows)
            write_pbm(pair.positive, out / f"pattern_{k}_pos.pbm")
            write_pbm(pair.negative, out / f"pattern_{k}_neg.pbm")
    print(f"{len(plan)} images: {' '.join(plan)}")


def _scene_and_bank(args, cfg):
    cube = load_cube(_require(args.cube, "cube"))
    bank = load_bank_csv(_require(args.bank, "bank"))
    return cube, bank, _aperture(cfg, cube.grid)


def cmd_capture(args, cfg):
    out = _out(args)
    cube, bank, ap = _scene_and_bank(args, cfg)
    slm_rows = None if cfg.slm_rows == 0 else cfg.slm_rows
    ms = acquire_measurements(cube, ap, None, bank, cfg.noise(), slm_rows, cfg.dc_rows)
    _save_measurements(out, "measurements", ms, {"route": "optical", "slm_rows": cfg.slm_rows,
                                                 "dc_rows": cfg.dc_rows, "aperture": cfg.aperture})
    print(f"captured {ms.images_captured} images for {bank.n_filters} filters")


def cmd_scan(args, cfg):
    out = _out(args)
    cube, bank, ap = _scene_and_bank(args, cfg)
    fs = full_scan_then_project(cube, ap, None, bank, cfg.noise(), None)
    # store normalised features with a unit sum plane so classify can reuse them
    ms = MeasurementSet(
        sum_image=fs.valid.astype(float),
        filter_images=np.nan_to_num(fs.features),
        images_captured=fs.images_captured,
        bank_id=bank.bank_id,
        noise=cfg.noise(),
        plan=("scan",),
    )
    _save_measurements(out, "scan", ms, {"route": "scan", "normalized": 1, "aperture": cfg.aperture})
    print(f"scanned {fs.images_captured} band images")


def cmd_classify(args, cfg):
    out = _out(args)
    ms, meta = _load_measurements(args.measurements)
    floor = 0.5 if meta.get("normalized") == "1" else None
    fs = normalize_features(ms, floor=floor, rel_floor=cfg.floor_rel)
    if args.threshold is not None:
        sm = classify_pixels(fs, None, threshold=args.threshold)
    else:
        sm = classify_pixels(fs, load_model(_require(args.model, "model")))
    unknown = sm.labels == UNKNOWN_LABEL
    k = sm.scores.shape[-1]
    save_labels(LabelMap(np.where(unknown, 0, sm.labels), tuple(f"class_{i}" for i in range(k))),
                out / "pred.lbl", unknown_mask=unknown)
    save_planes(np.moveaxis(np.nan_to_num(sm.scores), 2, 0), np.arange(k), out / "scores.hsc")
    write_pgm(np.where(unknown, 0, sm.labels + 1), out / "pred_preview.pgm", 0, k)
    write_kv(out / "classify.txt", {"images_captured": ms.images_captured, "unknown_pixels": int(unknown.sum()),
                                    "classes": k})
    print(f"classified {sm.labels.size} pixels ({int(unknown.sum())} unknown)")


def cmd_evaluate(args, cfg):
    out = _out(args)
    pred, unknown = load_labels(_require(args.pred, "pred"), return_unknown=True)
    truth = load_labels(_require(args.truth, "truth"))
    labels = np.where(unknown, UNKNOWN_LABEL, pred.labels)
    images = {}
    if args.images_captured is not None:
        images["optical"] = args.images_captured
    report = confusion_and_accuracy(labels, truth, n_classes=max(truth.n_classes, pred.n_classes),
                                    images_captured=images)
    report.save(out)
    print(f"accuracy={report.accuracy:.4f} over {int(report.confusion.sum())} pixels")


def cmd_roc(args, cfg):
    out = _out(args)
    _, planes = load_planes(_require(args.scores, "scores"))
    truth = load_labels(_require(args.truth, "truth"))
    scores = planes[1] - planes[0] if planes.shape[0] == 2 else planes[0]
    valid = None
    if args.pred:
        _, unknown = load_labels(args.pred, return_unknown=True)
        valid = ~unknown
    fpr, tpr, thr, auc = roc_curve(scores, truth, valid)
    with open(out / "roc.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["fpr", "tpr", "threshold"])
        for row in zip(fpr, tpr, thr):
            wr.writerow([f"{v:.9g}" for v in row])
    write_kv(out / "roc.txt", {"auc": auc, "points": fpr.size})
    print(f"auc={auc:.4f}")


def cmd_sweep(args, cfg):
    out = _out(args)
    X, y, _, _ = _labelled_spectra(args, cfg)
    data = split_dataset(X, y, cfg.split_fractions(), cfg.seed)
    qs = tuple(int(v) for v in parse_floats(args.q_list, what="q"))
    res = sweep_filter_count(data, qs, args.margin, hidden=cfg.hidden_layers(), dropout=cfg.dropout,
                             learning_rate=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                             optimizer=cfg.optimizer, seed=cfg.seed)
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["q", "test_accuracy", "images_captured", "error"])
        for q, acc, err in res.rows():
            wr.writerow([q, f"{acc:.6f}", 2 * q + 1, err])
    write_kv(out / "sweep.txt", {"knee": res.knee, "margin": res.margin})
    print(f"knee at Q={res.knee}")


def cmd_calibrate(args, cfg):
    out = _out(args)
    ap = _aperture(cfg if cfg.aperture != "identity" else dataclasses.replace(cfg, aperture="default"), cfg.grid)
    report = run_calibration(ap, lasers=parse_floats(args.lasers, 2, "lasers"),
                             validation=parse_floats(args.validation, what="validation"),
                             noise_fraction=args.noise_fraction, seed=cfg.seed, nsr=cfg.nsr,
                             star_size=args.star_size)
    report.save(out)
    worst = max((abs(v) for v in report.validation.values()), default=0.0)
    print(f"slope={report.mapping.slope:.4f} nm/band intercept={report.mapping.intercept:.2f} nm "
          f"validation<= {worst:.3f} band mtf30 {report.mtf30_raw:.3f} -> {report.mtf30_deconvolved:.3f}")


def cmd_mtf(args, cfg):
    out = _out(args)
    ap = _aperture(cfg if cfg.aperture != "identity" else dataclasses.replace(cfg, aperture="default"), cfg.grid)
    psf = ap.psf(args.band)
    raw_mtf, dec_mtf, raw, dec = mtf_experiment(psf, None, cfg.nsr, args.star_size, args.spokes)
    with open(out / "mtf.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frequency_lp_per_px", "contrast_raw", "contrast_deconvolved"])
        for f, a, b in zip(raw_mtf.frequencies, raw_mtf.contrast, dec_mtf.contrast):
            wr.writerow([f"{f:.6f}", f"{a:.6f}", f"{b:.6f}"])
    write_kv(out / "mtf.txt", {"mtf30_raw": raw_mtf.mtf30, "mtf30_deconvolved": dec_mtf.mtf30})
    write_pgm(raw, out / "star_raw.pgm", 0, 1)
    write_pgm(dec, out / "star_deconvolved.pgm", 0, 1)
    print(f"mtf30 raw={raw_mtf.mtf30:.3f} deconvolved={dec_mtf.mtf30:.3f} lp/px")


# --------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--out", "-o", default=".", help="output directory")
    p.add_argument("--config", help="key=value configuration file")
    p.add_argument("--threads", type=int, help=f"worker cap (also ${THREADS_ENV})")
    p.add_argument("--seed", type=int)


def _add_grid(p):
    p.add_argument("--bands", type=int)
    p.add_argument("--lambda-min", type=float, dest="lambda_min")
    p.add_argument("--lambda-max", type=float, dest="lambda_max")


def _add_optics(p):
    p.add_argument("--aperture", help="identity, default, or a PBM mask path")
    p.add_argument("--noise-photons", type=float, dest="noise_photons", help="total peak photon budget (0 = noiseless)")
    p.add_argument("--read-sigma", type=float, dest="read_sigma")
    p.add_argument("--slm-rows", type=int, dest="slm_rows", help="0 = ideal analogue SLM")
    p.add_argument("--dc-rows", type=int, dest="dc_rows")


def _add_training(p):
    p.add_argument("--data", help="HSC1 cube")
    p.add_argument("--labels", help="LBL1 label map")
    p.add_argument("--ignore-class", type=int, action="append", dest="ignore_class")
    p.add_argument("--fractions")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--hidden")
    p.add_argument("--dropout", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--optimizer", choices=("adam", "sgd"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"specbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesise a labelled scene")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--size")
    p.add_argument("--mixed", action="store_true")
    p.add_argument("--variability", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("import-raw", help="import a band-sequential raw cube")
    _add_common(p)
    p.add_argument("--raw-bsq", dest="raw_bsq", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--dtype", choices=("f32", "u16"), default="f32")
    p.add_argument("--wl-min", type=float, dest="wl_min")
    p.add_argument("--wl-max", type=float, dest="wl_max")
    p.add_argument("--labels-raw", dest="labels_raw")
    p.add_argument("--labels-dtype", dest="labels_dtype", choices=("u8", "u16"), default="u8")
    p.add_argument("--resample", action="store_true", help="resample onto the configured grid")
    p.set_defaults(func=cmd_import_raw)

    for name, func, helptext in (("capture", cmd_capture, "simulate the optical filter captures"),
                                 ("scan", cmd_scan, "simulate band scanning plus digital projection")):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)
        _add_optics(p)
        p.add_argument("--cube", help="HSC1 scene")
        p.add_argument("--bank", help="filter bank CSV")
        p.set_defaults(func=func)

    p = sub.add_parser("train", help="learn a filter bank")
    p.add_argument("kind", choices=("svm", "mlp", "matched"))
    _add_common(p)
    _add_training(p)
    p.add_argument("--q", type=int)
    p.add_argument("--reg", type=float, help="SVM regularisation (omit to search)")
    p.add_argument("--folds", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="export the filter bank of a model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("plan", help="list the captures needed for a bank")
    _add_common(p)
    p.add_argument("--bank")
    p.add_argument("--q", type=int, dest="q_plan", help="plan for Q signed filters without a bank")
    p.add_argument("--slm-rows", type=int, dest="slm_rows")
    p.add_argument("--dc-rows", type=int, dest="dc_rows")
    p.add_argument("--patterns", action="store_true", help="also write SLM patterns as PBM")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("classify", help="per-pixel classification of measurements")
    _add_common(p)
    p.add_argument("--measurements", required=True)
    p.add_argument("--model")
    p.add_argument("--threshold", type=float)
    p.add_argument("--floor-rel", type=float, dest="floor_rel")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="confusion matrix and accuracy")
    _add_common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--images-captured", type=int, dest="images_captured")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("roc", help="ROC curve and AUC of binary scores")
    _add_common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", help="label file whose unknown pixels are excluded")
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("sweep", help="accuracy versus number of filters")
    _add_common(p)
    _add_training(p)
    p.add_argument("--q", dest="q_list", default="1,3,5,10,20")
    p.add_argument("--margin", type=float, default=0.01)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="simulated code, wavelength and PSF calibration")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--aperture")
    p.add_argument("--nsr", type=float)
    p.add_argument("--lasers", default="635,850")
    p.add_argument("--validation", default="780,830")
    p.add_argument("--noise-fraction", type=float, dest="noise_fraction", default=0.0)
    p.add_argument("--star-size", type=int, dest="star_size", default=512)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("mtf", help="sector-star MTF before and after deconvolution")
    _add_common(p)
    _add_grid(p)
    p.add_argument("--aperture")
    p.add_argument("--nsr", type=float)
    p.add_argument("--band", type=int)
    p.add_argument("--star-size", type=int, dest="star_size", default=512)
    p.add_argument("--spokes", type=int, default=36)
    p.set_defaults(func=cmd_mtf)
    return parser


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def _resolve_threads(args_threads):
    if args_threads is not None:
        return args_threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return None


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        threads = _resolve_threads(getattr(args, "threads", None))
        overrides = {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS}
        overrides["threads"] = threads
        if getattr(args, "config", None):
            _require(args.config, "config")
        cfg = RunConfig.load(getattr(args, "config", None), overrides)
        if cfg.threads < 0:
            raise ValidationError("threads must be non-negative")
        command = args.command + (f" {args.kind}" if args.command == "train" else "")
        with threadpool_limits(limits=cfg.threads or None):
            args.func(args, cfg)
        _write_config(Path(args.out), command, cfg, args)
    except ValidationError as exc:
        print(f"specbench {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report, do not dump a traceback
        print(f"specbench {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0
