"""Command line: ``train``, ``sweep``, ``eval-one`` and ``inspect``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 checkpoint
error, 5 numerical-regime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.fft

from vd2nn import checkpoint as ckpt_io
from vd2nn.config import RunConfig, load_config
from vd2nn.data import LabeledImageSet, load_idx
from vd2nn.errors import ConfigError, DataError, VD2NNError
from vd2nn.evaluation import sweep, write_sweep_csv
from vd2nn.network import DisplacementSample, forward_trace
from vd2nn.optics import ComplexField
from vd2nn.readout import detect, power_efficiency, signal_contrast
from vd2nn.training import train

log = logging.getLogger("vd2nn")

CHECKPOINT_NAME = "checkpoint.vd2nn"
TRAIN_LOG_NAME = "train_log.csv"
RESOLVED_CONFIG_NAME = "config.resolved.ini"
TRAIN_LOG_HEADER = ["epoch", "mean_loss", "clean_val_acc", "vaccinated_val_acc"]

# Layer-3 positions of the 13-position experiment: nominal, four x steps,
# four y steps and four z steps.
GRID13_LAYER = 3
GRID13_OFFSETS = (
    [(0.0, 0.0, 0.0)]
    + [(v, 0.0, 0.0) for v in (-3.2, -1.6, 1.6, 3.2)]
    + [(0.0, v, 0.0) for v in (-3.2, -1.6, 1.6, 3.2)]
    + [(0.0, 0.0, v) for v in (-6.4, -3.2, 3.2, 6.4)]
)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def load_split(images, labels, split: str, num_classes: int) -> LabeledImageSet:
    if images is None or labels is None:
        raise DataError(f"no {split} dataset paths configured")
    return load_idx(images, labels, split, num_classes)


def load_test_set(cfg: RunConfig) -> LabeledImageSet:
    return load_split(
        cfg.paths.test_images, cfg.paths.test_labels, "test", cfg.values["readout"]["num_classes"]
    )


def run_training(cfg: RunConfig, out_dir: Path | None = None) -> Path:
    """Train per ``cfg`` and write checkpoint, log and resolved config. Returns the output dir."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.output_dir
    tr = cfg.values["training"]
    k = cfg.values["readout"]["num_classes"]
    data = load_split(cfg.paths.train_images, cfg.paths.train_labels, "train", k)
    if tr["train_subset"]:
        data = data.head(tr["train_subset"])
    validation = None
    if tr["validation_size"]:
        data, validation = data.split_tail(tr["validation_size"])
    network, history = train(cfg.build_network(), data, cfg.training, cfg.encoder, validation)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / RESOLVED_CONFIG_NAME).write_text(cfg.to_text(), encoding="utf-8")
        with (out_dir / TRAIN_LOG_NAME).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAIN_LOG_HEADER)
            for e in history:
                w.writerow([e.epoch, _fmt(e.mean_loss), _fmt(e.clean_val_acc), _fmt(e.vaccinated_val_acc)])
    except OSError as exc:
        raise VD2NNError(f"cannot write outputs to {out_dir}: {exc}") from exc
    ckpt_io.save(ckpt_io.Checkpoint.from_network(cfg, network), out_dir / CHECKPOINT_NAME)
    return out_dir


def parse_levels(text: str) -> list[float]:
    try:
        levels = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"levels must be comma-separated numbers, got {text!r}") from None
    if not levels:
        raise ConfigError("no sweep levels given")
    if any(not np.isfinite(v) or v < 0 for v in levels):
        raise ConfigError("sweep levels must be finite and non-negative")
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ConfigError("sweep levels must be sorted ascending")
    return levels


def parse_override(text: str, num_layers: int) -> tuple[int, tuple[float, float, float]]:
    """``"l:dx,dy,dz"`` with a 1-based layer index."""
    try:
        layer_txt, vec = text.split(":")
        layer = int(layer_txt)
        dx, dy, dz = (float(v) for v in vec.split(","))
    except ValueError:
        raise ConfigError(f"override {text!r} must look like 'layer:dx,dy,dz'") from None
    if not 1 <= layer <= num_layers:
        raise ConfigError(f"override layer {layer} outside 1..{num_layers}")
    if not all(np.isfinite(v) for v in (dx, dy, dz)):
        raise ConfigError(f"override {text!r} has non-finite values")
    return layer, (dx, dy, dz)


def displacement_from_overrides(overrides, num_layers: int) -> DisplacementSample:
    values = np.zeros((num_layers, 3))
    for layer, vec in overrides:
        values[layer - 1] = vec
    return DisplacementSample(values)


def evaluate_one(network, encoder, image, label: int, d: DisplacementSample) -> dict:
    """Scores, prediction, contrast and power budget for one image under one displacement."""
    field = ComplexField(network.grid, encoder.encode_batch(image))
    trace = forward_trace(network, field, d)
    layout = network.head.layout
    inten = detect(trace.output, layout)
    scores = network.head.scores(inten)
    budget = power_efficiency(
        field, trace.output, layout, label, trace.absorbed_energy, trace.propagation_loss
    )
    return {
        "intensities": inten,
        "scores": scores,
        "prediction": int(np.argmax(scores)),
        "psi": float(signal_contrast(inten, label, network.head)),
        "budget": budget,
    }


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = run_training(cfg, Path(args.out) if args.out else None)
    print(f"wrote {out / CHECKPOINT_NAME}, {out / TRAIN_LOG_NAME}, {out / RESOLVED_CONFIG_NAME}")
    return 0


def cmd_sweep(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    cfg = ck.config()
    network = ck.network()
    levels = parse_levels(args.levels)
    if args.seed < 0:
        raise ConfigError("seed must be non-negative")
    testset = load_test_set(cfg)
    result = sweep(network, testset, args.axis, levels, args.seed, cfg.encoder, args.subset)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise VD2NNError(f"cannot create {out}: {exc}") from exc
    summary = out / f"sweep_{args.axis}.csv"
    records = write_sweep_csv(result, summary)
    for lvl, acc, psi, eff, count in result.rows():
        print(f"delta={lvl:g} accuracy={acc:.4f} mean_psi={psi:.4f} mean_eff={eff:.4g} n={count}")
    print(f"wrote {summary} and {records}")
    return 0


def cmd_eval_one(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    cfg = ck.config()
    network = ck.network()
    num_layers = cfg.geometry.num_layers
    overrides = [parse_override(o, num_layers) for o in args.override or []]
    if args.image is not None:
        try:
            image = np.load(args.image)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read image {args.image}: {exc}") from exc
        if image.ndim != 2:
            raise DataError(f"image must be 2-D, got shape {image.shape}")
        image = np.clip(image, 0, 255).astype(np.uint8)
        if args.label is None:
            raise ConfigError("--label is required with --image")
        label = args.label
    else:
        testset = load_test_set(cfg)
        if not 0 <= args.sample < len(testset):
            raise DataError(f"sample {args.sample} outside 0..{len(testset) - 1}")
        image, label = testset.images[args.sample], int(testset.labels[args.sample])
    if not 0 <= label < network.head.num_classes:
        raise ConfigError(f"label {label} outside 0..{network.head.num_classes - 1}")
    d = displacement_from_overrides(overrides, num_layers)
    res = evaluate_one(network, cfg.encoder, image, label, d)
    print(f"label={label} prediction={res['prediction']} psi={res['psi']:.6f}")
    for c, s in enumerate(res["scores"]):
        print(f"  class {c}: score={s:.6g}")
    b = res["budget"]
    print(
        f"efficiency={b.efficiency:.6g} detected={b.detected_fraction:.6g} "
        f"scattered={b.scattered_fraction:.6g} absorbed={b.absorbed_fraction:.6g}"
    )
    if args.grid13:
        write_grid13(network, cfg, image, label, d, Path(args.grid13))
        print(f"wrote {args.grid13}")
    return 0


def write_grid13(network, cfg: RunConfig, image, label: int, base: DisplacementSample, path: Path) -> None:
    """Evaluate the 13 layer-3 positions on top of ``base`` and write one CSV row each."""
    if cfg.geometry.num_layers < GRID13_LAYER:
        raise ConfigError(f"the 13-position grid needs at least {GRID13_LAYER} layers")
    k = network.head.num_classes
    rows = []
    for i, off in enumerate(GRID13_OFFSETS):
        values = base.values.copy()
        values[GRID13_LAYER - 1] = off
        res = evaluate_one(network, cfg.encoder, image, label, DisplacementSample(values))
        rows.append(
            [i, _fmt(off[0]), _fmt(off[1]), _fmt(off[2]), label, res["prediction"], _fmt(res["psi"]),
             _fmt(res["budget"].efficiency)]
            + [_fmt(s) for s in res["scores"]]
        )
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["position", "dx", "dy", "dz", "true_label", "pred_label", "psi", "efficiency"]
                + [f"score_{c}" for c in range(k)]
            )
            w.writerows(rows)
    except OSError as exc:
        raise VD2NNError(f"cannot write {path}: {exc}") from exc


def cmd_inspect(args) -> int:
    ck = ckpt_io.load(args.checkpoint)
    cfg = ck.config()
    n = ck.phases[0].shape[0]
    print(f"format version {ckpt_io.VERSION}, checksum ok")
    print(f"layers: {len(ck.phases)} x {n}x{n}")
    for i, p in enumerate(ck.phases, 1):
        print(f"  layer {i}: phase mean {p.mean():.6f} std {p.std():.6f} range [{p.min():.6f}, {p.max():.6f}]")
    if ck.electronic is not None:
        print(f"electronic head: {ck.electronic.num_parameters} parameters")
    print(f"readout: {cfg.layout.mode}, {len(cfg.layout.regions)} detectors")
    print("config:")
    print(ck.config_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vd2nn", description="Vaccinated diffractive network simulator")
    p.add_argument("--threads", type=int, default=1, help="FFT worker threads (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network from a config file")
    t.add_argument("config")
    t.add_argument("--out", help="output directory (overrides [run] output_dir)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="blind-test accuracy over misalignment levels")
    s.add_argument("checkpoint")
    s.add_argument("--axis", choices=("lateral", "axial"), required=True)
    s.add_argument("--levels", required=True, help="comma-separated ranges in wavelengths")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--subset", type=int, default=None, help="evaluate the first N test samples")
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("eval-one", help="per-class report for one sample")
    e.add_argument("checkpoint")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--sample", type=int, help="index into the configured test set")
    src.add_argument("--image", help=".npy file holding a 2-D 8-bit image")
    e.add_argument("--label", type=int, help="true label when using --image")
    e.add_argument("--override", action="append", metavar="L:DX,DY,DZ")
    e.add_argument("--grid13", metavar="CSV", help="also write the 13 layer-3 positions")
    e.set_defaults(func=cmd_eval_one)

    i = sub.add_parser("inspect", help="print checkpoint contents")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return ConfigError.exit_code
    try:
        with scipy.fft.set_workers(args.threads):
            return args.func(args)
    except VD2NNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
