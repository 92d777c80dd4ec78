"""Blind testing under random layer misalignments and robustness sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vd2nn.data import Encoder, LabeledImageSet
from vd2nn.errors import VD2NNError
from vd2nn.network import DiffractiveNetwork, VaccinationSpec, forward_values, sample_displacements
from vd2nn.readout import ContrastStats, detect_values, signal_contrast

SWEEP_HEADER = ["delta_lambda", "accuracy", "mean_psi", "mean_efficiency", "n_samples"]
AXES = ("lateral", "axial")


@dataclass(frozen=True)
class EvalSpec:
    """Test-time displacement ranges and the key for per-sample random streams.

    Sample ``m`` draws its displacement from a generator keyed by
    ``(seed, *stream, m)``, so results do not depend on ordering, batching
    or which other samples are evaluated.
    """

    test_vaccination: VaccinationSpec = field(default_factory=VaccinationSpec)
    seed: int = 0
    subset: int | None = None
    stream: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0 or any(s < 0 for s in self.stream):
            raise ValueError("seed and stream keys must be non-negative integers")


@dataclass(eq=False)
class EvalResult:
    accuracy: float
    correct: int
    sample_ids: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    displacements: np.ndarray  # (N, L, 3)
    scores: np.ndarray  # (N, K)
    psi: np.ndarray
    efficiency: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def mean_psi(self) -> float:
        return float(np.mean(self.psi)) if len(self) else float("nan")

    @property
    def mean_efficiency(self) -> float:
        return float(np.mean(self.efficiency)) if len(self) else float("nan")


def sample_rng(seed: int, stream: tuple[int, ...], sample_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream, sample_id])))


def per_sample_displacements(
    spec: EvalSpec, num_layers: int, sample_ids: np.ndarray
) -> np.ndarray:
    """``(N, L, 3)`` displacements; all zeros (no draws) for an error-free spec."""
    out = np.zeros((len(sample_ids), num_layers, 3))
    if spec.test_vaccination.is_zero:
        return out
    for i, m in enumerate(sample_ids):
        rng = sample_rng(spec.seed, spec.stream, int(m))
        out[i] = sample_displacements(spec.test_vaccination, num_layers, rng).values
    return out


def evaluate(
    network: DiffractiveNetwork,
    testset: LabeledImageSet,
    spec: EvalSpec,
    encoder: Encoder,
    batch_size: int = 64,
) -> EvalResult:
    """Classify every test sample under its own displacement realisation."""
    spec.test_vaccination.check_geometry(network.geometry)
    data = testset.head(spec.subset)
    ids = np.arange(len(data))
    disp = per_sample_displacements(spec, network.geometry.num_layers, ids)
    grid, head = network.grid, network.head
    preds, scores, psi, eff = [], [], [], []
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        inputs = encoder.encode_batch(data.images[sl])
        d = disp[sl] if not spec.test_vaccination.is_zero else disp[0]
        out = forward_values(network, inputs, d)
        inten = detect_values(out, grid, head.layout)
        s = head.scores(inten)
        labels = data.labels[sl]
        preds.append(np.argmax(s, axis=-1))
        scores.append(s)
        psi.append(signal_contrast(inten, labels, head))
        e_in = np.sum(np.abs(inputs) ** 2, axis=(-2, -1)) * grid.pitch**2
        eff.append(_true_power(inten, labels, head.mode) / e_in)
    k = head.num_classes
    predictions = np.concatenate(preds) if preds else np.zeros(0, int)
    correct = int(np.sum(predictions == data.labels))
    return EvalResult(
        accuracy=correct / len(data) if len(data) else float("nan"),
        correct=correct,
        sample_ids=ids,
        labels=data.labels.copy(),
        predictions=predictions,
        displacements=disp,
        scores=np.concatenate(scores) if scores else np.zeros((0, k)),
        psi=np.concatenate(psi) if psi else np.zeros(0),
        efficiency=np.concatenate(eff) if eff else np.zeros(0),
    )


def _true_power(inten: np.ndarray, labels: np.ndarray, mode: str) -> np.ndarray:
    if mode == "differential":
        return inten[np.arange(len(labels)), 2 * labels] + inten[np.arange(len(labels)), 2 * labels + 1]
    if mode == "hybrid":
        return inten.max(axis=-1)
    return inten[np.arange(len(labels)), labels]


@dataclass(eq=False)
class SweepResult:
    axis: str
    levels: list[float]
    results: list[EvalResult]

    def rows(self) -> list[tuple[float, float, float, float, int]]:
        return [
            (lvl, r.accuracy, r.mean_psi, r.mean_efficiency, len(r))
            for lvl, r in zip(self.levels, self.results)
        ]


def sweep(
    network: DiffractiveNetwork,
    testset: LabeledImageSet,
    axis: str,
    levels,
    seed: int,
    encoder: Encoder,
    subset: int | None = None,
    batch_size: int = 64,
) -> SweepResult:
    """One blind evaluation per misalignment level along one axis family."""
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    levels = [float(v) for v in levels]
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ValueError("sweep levels must be sorted ascending")
    if any(v < 0 for v in levels):
        raise ValueError("sweep levels must be non-negative")
    results = []
    for k, level in enumerate(levels):
        vacc = VaccinationSpec(level, 0.0) if axis == "lateral" else VaccinationSpec(0.0, level)
        spec = EvalSpec(vacc, seed, subset, stream=(k,))
        results.append(evaluate(network, testset, spec, encoder, batch_size))
    return SweepResult(axis, levels, results)


def contrast_statistics(
    network: DiffractiveNetwork, testset: LabeledImageSet, encoder: Encoder, subset: int | None = None
) -> ContrastStats:
    """Mean/std of the contrast over correctly classified samples at perfect alignment.

    With no correct samples the statistics are undefined and returned as NaN.
    """
    res = evaluate(network, testset, EvalSpec(subset=subset), encoder)
    return contrast_stats_from(res.psi, res.predictions == res.labels)


def contrast_stats_from(psi: np.ndarray, correct: np.ndarray) -> ContrastStats:
    sel = np.asarray(psi)[np.asarray(correct, bool)]
    if sel.size == 0:
        return ContrastStats(float("nan"), float("nan"), 0)
    return ContrastStats(float(np.mean(sel)), float(np.std(sel)), int(sel.size))


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def write_sweep_csv(result: SweepResult, path) -> Path:
    """Write the per-level summary and a sibling ``.records.csv`` with per-sample rows.

    Returns the records path.
    """
    path = Path(path)
    records_path = path.with_suffix(".records.csv")
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_HEADER)
            for lvl, acc, psi, eff, n in result.rows():
                w.writerow([_fmt(lvl), _fmt(acc), _fmt(psi), _fmt(eff), n])
        with records_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            num_layers = result.results[0].displacements.shape[1] if result.results else 0
            k = result.results[0].scores.shape[1] if result.results else 0
            header = ["level_index", "sample_id", "true_label", "pred_label"]
            for layer in range(1, num_layers + 1):
                header += [f"dx{layer}", f"dy{layer}", f"dz{layer}"]
            header += [f"score_{c}" for c in range(k)]
            w.writerow(header)
            for li, r in enumerate(result.results):
                for i in range(len(r)):
                    row = [li, int(r.sample_ids[i]), int(r.labels[i]), int(r.predictions[i])]
                    row += [_fmt(v) for v in r.displacements[i].ravel()]
                    row += [_fmt(v) for v in r.scores[i]]
                    w.writerow(row)
    except OSError as exc:
        raise VD2NNError(f"cannot write sweep CSV to {path}: {exc}") from exc
    return records_path


def read_sweep_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [
            {k: (int(v) if k == "n_samples" else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]
