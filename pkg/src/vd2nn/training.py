"""Gradient computation through the optical chain, Adam, and the training loop.

Training draws one displacement realisation per batch (optionally one per
sample) from the vaccination ranges, so the phase masks are optimised for
the whole distribution of misalignments rather than for the nominal stack.
With zero ranges this is ordinary error-free training.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from vd2nn.data import Encoder, LabeledImageSet
from vd2nn.errors import ConfigError
from vd2nn.evaluation import EvalSpec, evaluate
from vd2nn.network import (
    DiffractiveNetwork,
    VaccinationSpec,
    backward_values,
    forward_values,
    sample_displacements,
)
from vd2nn.readout import detect_backward, detect_values, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    vaccination: VaccinationSpec = field(default_factory=VaccinationSpec)
    batch_size: int = 64
    epochs: int = 1
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    loss_temperature: float | None = None  # None: use the head's temperature
    per_sample_displacement: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"adam betas must lie in [0, 1), got {self.adam_betas}")
        if not self.adam_eps > 0:
            raise ConfigError("adam_eps must be positive")
        if self.loss_temperature is not None and not self.loss_temperature > 0:
            raise ConfigError("loss_temperature must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "OptimizerState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


@dataclass
class GradientBundle:
    phases: list[np.ndarray]
    electronic: tuple[np.ndarray, np.ndarray] | None = None

    def as_list(self) -> list[np.ndarray]:
        out = list(self.phases)
        if self.electronic is not None:
            out += list(self.electronic)
        return out


def _batch_arrays(batch):
    """Accept ``(inputs, labels)`` arrays or a list of ``(ComplexField, label)`` pairs."""
    if isinstance(batch, tuple) and len(batch) == 2 and isinstance(batch[0], np.ndarray):
        inputs, labels = batch
    else:
        inputs = np.stack([f.values for f, _ in batch])
        labels = np.array([lbl for _, lbl in batch])
    return np.asarray(inputs, dtype=np.complex128), np.asarray(labels, dtype=np.int64)


def loss_and_gradients(
    network: DiffractiveNetwork, batch, d, config: TrainConfig | None = None
) -> tuple[float, GradientBundle]:
    """Mean cross-entropy over ``batch`` and its exact gradient.

    ``d`` is one ``DisplacementSample`` shared by the batch or a per-sample
    ``(B, L, 3)`` array. Phase gradients are real derivatives of the mean
    loss with respect to every phase pixel.
    """
    inputs, labels = _batch_arrays(batch)
    head = network.head
    temperature = head.temperature
    if config is not None and config.loss_temperature is not None:
        temperature = config.loss_temperature
    bsz = len(labels)
    out, cache = forward_values(network, inputs, d, keep=True)
    inten = detect_values(out, network.grid, head.layout)
    losses, g_scores = softmax_cross_entropy(head.scores(inten), labels, temperature)
    g_scores = g_scores / bsz
    g_inten, head_grads = head.backward(inten, g_scores)
    g_out = detect_backward(out, network.grid, head.layout, g_inten)
    phases = backward_values(network, cache, g_out)
    return float(np.mean(losses)), GradientBundle(phases, head_grads)


def adam_step(
    params: list[np.ndarray],
    grads: GradientBundle | list[np.ndarray],
    state: OptimizerState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], OptimizerState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    g_list = grads.as_list() if isinstance(grads, GradientBundle) else list(grads)
    if len(g_list) != len(params) or len(state.m) != len(params):
        raise ValueError(
            f"{len(params)} parameters, {len(g_list)} gradients, {len(state.m)} moment slots"
        )
    b1, b2 = betas
    step = state.step + 1
    c1 = 1 - b1**step
    c2 = 1 - b2**step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, g_list, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, OptimizerState(new_m, new_v, step)


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    mean_loss: float
    clean_val_acc: float
    vaccinated_val_acc: float


def train(
    network: DiffractiveNetwork,
    dataset: LabeledImageSet,
    config: TrainConfig,
    encoder: Encoder,
    validation: LabeledImageSet | None = None,
    callback=None,
) -> tuple[DiffractiveNetwork, list[EpochLog]]:
    """Vaccinated training loop.

    Every batch gets a fresh displacement realisation drawn from
    ``config.vaccination``. Shuffling and displacements use independent
    streams spawned from ``config.seed``. Per-epoch validation reports the
    clean accuracy and the accuracy under the training ranges.
    """
    if len(dataset) == 0:
        raise ConfigError("training set is empty")
    config.vaccination.check_geometry(network.geometry)
    shuffle_seq, disp_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    disp_rng = np.random.default_rng(disp_seq)
    num_layers = network.geometry.num_layers
    params = [p.copy() for p in network.parameters()]
    state = OptimizerState.zeros_like(params)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(dataset))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            inputs = encoder.encode_batch(dataset.images[idx])
            if config.per_sample_displacement:
                d = np.stack(
                    [sample_displacements(config.vaccination, num_layers, disp_rng).values for _ in idx]
                )
            else:
                d = sample_displacements(config.vaccination, num_layers, disp_rng)
            current = network.with_parameters(params)
            loss, grads = loss_and_gradients(current, (inputs, dataset.labels[idx]), d, config)
            params, state = adam_step(
                params, grads, state, config.learning_rate, config.adam_betas, config.adam_eps
            )
            total += loss * len(idx)
            count += len(idx)
        network = network.with_parameters(params)
        clean = vacc = float("nan")
        if validation is not None and len(validation):
            clean = evaluate(network, validation, EvalSpec(seed=config.seed), encoder).accuracy
            if config.vaccination.is_zero:
                vacc = clean
            else:
                spec = EvalSpec(config.vaccination, seed=config.seed, stream=(1,))
                vacc = evaluate(network, validation, spec, encoder).accuracy
        entry = EpochLog(epoch, total / count, clean, vacc)
        history.append(entry)
        log.info(
            "epoch %d: loss %.5f clean %.4f vaccinated %.4f", epoch, entry.mean_loss, clean, vacc
        )
        if callback is not None:
            callback(entry, network)
    return network, history


__all__ = [
    "TrainConfig",
    "OptimizerState",
    "GradientBundle",
    "EpochLog",
    "loss_and_gradients",
    "adam_step",
    "train",
]
