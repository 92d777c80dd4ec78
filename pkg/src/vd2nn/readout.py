"""Output-plane detectors, class-score heads, loss and diagnostic metrics.

Every score/loss function works on the trailing axis so it accepts a single
intensity vector or a ``(batch, K)`` stack. Backward helpers take the
gradient of a real loss with respect to the function output and return the
gradient with respect to its input; complex field gradients use the
convention ``g = dL/dRe(u) + i dL/dIm(u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from vd2nn.errors import ConfigError, GridMismatchError
from vd2nn.optics import ComplexField, GridSpec, energy

EPS = 1e-12
MODES = ("standard", "differential", "hybrid")

__all__ = [
    "EPS",
    "MODES",
    "Region",
    "DetectorLayout",
    "default_layout",
    "ElectronicHead",
    "Head",
    "ContrastStats",
    "PowerBudget",
    "detect",
    "detect_values",
    "detect_backward",
    "standard_scores",
    "differential_scores",
    "hybrid_scores",
    "softmax_cross_entropy",
    "signal_contrast",
    "power_efficiency",
    "select_by_contrast_band",
]


@dataclass(frozen=True)
class Region:
    """Axis-aligned square detector: centre ``(cx, cy)`` and edge ``side``, in wavelengths."""

    cx: float
    cy: float
    side: float

    def bounds(self) -> tuple[float, float, float, float]:
        h = self.side / 2
        return self.cx - h, self.cx + h, self.cy - h, self.cy + h


@dataclass(frozen=True)
class DetectorLayout:
    regions: tuple[Region, ...]
    mode: str = "standard"

    def __post_init__(self) -> None:
        object.__setattr__(self, "regions", tuple(self.regions))
        if self.mode not in MODES:
            raise ConfigError(f"unknown readout mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "differential" and len(self.regions) % 2:
            raise ConfigError("differential layout needs an even number of regions")
        if not self.regions:
            raise ConfigError("detector layout has no regions")
        for i, a in enumerate(self.regions):
            if a.side <= 0:
                raise ConfigError(f"detector {i} has non-positive side {a.side}")
            for j in range(i):
                if _overlap(a, self.regions[j]):
                    raise ConfigError(f"detectors {j} and {i} overlap")

    @property
    def num_classes(self) -> int:
        n = len(self.regions)
        return n // 2 if self.mode == "differential" else n

    def check_grid(self, grid: GridSpec) -> None:
        half = grid.aperture / 2
        for i, r in enumerate(self.regions):
            x0, x1, y0, y1 = r.bounds()
            if x0 < -half or x1 > half or y0 < -half or y1 > half:
                raise GridMismatchError(
                    f"detector {i} ({r}) extends outside the {grid.aperture:.4g} aperture"
                )
        m = masks(self, grid)
        empty = np.flatnonzero(m.sum(axis=1) == 0)
        if empty.size:
            raise GridMismatchError(f"detectors {empty.tolist()} contain no pixel centres")


def _overlap(a: Region, b: Region) -> bool:
    ax0, ax1, ay0, ay1 = a.bounds()
    bx0, bx1, by0, by1 = b.bounds()
    return ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1


def default_layout(
    mode: str = "standard",
    num_classes: int = 10,
    side: float = 6.4,
    column_pitch: float = 18.0,
    row_separation: float = 25.0,
    pair_gap: float = 3.2,
) -> DetectorLayout:
    """Detectors in two rows centred on the optical axis.

    Differential mode puts each class's (+, -) pair as vertical neighbours,
    ``pair_gap`` apart, around the position a standard detector would take.
    """
    cols = math.ceil(num_classes / 2)
    regions = []
    for c in range(num_classes):
        row, col = divmod(c, cols)
        in_row = cols if row == 0 else num_classes - cols
        cx = (col - (in_row - 1) / 2) * column_pitch
        cy = row_separation / 2 - row * row_separation
        if mode == "differential":
            off = (side + pair_gap) / 2
            regions.append(Region(cx, cy + off, side))
            regions.append(Region(cx, cy - off, side))
        else:
            regions.append(Region(cx, cy, side))
    return DetectorLayout(tuple(regions), mode)


@lru_cache(maxsize=16)
def masks(layout: DetectorLayout, grid: GridSpec) -> np.ndarray:
    """Indicator matrix ``(R, n*n)``: pixel centre inside region ``r``."""
    x = grid.coordinates()
    X, Y = np.meshgrid(x, x)  # row index -> y, column index -> x
    out = np.zeros((len(layout.regions), grid.n * grid.n))
    for i, r in enumerate(layout.regions):
        x0, x1, y0, y1 = r.bounds()
        inside = (X >= x0) & (X < x1) & (Y >= y0) & (Y < y1)
        out[i] = inside.ravel()
    out.setflags(write=False)
    return out


def detect_values(values: np.ndarray, grid: GridSpec, layout: DetectorLayout) -> np.ndarray:
    """Integrated intensity per region for a field stack ``(..., n, n)``."""
    intensity = values.real**2 + values.imag**2
    flat = intensity.reshape(intensity.shape[:-2] + (-1,))
    return flat @ masks(layout, grid).T * grid.pitch**2


def detect_backward(
    values: np.ndarray, grid: GridSpec, layout: DetectorLayout, grad_intensities: np.ndarray
) -> np.ndarray:
    weight = (grad_intensities @ masks(layout, grid)).reshape(values.shape)
    return 2 * grid.pitch**2 * weight * values


def detect(output_field: ComplexField, layout: DetectorLayout) -> np.ndarray:
    layout.check_grid(output_field.grid)
    return detect_values(output_field.values, output_field.grid, layout)


def _normalize(intensities: np.ndarray) -> np.ndarray:
    total = intensities.sum(axis=-1, keepdims=True)
    k = intensities.shape[-1]
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, intensities / safe, 1.0 / k)


def _normalize_backward(intensities: np.ndarray, grad: np.ndarray) -> np.ndarray:
    total = intensities.sum(axis=-1, keepdims=True)
    safe = np.where(total > 0, total, 1.0)
    s = intensities / safe
    g = (grad - np.sum(grad * s, axis=-1, keepdims=True)) / safe
    return np.where(total > 0, g, 0.0)


def standard_scores(intensities: np.ndarray) -> np.ndarray:
    """Intensities normalised to sum to one (uniform when all are zero)."""
    return _normalize(np.asarray(intensities, dtype=np.float64))


def differential_scores(intensities: np.ndarray) -> np.ndarray:
    """``(I+ - I-) / (I+ + I- + eps)`` for pairs ordered ``[c0+, c0-, c1+, ...]``."""
    i = np.asarray(intensities, dtype=np.float64)
    plus, minus = i[..., 0::2], i[..., 1::2]
    return (plus - minus) / (plus + minus + EPS)


def _differential_backward(intensities: np.ndarray, grad: np.ndarray) -> np.ndarray:
    plus, minus = intensities[..., 0::2], intensities[..., 1::2]
    den = (plus + minus + EPS) ** 2
    out = np.empty_like(intensities)
    out[..., 0::2] = grad * (2 * minus + EPS) / den
    out[..., 1::2] = -grad * (2 * plus + EPS) / den
    return out


@dataclass
class ElectronicHead:
    """Single fully-connected layer applied to normalised detector powers."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ConfigError(
                f"electronic head shapes disagree: weights {self.weights.shape}, "
                f"bias {self.bias.shape}"
            )

    @classmethod
    def identity(cls, k_in: int, k_out: int | None = None, scale: float = 1.0) -> "ElectronicHead":
        k_out = k_in if k_out is None else k_out
        return cls(scale * np.eye(k_in, k_out), np.zeros(k_out))

    @property
    def num_parameters(self) -> int:
        return self.weights.size + self.bias.size


def hybrid_scores(intensities: np.ndarray, head: ElectronicHead) -> np.ndarray:
    """Logits ``W^T normalize(I) + b``."""
    i = np.asarray(intensities, dtype=np.float64)
    if i.shape[-1] != head.weights.shape[0]:
        raise ValueError(
            f"hybrid head expects {head.weights.shape[0]} detector inputs, got {i.shape[-1]}"
        )
    return _normalize(i) @ head.weights + head.bias


def softmax_cross_entropy(scores, label, temperature: float = 1.0):
    """Cross-entropy of ``softmax(scores / temperature)`` against ``label``.

    Works on a single score vector with an integer label, or on a
    ``(B, K)`` stack with a label array; returns ``(loss, grad_scores)``.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    s = np.asarray(scores, dtype=np.float64) / temperature
    labels = np.asarray(label)
    z = s - s.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    loss = -np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    grad = np.exp(logp)
    np.put_along_axis(grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1, -1)
    grad /= temperature
    if loss.ndim == 0:
        return float(loss), grad
    return loss, grad


@dataclass
class Head:
    """Readout: detector layout plus the score rule for one of the three modes.

    ``temperature`` divides the class scores inside the softmax loss.
    """

    layout: DetectorLayout
    electronic: ElectronicHead | None = None
    temperature: float = 0.1

    def __post_init__(self) -> None:
        if self.mode == "hybrid" and self.electronic is None:
            k = len(self.layout.regions)
            self.electronic = ElectronicHead.identity(k, k)
        if self.mode != "hybrid" and self.electronic is not None:
            raise ConfigError(f"{self.mode} head takes no electronic layer")
        if self.temperature <= 0:
            raise ConfigError("loss temperature must be positive")

    @property
    def mode(self) -> str:
        return self.layout.mode

    @property
    def num_classes(self) -> int:
        if self.mode == "hybrid":
            return self.electronic.weights.shape[1]
        return self.layout.num_classes

    def scores(self, intensities: np.ndarray) -> np.ndarray:
        if self.mode == "standard":
            return standard_scores(intensities)
        if self.mode == "differential":
            return differential_scores(intensities)
        return hybrid_scores(intensities, self.electronic)

    def backward(self, intensities: np.ndarray, grad_scores: np.ndarray):
        """Return ``(grad_intensities, (grad_weights, grad_bias) | None)`` summed over the batch."""
        if self.mode == "standard":
            return _normalize_backward(intensities, grad_scores), None
        if self.mode == "differential":
            return _differential_backward(intensities, grad_scores), None
        x = _normalize(intensities)
        gw = x.reshape(-1, x.shape[-1]).T @ grad_scores.reshape(-1, grad_scores.shape[-1])
        gb = grad_scores.reshape(-1, grad_scores.shape[-1]).sum(axis=0)
        gx = grad_scores @ self.electronic.weights.T
        return _normalize_backward(intensities, gx), (gw, gb)

    def class_signals(self, intensities: np.ndarray) -> np.ndarray:
        """Per-class signal compared by the contrast metric."""
        if self.mode == "standard":
            return np.asarray(intensities, dtype=np.float64)
        if self.mode == "differential":
            return differential_scores(intensities)
        logits = hybrid_scores(intensities, self.electronic)
        z = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)

    def predict(self, intensities: np.ndarray) -> np.ndarray:
        # np.argmax breaks ties towards the lowest index.
        return np.argmax(self.scores(intensities), axis=-1)


def signal_contrast(intensities, true_label, mode: str | Head = "standard") -> np.ndarray | float:
    """Normalised margin between the true-class signal and its strongest competitor.

    ``psi = (s_true - s_runner) / (|s_true| + |s_runner| + eps)``; for the
    non-negative signals of the standard head this is the usual ratio. The
    absolute values keep differential-score contrasts inside [-1, 1].
    """
    if isinstance(mode, Head):
        signals = mode.class_signals(intensities)
    elif mode == "standard":
        signals = np.asarray(intensities, dtype=np.float64)
    elif mode == "differential":
        signals = differential_scores(intensities)
    else:
        raise ValueError("hybrid contrast needs the Head instance (it owns the electronic layer)")
    labels = np.asarray(true_label)
    s_true = np.take_along_axis(signals, labels[..., None], axis=-1)[..., 0]
    others = signals.copy()
    np.put_along_axis(others, labels[..., None], -np.inf, axis=-1)
    s_run = others.max(axis=-1)
    psi = (s_true - s_run) / (np.abs(s_true) + np.abs(s_run) + EPS)
    return float(psi) if np.ndim(psi) == 0 else psi


@dataclass(frozen=True)
class PowerBudget:
    """Fractions of the power right after the object plane.

    ``detected + scattered + absorbed`` accounts for all input power;
    ``efficiency`` is the true-class share of ``detected``.
    """

    efficiency: float
    absorbed_fraction: float
    scattered_fraction: float
    detected_fraction: float

    @property
    def total(self) -> float:
        return self.detected_fraction + self.scattered_fraction + self.absorbed_fraction


def power_efficiency(
    input: ComplexField,
    output: ComplexField,
    layout: DetectorLayout,
    true_label: int,
    absorbed_energy: float = 0.0,
    propagation_loss: float | None = None,
) -> PowerBudget:
    """Power bookkeeping for one inference.

    ``absorbed_energy`` is the power removed by layer amplitude factors and
    ``propagation_loss`` the power that left the simulation window or was
    clipped as evanescent (both from ``network.forward_trace``). Without a
    measured ``propagation_loss`` it is inferred from the energy balance.
    """
    e_in = energy(input)
    if e_in <= 0:
        raise ValueError("input field carries no power")
    e_out = energy(output)
    inten = detect(output, layout)
    if layout.mode == "differential":
        true_power = inten[2 * true_label] + inten[2 * true_label + 1]
    elif layout.mode == "hybrid":
        true_power = float(inten.max())
    else:
        true_power = inten[true_label]
    if propagation_loss is None:
        propagation_loss = e_in - e_out - absorbed_energy
    detected = float(inten.sum())
    return PowerBudget(
        efficiency=float(true_power) / e_in,
        absorbed_fraction=absorbed_energy / e_in,
        scattered_fraction=(e_out - detected + propagation_loss) / e_in,
        detected_fraction=detected / e_in,
    )


@dataclass(frozen=True)
class ContrastStats:
    """Mean and standard deviation of the contrast over correctly classified samples."""

    mu_sc: float
    sigma_sc: float
    count: int = field(default=0)

    def __post_init__(self) -> None:
        if self.sigma_sc < 0:
            raise ValueError("sigma_sc must be non-negative")


def select_by_contrast_band(stats: ContrastStats, psi_a: float, psi_b: float, band: str) -> bool:
    """True iff both contrasts lie strictly inside the requested band.

    ``set1``: ``mu + sigma < psi < mu + 2 sigma``; ``set2``: ``mu < psi < mu + sigma``.
    """
    mu, sd = stats.mu_sc, stats.sigma_sc
    if band == "set1":
        lo, hi = mu + sd, mu + 2 * sd
    elif band == "set2":
        lo, hi = mu, mu + sd
    else:
        raise ValueError(f"unknown band {band!r}; expected 'set1' or 'set2'")
    return all(lo < p < hi for p in (psi_a, psi_b))
