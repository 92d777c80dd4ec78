"""Diffractive layers, network geometry, layer displacements and the forward model.

Layer ``l`` (1-based) nominally sits on the optical axis at
``input_to_first + (l - 1) * layer_spacing``; a ``DisplacementSample`` adds a
per-layer ``(dx, dy, dz)`` offset. Lateral offsets displace the layer's
transmittance in the lab frame (the field is shifted into the layer frame,
modulated, and shifted back); axial offsets change the two adjacent
propagation distances. Input and output planes never move.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from vd2nn.errors import ConfigError, GridMismatchError, RegimeError
from vd2nn.optics import (
    ComplexField,
    GridSpec,
    propagate_values,
    shift_values,
    transfer_values,
)
from vd2nn.readout import Head

__all__ = [
    "NetworkGeometry",
    "VaccinationSpec",
    "DisplacementSample",
    "DiffractiveLayer",
    "DiffractiveNetwork",
    "ForwardTrace",
    "sample_displacements",
    "effective_position",
    "apply_layer",
    "forward",
    "forward_trace",
    "forward_values",
    "backward_values",
]


@dataclass(frozen=True)
class NetworkGeometry:
    grid: GridSpec
    num_layers: int = 5
    input_to_first: float = 40.0
    layer_spacing: float = 40.0
    last_to_output: float = 40.0

    def __post_init__(self) -> None:
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        for name in ("input_to_first", "layer_spacing", "last_to_output"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")

    def nominal_z(self, layer_index: int) -> float:
        return self.input_to_first + (layer_index - 1) * self.layer_spacing

    @property
    def output_z(self) -> float:
        return self.nominal_z(self.num_layers) + self.last_to_output


@dataclass(frozen=True)
class VaccinationSpec:
    """Half-ranges of the uniform layer displacements (wavelengths)."""

    delta_lateral: float = 0.0
    delta_axial: float = 0.0

    def __post_init__(self) -> None:
        if not (self.delta_lateral >= 0 and self.delta_axial >= 0):
            raise ConfigError(f"displacement ranges must be non-negative: {self}")

    @property
    def is_zero(self) -> bool:
        return self.delta_lateral == 0 and self.delta_axial == 0

    def check_geometry(self, geometry: NetworkGeometry) -> None:
        """Reject axial ranges that could let neighbouring planes touch or cross."""
        limit = min(geometry.layer_spacing / 2, geometry.input_to_first, geometry.last_to_output)
        if self.delta_axial >= limit:
            raise RegimeError(
                f"delta_axial={self.delta_axial} must be < {limit} (half the layer spacing "
                "and less than the input/output distances); layers could cross"
            )
        if self.delta_lateral >= geometry.grid.max_shift():
            raise RegimeError(
                f"delta_lateral={self.delta_lateral} must be < n*pitch/4 = {geometry.grid.max_shift()}"
            )


@dataclass(frozen=True, eq=False)
class DisplacementSample:
    """Per-layer ``(dx, dy, dz)`` offsets, shape ``(num_layers, 3)``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"displacements must have shape (L, 3), got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, num_layers: int) -> "DisplacementSample":
        return cls(np.zeros((num_layers, 3)))

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, DisplacementSample) and np.array_equal(self.values, other.values)


def sample_displacements(
    spec: VaccinationSpec, num_layers: int, rng: np.random.Generator
) -> DisplacementSample:
    """Draw i.i.d. uniform offsets for every layer.

    Exactly ``3 * num_layers`` uniforms are consumed, layer-major then
    x, y, z, regardless of the ranges, so streams stay aligned.
    """
    u = rng.random((num_layers, 3))
    half = np.array([spec.delta_lateral, spec.delta_lateral, spec.delta_axial])
    return DisplacementSample((2.0 * u - 1.0) * half)


def effective_position(
    geometry: NetworkGeometry, layer_index: int, d: DisplacementSample
) -> tuple[float, float, float]:
    """Nominal location of layer ``layer_index`` (1-based) plus its displacement."""
    if not 1 <= layer_index <= geometry.num_layers:
        raise IndexError(f"layer index {layer_index} outside 1..{geometry.num_layers}")
    dx, dy, dz = d.values[layer_index - 1]
    return (0.0 + dx, 0.0 + dy, geometry.nominal_z(layer_index) + dz)


@dataclass(eq=False)
class DiffractiveLayer:
    """Trainable phase mask with a fixed uniform amplitude transmittance."""

    phase: np.ndarray
    amplitude_floor: float = 1.0

    def __post_init__(self) -> None:
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.phase.ndim != 2 or self.phase.shape[0] != self.phase.shape[1]:
            raise ValueError(f"phase must be square, got shape {self.phase.shape}")
        if not np.all(np.isfinite(self.phase)):
            raise ValueError("phase must be finite")
        if not 0.0 <= self.amplitude_floor <= 1.0:
            raise ConfigError(f"amplitude_floor must lie in [0, 1], got {self.amplitude_floor}")

    def transmittance(self) -> np.ndarray:
        return self.amplitude_floor * np.exp(1j * self.phase)


@dataclass(eq=False)
class DiffractiveNetwork:
    geometry: NetworkGeometry
    layers: list[DiffractiveLayer]
    head: Head

    def __post_init__(self) -> None:
        if len(self.layers) != self.geometry.num_layers:
            raise ConfigError(
                f"{len(self.layers)} layers given, geometry expects {self.geometry.num_layers}"
            )
        n = self.geometry.grid.n
        for i, layer in enumerate(self.layers):
            if layer.phase.shape != (n, n):
                raise GridMismatchError(f"layer {i + 1} has shape {layer.phase.shape}, grid is {n}")
        self.head.layout.check_grid(self.geometry.grid)

    @classmethod
    def transparent(
        cls, geometry: NetworkGeometry, head: Head, amplitude_floor: float = 1.0
    ) -> "DiffractiveNetwork":
        n = geometry.grid.n
        layers = [
            DiffractiveLayer(np.zeros((n, n)), amplitude_floor) for _ in range(geometry.num_layers)
        ]
        return cls(geometry, layers, head)

    @property
    def grid(self) -> GridSpec:
        return self.geometry.grid

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays: layer phases, then electronic weights and bias if present."""
        params = [layer.phase for layer in self.layers]
        if self.head.electronic is not None:
            params += [self.head.electronic.weights, self.head.electronic.bias]
        return params

    def with_parameters(self, params: list[np.ndarray]) -> "DiffractiveNetwork":
        nl = len(self.layers)
        layers = [replace(layer, phase=p) for layer, p in zip(self.layers, params[:nl])]
        head = self.head
        if head.electronic is not None:
            electronic = replace(head.electronic, weights=params[nl], bias=params[nl + 1])
            head = replace(head, electronic=electronic)
        return DiffractiveNetwork(self.geometry, layers, head)


def apply_layer(field: ComplexField, layer: DiffractiveLayer, dx: float, dy: float) -> ComplexField:
    """Modulate ``field`` by ``layer`` displaced laterally by ``(dx, dy)``."""
    if layer.phase.shape != field.values.shape:
        raise GridMismatchError(
            f"layer shape {layer.phase.shape} does not match field {field.values.shape}"
        )
    g = field.grid
    inner = shift_values(field.values, g, -dx, -dy) * layer.transmittance()
    return field.with_values(shift_values(inner, g, dx, dy))


@lru_cache(maxsize=64)
def _cached_transfer(grid: GridSpec, z: float) -> np.ndarray:
    h = transfer_values(grid, z)
    h.setflags(write=False)
    return h


def stage_distances(geometry: NetworkGeometry, disp: np.ndarray) -> np.ndarray:
    """Propagation distances between consecutive planes.

    ``disp`` has shape ``(L, 3)`` or ``(B, L, 3)``; the result has shape
    ``(L + 1,)`` or ``(B, L + 1)``.
    """
    nominal = geometry.nominal_z(np.arange(1, geometry.num_layers + 1))
    z = nominal + disp[..., 2]
    zero = np.zeros(z.shape[:-1] + (1,))
    out = np.full(z.shape[:-1] + (1,), geometry.output_z)
    planes = np.concatenate([zero, z, out], axis=-1)
    dist = np.diff(planes, axis=-1)
    if np.any(dist <= 0):
        raise RegimeError(
            f"non-positive inter-plane distance {dist.min():.4g} after displacement; "
            "the axial displacement range is too large for this geometry"
        )
    return dist


def _transfer_stack(grid: GridSpec, distances: np.ndarray) -> np.ndarray:
    """Transfer arrays for distances of shape ``()`` or ``(B,)``."""
    if distances.ndim == 0 or np.all(distances == distances.flat[0]):
        return _cached_transfer(grid, float(distances.flat[0]))
    return transfer_values(grid, distances)


@dataclass
class _Cache:
    transfers: list
    shifts: np.ndarray  # (L, 2) or (B, L, 2)
    modulated_inputs: list  # field in each layer's frame before modulation
    transmittances: list


def _as_disp_array(network: DiffractiveNetwork, d) -> np.ndarray:
    arr = d.values if isinstance(d, DisplacementSample) else np.asarray(d, dtype=np.float64)
    if arr.shape[-2:] != (network.geometry.num_layers, 3):
        raise ValueError(
            f"displacement shape {arr.shape} does not match {network.geometry.num_layers} layers"
        )
    return arr


def forward_values(network: DiffractiveNetwork, values: np.ndarray, d, keep: bool = False):
    """Batched forward pass.

    Args:
        values: input fields ``(n, n)`` or ``(B, n, n)``.
        d: ``DisplacementSample``, an ``(L, 3)`` array shared by the batch, or
            a per-sample ``(B, L, 3)`` array.
        keep: also return the intermediate state needed by ``backward_values``.
    """
    disp = _as_disp_array(network, d)
    grid = network.grid
    dist = stage_distances(network.geometry, disp)
    transfers = [
        _transfer_stack(grid, dist[..., k]) for k in range(network.geometry.num_layers + 1)
    ]
    u = propagate_values(np.asarray(values, dtype=np.complex128), transfers[0])
    kept, trans = [], []
    for li, layer in enumerate(network.layers):
        dx, dy = disp[..., li, 0], disp[..., li, 1]
        b = shift_values(u, grid, -dx, -dy)
        t = layer.transmittance()
        if keep:
            kept.append(b)
            trans.append(t)
        u = propagate_values(shift_values(b * t, grid, dx, dy), transfers[li + 1])
    if not keep:
        return u
    return u, _Cache(transfers, disp[..., :2], kept, trans)


def backward_values(network: DiffractiveNetwork, cache: _Cache, grad_out: np.ndarray) -> list:
    """Adjoint sweep from an output-field gradient to per-layer phase gradients.

    Gradients are summed over any batch axis.
    """
    grid = network.grid
    g = grad_out
    grads = [None] * len(network.layers)
    for li in reversed(range(len(network.layers))):
        dx, dy = cache.shifts[..., li, 0], cache.shifts[..., li, 1]
        g = propagate_values(g, np.conj(cache.transfers[li + 1]))
        g = shift_values(g, grid, -dx, -dy)
        t = cache.transmittances[li]
        modulated = cache.modulated_inputs[li] * t
        gphase = -np.imag(np.conj(g) * modulated)
        grads[li] = gphase.reshape((-1,) + gphase.shape[-2:]).sum(axis=0)
        g = shift_values(np.conj(t) * g, grid, dx, dy)
    return grads


def forward(network: DiffractiveNetwork, input: ComplexField, d: DisplacementSample) -> ComplexField:
    """Output-plane field for one input under one displacement realisation."""
    if input.grid != network.grid:
        raise GridMismatchError(f"input grid {input.grid} does not match network {network.grid}")
    if len(d) != network.geometry.num_layers:
        raise ValueError(f"displacement has {len(d)} layers, network has {network.geometry.num_layers}")
    return input.with_values(forward_values(network, input.values, d))


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    input: ComplexField
    output: ComplexField
    absorbed_energy: float
    propagation_loss: float
    layer_incident_energy: tuple[float, ...] = field(default=())


def forward_trace(
    network: DiffractiveNetwork, input: ComplexField, d: DisplacementSample
) -> ForwardTrace:
    """Forward pass that also books where the input power went.

    Absorption is attributed from each layer's amplitude factor,
    ``(1 - a^2) * E_incident``; propagation loss is measured as the energy
    drop across every free-space step.
    """
    grid = network.grid
    disp = _as_disp_array(network, d)
    dist = stage_distances(network.geometry, disp)
    pitch2 = grid.pitch**2

    def e(v):
        return float(np.sum(v.real**2 + v.imag**2) * pitch2)

    u = input.values
    before = e(u)
    u = propagate_values(u, _transfer_stack(grid, dist[0]))
    loss = before - e(u)
    absorbed = 0.0
    incident = []
    for li, layer in enumerate(network.layers):
        dx, dy = disp[li, 0], disp[li, 1]
        b = shift_values(u, grid, -dx, -dy)
        eb = e(b)
        incident.append(eb)
        absorbed += (1.0 - layer.amplitude_floor**2) * eb
        c = shift_values(b * layer.transmittance(), grid, dx, dy)
        before = e(c)
        u = propagate_values(c, _transfer_stack(grid, dist[li + 1]))
        loss += before - e(u)
    return ForwardTrace(input, input.with_values(u), absorbed, loss, tuple(incident))
