"""Run configuration: INI-style text with one section per component.

Unknown sections or keys are rejected so a typo in a misalignment range
cannot silently fall back to a default. Every value is validated by
building the objects it configures before any compute starts.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from vd2nn.data import Encoder
from vd2nn.errors import ConfigError, GridMismatchError, RegimeError
from vd2nn.network import DiffractiveNetwork, NetworkGeometry, VaccinationSpec
from vd2nn.optics import GridSpec
from vd2nn.readout import DetectorLayout, Head, Region, default_layout
from vd2nn.training import TrainConfig

__all__ = ["RunConfig", "DataPaths", "parse_config", "load_config", "SCHEMA"]

# section -> key -> (type, default); a ``None`` default marks a required key.
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "run": {"seed": (int, 0), "output_dir": (str, "run")},
    "grid": {"n": (int, 200), "pitch": (float, 0.53), "wavelength": (float, 1.0)},
    "network": {
        "num_layers": (int, 5),
        "input_to_first": (float, 40.0),
        "layer_spacing": (float, 40.0),
        "last_to_output": (float, 40.0),
        "amplitude_floor": (float, 1.0),
    },
    "readout": {
        "mode": (str, "standard"),
        "num_classes": (int, 10),
        "side": (float, 6.4),
        "column_pitch": (float, 18.0),
        "row_separation": (float, 25.0),
        "pair_gap": (float, 3.2),
        "regions": (str, ""),
        "temperature": (float, 0.1),
    },
    "vaccination": {"delta_lateral": (float, 0.0), "delta_axial": (float, 0.0)},
    "training": {
        "batch_size": (int, 64),
        "epochs": (int, 5),
        "learning_rate": (float, 1e-3),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "per_sample_displacement": (bool, False),
        "train_subset": (int, 0),
        "validation_size": (int, 0),
    },
    "data": {
        "train_images": (str, None),
        "train_labels": (str, None),
        "test_images": (str, ""),
        "test_labels": (str, ""),
        "channel": (str, "amplitude"),
        "object_span": (float, 80.0),
        "resample": (str, "nearest"),
    },
}

PATH_KEYS = ("train_images", "train_labels", "test_images", "test_labels")


@dataclass(frozen=True)
class DataPaths:
    train_images: Path
    train_labels: Path
    test_images: Path | None = None
    test_labels: Path | None = None


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated run settings plus the raw values they were built from."""

    values: dict = field(repr=False)
    grid: GridSpec = field(init=False)
    geometry: NetworkGeometry = field(init=False)
    layout: DetectorLayout = field(init=False)
    vaccination: VaccinationSpec = field(init=False)
    training: TrainConfig = field(init=False)
    encoder: Encoder = field(init=False)
    paths: DataPaths = field(init=False)

    def __post_init__(self) -> None:
        v = self.values
        try:
            grid = GridSpec(v["grid"]["n"], v["grid"]["pitch"], v["grid"]["wavelength"])
            net = v["network"]
            geometry = NetworkGeometry(
                grid,
                net["num_layers"],
                net["input_to_first"],
                net["layer_spacing"],
                net["last_to_output"],
            )
            layout = _build_layout(v["readout"])
            layout.check_grid(grid)
            vacc = VaccinationSpec(v["vaccination"]["delta_lateral"], v["vaccination"]["delta_axial"])
            vacc.check_geometry(geometry)
            tr = v["training"]
            training = TrainConfig(
                vaccination=vacc,
                batch_size=tr["batch_size"],
                epochs=tr["epochs"],
                learning_rate=tr["learning_rate"],
                adam_betas=(tr["beta1"], tr["beta2"]),
                adam_eps=tr["adam_eps"],
                seed=v["run"]["seed"],
                per_sample_displacement=tr["per_sample_displacement"],
            )
            if tr["train_subset"] < 0 or tr["validation_size"] < 0:
                raise ConfigError("train_subset and validation_size must be >= 0")
            d = v["data"]
            encoder = Encoder(grid, d["channel"], d["object_span"], d["resample"])
            if not 0 <= net["amplitude_floor"] <= 1:
                raise ConfigError("amplitude_floor must lie in [0, 1]")
            if not v["readout"]["temperature"] > 0:
                raise ConfigError("temperature must be positive")
            if (d["test_images"] == "") != (d["test_labels"] == ""):
                raise ConfigError("test_images and test_labels must be given together")
        except RegimeError:
            raise
        except (ValueError, GridMismatchError) as exc:
            raise ConfigError(str(exc)) from exc
        paths = DataPaths(
            Path(d["train_images"]),
            Path(d["train_labels"]),
            Path(d["test_images"]) if d["test_images"] else None,
            Path(d["test_labels"]) if d["test_labels"] else None,
        )
        for name, obj in [
            ("grid", grid),
            ("geometry", geometry),
            ("layout", layout),
            ("vaccination", vacc),
            ("training", training),
            ("encoder", encoder),
            ("paths", paths),
        ]:
            object.__setattr__(self, name, obj)

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["run"]["output_dir"])

    @property
    def amplitude_floor(self) -> float:
        return self.values["network"]["amplitude_floor"]

    def head(self) -> Head:
        return Head(self.layout, temperature=self.values["readout"]["temperature"])

    def build_network(self) -> DiffractiveNetwork:
        """Fresh network with all-zero phases (and an identity electronic layer if hybrid)."""
        return DiffractiveNetwork.transparent(self.geometry, self.head(), self.amplitude_floor)

    def to_text(self) -> str:
        """Canonical, fully resolved form: every key, fixed order, exact floats."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_format(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _build_layout(r: dict) -> DetectorLayout:
    mode = r["mode"]
    if r["regions"].strip():
        regions = []
        for chunk in r["regions"].split(";"):
            if not chunk.strip():
                continue
            parts = chunk.split(",")
            if len(parts) != 3:
                raise ConfigError(f"region {chunk.strip()!r} must be 'cx, cy, side'")
            regions.append(Region(*(float(p) for p in parts)))
        layout = DetectorLayout(tuple(regions), mode)
        if layout.num_classes != r["num_classes"]:
            raise ConfigError(
                f"{len(regions)} regions give {layout.num_classes} classes in {mode} mode, "
                f"config says num_classes={r['num_classes']}"
            )
        return layout
    if r["num_classes"] < 2:
        raise ConfigError("num_classes must be >= 2")
    layout = default_layout(
        "standard" if mode == "hybrid" else mode,
        r["num_classes"],
        r["side"],
        r["column_pitch"],
        r["row_separation"],
        r["pair_gap"],
    )
    return DetectorLayout(layout.regions, mode)


def _convert(kind: type, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config(
    text: str, base_dir: Path | str | None = None, overrides: dict | None = None
) -> RunConfig:
    """Parse and validate config text; relative paths resolve against ``base_dir``.

    ``overrides`` maps ``section -> {key: value}`` and is applied on top of
    the text before validation, with the same unknown-key checks.
    """
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str  # keep keys case-sensitive so typos are caught
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section, items in (overrides or {}).items():
        if not parser.has_section(section):
            parser.add_section(section)
        for key, value in items.items():
            parser[section][key] = _format(value)
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
    for section, keys in SCHEMA.items():
        given = dict(parser[section]) if parser.has_section(section) else {}
        unknown = sorted(set(given) - set(keys))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
        out = {}
        for key, (kind, default) in keys.items():
            if key in given:
                out[key] = _convert(kind, given[key], f"[{section}] {key}")
            elif default is None:
                raise ConfigError(f"missing required key [{section}] {key}")
            else:
                out[key] = default
        values[section] = out
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for key in PATH_KEYS:
        if values["data"][key]:
            values["data"][key] = str((base / values["data"][key]).resolve())
    values["run"]["output_dir"] = str((base / values["run"]["output_dir"]).resolve())
    return RunConfig(values)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent, overrides)
