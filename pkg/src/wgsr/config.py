"""JSON run configuration with field-path validation and named presets."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataset import PlateauSpec
from .imaging import SearchGrid
from .physics import ArrayGeometry, FrequencyGrid, WaveguideModel

__all__ = ["ConfigError", "RunConfig", "load_config", "preset", "save_config"]


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass(frozen=True)
class WaveguideSection:
    c0: float = 1500.0
    depth: float = 200.0


@dataclass(frozen=True)
class FrequencySection:
    f_c: float = 32.0625
    bandwidth_ratio: float = 0.4
    n_freq: int = 33


@dataclass(frozen=True)
class ArraySection:
    spacing: float = 2.5
    x_a: float = 0.0


@dataclass(frozen=True)
class GridSection:
    x_min: float = 490.0
    x_max: float = 570.0
    y_min: float = 0.0
    y_max: float = 200.0
    n_x: int = 71
    n_y: int = 51


@dataclass(frozen=True)
class DatasetSection:
    train: int = 4050
    val: int = 450
    test: int = 500
    n_min: int = 1
    n_max: int = 6
    plateau_size: int = 3
    off_grid: bool = False


@dataclass(frozen=True)
class NetworkSection:
    n_channels: int = 8
    n_conv_layers: int = 3
    kernel_size: int = 3
    scale_inputs: bool = True


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 50
    batch_size: int = 8
    patience: int = 5
    learning_rate: float = 1e-3
    one_sided_ce: bool = False


@dataclass(frozen=True)
class LossSection:
    w_nll: float = 0.5
    w_pi: float = 0.5
    eval_stride: int = 1
    # empty means the central frequency only
    pi_frequencies: tuple = ()


@dataclass(frozen=True)
class EvalSection:
    threshold: float = 0.9
    distance_edges: tuple = tuple(float(e) for e in range(0, 64, 4))
    gaussian_eps: tuple = (1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0)
    uniform_eps: tuple = (0.0, 0.1, 0.25, 0.5)
    noise_seed: int = 0


_SECTIONS = {
    "waveguide": WaveguideSection,
    "frequencies": FrequencySection,
    "array": ArraySection,
    "grid": GridSection,
    "dataset": DatasetSection,
    "network": NetworkSection,
    "training": TrainingSection,
    "loss": LossSection,
    "eval": EvalSection,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; defaults are the full-scale setup."""

    waveguide: WaveguideSection = field(default_factory=WaveguideSection)
    frequencies: FrequencySection = field(default_factory=FrequencySection)
    array: ArraySection = field(default_factory=ArraySection)
    grid: GridSection = field(default_factory=GridSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    loss: LossSection = field(default_factory=LossSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    # construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("<root>: expected a JSON object")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(f"{key}: unknown key")
        kwargs = {}
        for name, section in _SECTIONS.items():
            if name in data:
                kwargs[name] = _section_from_dict(section, data[name], name)
        for name in ("seed", "out"):
            if name in data:
                kwargs[name] = _coerce(data[name], int if name == "seed" else str, name)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        for sec in out.values():
            if isinstance(sec, dict):
                for k, v in sec.items():
                    if isinstance(v, tuple):
                        sec[k] = list(v)
        return out

    def replace(self, **changes) -> "RunConfig":
        """Copy with top-level fields or ``section__field`` keys replaced."""
        top, nested = {}, {}
        for key, value in changes.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                nested.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, vals in nested.items():
            if sec not in _SECTIONS:
                raise ConfigError(f"{sec}: unknown section")
            data = asdict(getattr(self, sec))
            for name, value in vals.items():
                if name not in data:
                    raise ConfigError(f"{sec}.{name}: unknown key")
                data[name] = value
            top[sec] = _section_from_dict(_SECTIONS[sec], data, sec)
        return dataclasses.replace(self, **top)

    def config_hash(self) -> str:
        """Content hash of everything except the output directory."""
        data = self.to_dict()
        data.pop("out")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # validation -----------------------------------------------------------

    def validate(self):
        checks = [
            ("waveguide", self.model),
            ("frequencies", self.frequency_grid),
            ("grid", self.search_grid),
            ("array", self.array_geometry),
            ("dataset.plateau_size", self.plateau),
        ]
        for path, build in checks:
            try:
                build()
            except ValueError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        ds = self.dataset
        _require(min(ds.train, ds.val, ds.test) >= 0 and ds.train + ds.val + ds.test > 0,
                 "dataset", "split counts must be non-negative with a positive total")
        _require(1 <= ds.n_min <= ds.n_max, "dataset.n_min", "need 1 <= n_min <= n_max")
        _require(ds.n_max <= self.grid.n_x * self.grid.n_y, "dataset.n_max", "exceeds the number of grid nodes")
        net = self.network
        _require(net.n_channels >= 1, "network.n_channels", "must be >= 1")
        _require(net.n_conv_layers >= 1, "network.n_conv_layers", "must be >= 1")
        _require(net.kernel_size >= 1 and net.kernel_size % 2 == 1, "network.kernel_size", "must be odd")
        tr = self.training
        _require(tr.epochs >= 1, "training.epochs", "must be >= 1")
        _require(tr.batch_size >= 1, "training.batch_size", "must be >= 1")
        _require(tr.patience >= 0, "training.patience", "must be >= 0")
        _require(tr.learning_rate > 0, "training.learning_rate", "must be positive")
        lo = self.loss
        _require(lo.w_nll >= 0 and lo.w_pi >= 0, "loss", "weights must be non-negative")
        _require(lo.eval_stride >= 1, "loss.eval_stride", "must be >= 1")
        f_lo = self.frequencies.f_c * (1 - self.frequencies.bandwidth_ratio / 2)
        f_hi = self.frequencies.f_c * (1 + self.frequencies.bandwidth_ratio / 2)
        for i, f in enumerate(lo.pi_frequencies):
            _require(f_lo - 1e-9 <= f <= f_hi + 1e-9, f"loss.pi_frequencies[{i}]", "outside the frequency band")
        ev = self.eval
        _require(0 < ev.threshold < 1, "eval.threshold", "must lie in (0, 1)")
        edges = list(ev.distance_edges)
        _require(len(edges) >= 1 and all(a < b for a, b in zip(edges, edges[1:])),
                 "eval.distance_edges", "must be strictly increasing")
        _require(all(e > 0 for e in ev.gaussian_eps), "eval.gaussian_eps", "must be positive")
        _require(all(e >= 0 for e in ev.uniform_eps), "eval.uniform_eps", "must be non-negative")

    # physics objects ------------------------------------------------------

    def model(self) -> WaveguideModel:
        return WaveguideModel(self.waveguide.c0, self.waveguide.depth)

    def frequency_grid(self) -> FrequencyGrid:
        f = self.frequencies
        return FrequencyGrid(f.f_c, f.bandwidth_ratio * f.f_c, f.n_freq)

    def array_geometry(self) -> ArrayGeometry:
        if not self.array.spacing > 0:
            raise ValueError("receiver spacing must be positive")
        geo = ArrayGeometry.uniform(self.waveguide.depth, self.array.spacing, self.array.x_a)
        geo.validate(self.model())
        return geo

    def search_grid(self) -> SearchGrid:
        return SearchGrid(**asdict(self.grid))

    def plateau(self) -> PlateauSpec:
        return PlateauSpec(self.dataset.plateau_size)

    def counts(self) -> dict:
        return {"train": self.dataset.train, "val": self.dataset.val, "test": self.dataset.test}

    def pi_frequencies(self) -> tuple:
        return tuple(self.loss.pi_frequencies) or (self.frequencies.f_c,)

    def distance_edges(self) -> tuple:
        return tuple(self.eval.distance_edges) + (math.inf,)

    def describe(self) -> dict:
        """Derived constants at the central frequency."""
        from .physics import propagating_mode_count

        model = self.model()
        k = model.wavenumber(self.frequencies.f_c)
        lam = model.wavelength(self.frequencies.f_c)
        return {
            "config_hash": self.config_hash(),
            "k_c": k,
            "propagating_modes": propagating_mode_count(model.depth, k),
            "wavelength_c": lam,
            "rayleigh_half_wavelength": lam / 2,
            "frequencies": self.frequency_grid().frequencies.tolist(),
            "n_receivers": self.array_geometry().n_receivers,
            "grid_spacing": [self.search_grid().h_x, self.search_grid().h_y],
        }


def _require(ok: bool, path: str, msg: str):
    if not ok:
        raise ConfigError(f"{path}: {msg}")


def _coerce(value, kind, path):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if kind is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(_coerce(v, float, f"{path}[{i}]") for i, v in enumerate(value))
    raise TypeError(kind)  # pragma: no cover


_KINDS = {"float": float, "int": int, "bool": bool, "str": str, "tuple": tuple}


def _section_from_dict(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    spec = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in spec:
            raise ConfigError(f"{path}.{key}: unknown key")
        kwargs[key] = _coerce(value, _KINDS[spec[key].type], f"{path}.{key}")
    return cls(**kwargs)


def preset(name: str) -> RunConfig:
    """``paper``: full-scale defaults. ``desk``: the reduced setup used by the acceptance study."""
    if name == "paper":
        return RunConfig()
    if name == "desk":
        return RunConfig(
            frequencies=FrequencySection(n_freq=9),
            array=ArraySection(spacing=20.0),
            grid=GridSection(n_x=36, n_y=26),
            dataset=DatasetSection(train=800, val=100, test=100),
            network=NetworkSection(),
            training=TrainingSection(epochs=25, patience=25),
            loss=LossSection(eval_stride=2),
            out="runs/desk",
        )
    raise ConfigError(f"preset: unknown preset {name!r} (choose 'paper' or 'desk')")


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: invalid JSON ({exc})") from None
    return RunConfig.from_dict(data)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
