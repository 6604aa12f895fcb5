"""Run configuration: INI text with a ``[run]`` section and per-class sections.

Every value defaults to the published training/inference settings; unknown
sections or keys are rejected.

Example::

    [run]
    cell = 0.16
    bins = 12

    [Pedestrian]
    sigma1 = 0.5
    sigma2 = 0.8
    iou_threshold = 0.5
"""
import configparser
from dataclasses import dataclass, field, fields, replace

from .targets import DEFAULT_SIGMAS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClassConfig:
    sigma1: float
    sigma2: float
    iou_threshold: float
    class_id: int


def _default_classes():
    iou = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
    return {name: ClassConfig(*DEFAULT_SIGMAS[name], iou[name], k + 1)
            for k, name in enumerate(("Car", "Pedestrian", "Cyclist"))}


@dataclass(frozen=True)
class RunConfig:
    x_min: float = 0.0
    x_max: float = 69.12
    y_min: float = -39.68
    y_max: float = 39.68
    cell: float = 0.16
    stride: int = 2
    max_pillars: int = 12000
    max_points: int = 100
    pillar_channels: int = 64
    bins: int = 12
    lambda_b: float = 1.0
    lambda_theta: float = 1.0
    lambda_D: float = 1.0
    lambda_joint: float = 0.5
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    top_k: int = 1000
    score_threshold: float = 0.05
    nms_threshold: float = 0.01
    classes: dict = field(default_factory=_default_classes)

    def __post_init__(self):
        if self.cell <= 0 or self.stride < 1 or self.bins < 2:
            raise ConfigError("cell must be positive, stride >= 1 and bins >= 2")
        if not (0 <= self.score_threshold <= 1 and 0 <= self.nms_threshold <= 1):
            raise ConfigError("score and NMS thresholds must lie in [0, 1]")
        for name, c in self.classes.items():
            if not 0 < c.sigma1 < c.sigma2 <= 1:
                raise ConfigError(f"[{name}] needs 0 < sigma1 < sigma2 <= 1")

    @property
    def feature_cell(self):
        """Meters per pixel of the head's feature map."""
        return self.cell * self.stride


_SCALARS = {f.name: f.type for f in fields(RunConfig) if f.name != "classes"}
_CAST = {"float": float, "int": int, float: float, int: int}


def parse_config(text, source="<config>"):
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    base = RunConfig()
    values = {}
    classes = dict(base.classes)
    for section in parser.sections():
        items = parser[section]
        if section == "run":
            for key, raw in items.items():
                if key not in _SCALARS:
                    raise ConfigError(f"{source}: unknown key {key!r} in [run]")
                try:
                    values[key] = _CAST[_SCALARS[key]](raw)
                except ValueError:
                    raise ConfigError(f"{source}: bad value {raw!r} for {key}") from None
        elif section in classes:
            upd = {}
            for key, raw in items.items():
                if key not in ("sigma1", "sigma2", "iou_threshold"):
                    raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
                try:
                    upd[key] = float(raw)
                except ValueError:
                    raise ConfigError(f"{source}: bad value {raw!r} for {section}.{key}") from None
            classes[section] = replace(classes[section], **upd)
        else:
            raise ConfigError(f"{source}: unknown section [{section}]")
    return RunConfig(**values, classes=classes)


def load_config(path=None):
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_config(fh.read(), str(path))
