"""Experiment configuration: a line-based ``section.key = value`` text format.

Blank lines and ``#`` comments are ignored. Lists are whitespace or comma
separated. Every key has a default, unknown keys are rejected, and ``dump``
writes a resolved configuration that ``loads`` reads back unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .kinematics import ArmModel, DhLink
from .losses import EXTRACTORS, RegWeights
from .pipeline import PipelineConfig, Scene
from .renderer import Camera
from .synth import DOMAINS, DomainSpec, NoiseSpec, TrajectorySpec


class ConfigError(ValueError):
    pass


_P = float(np.pi / 2)
_ARM = {
    "a": (0.10, 0.09, 0.08, 0.06, 0.05, 0.035, 0.012),
    "alpha": (_P, -_P, _P, -_P, _P, 0.0, 0.0),
    "d": (0.0,) * 7,
    "theta": (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.25),
    "kind": ("revolute",) * 7,
    "radius": (0.008, 0.008, 0.007, 0.006, 0.005, 0.005, 0.003),
    "has_jaw": True,
}
_HOME = (-0.3, 0.4, 0.3, 0.5, -0.3, 0.4, 0.4, 0.3, -0.4, -0.3, -0.5, 0.3, -0.4, 0.4)
_LEFT_TRUE = (0.0, 0.0, 0.0, -0.27, -0.02, 0.42)
_RIGHT_TRUE = (0.0, 0.0, 2.95, 0.27, 0.04, 0.45)
_LEFT_INIT = (0.01, -0.015, 0.01, -0.267, -0.023, 0.422)
_RIGHT_INIT = (-0.012, 0.01, 2.94, 0.267, 0.042, 0.448)


def _pos(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _all(check):
    return lambda xs: all(check(x) for x in xs)


@dataclass(frozen=True)
class Field:
    default: Any
    kind: str  # int, float, bool, str, floats, ints, strs
    check: Callable[[Any], bool] | None = None
    rule: str = ""


def F(default, kind, check=None, rule=""):
    return Field(default, kind, check, rule)


def _arm_fields():
    return {
        "a": F(_ARM["a"], "floats", _all(np.isfinite), "finite"),
        "alpha": F(_ARM["alpha"], "floats", _all(np.isfinite), "finite"),
        "d": F(_ARM["d"], "floats", _all(np.isfinite), "finite"),
        "theta": F(_ARM["theta"], "floats", _all(np.isfinite), "finite"),
        "kind": F(_ARM["kind"], "strs", _all(lambda k: k in ("revolute", "prismatic")),
                  "revolute or prismatic"),
        "radius": F(_ARM["radius"], "floats", _all(_pos), "> 0"),
        "has_jaw": F(True, "bool"),
    }


SCHEMA: dict[str, dict[str, Field]] = {
    "synth": {
        "length": F(100, "int", lambda x: x >= 1, ">= 1"),
        "offset": F(_HOME, "floats"),
        "amplitude": F((0.25,), "floats", _all(_nonneg), ">= 0"),
        "freq_min": F(0.02, "float", _nonneg, ">= 0"),
        "freq_max": F(0.06, "float", _nonneg, ">= 0"),
        "sinusoids": F(3, "int", lambda x: x >= 1, ">= 1"),
        "tool_intensity": F(0.85, "float", lambda x: 0 <= x <= 1, "in [0, 1]"),
        "tau": F(1.5, "float", _pos, "> 0"),
        "sensor_noise": F(0.01, "float", _nonneg, ">= 0"),
        "scene_seed": F(7, "int"),
        "bg_variation": F(0.08, "float", _nonneg, ">= 0"),
    },
    "noise": {
        "sigma_w": F(0.02, "float", _nonneg, ">= 0"),
        "sigma_b": F(0.005, "float", _nonneg, ">= 0"),
        "scale": F((), "floats", _all(_nonneg), ">= 0"),
    },
    "domain": {
        "kind": F("regular", "str", lambda k: k in DOMAINS, "one of " + ", ".join(DOMAINS)),
        "brightness": F(0.4, "float", _nonneg, ">= 0"),
        "smoke": F(0.35, "float", _nonneg, ">= 0"),
        "bleed": F(-0.5, "float", lambda x: -1 <= x <= 0, "in [-1, 0]"),
        "bleed_count": F(6, "int", _nonneg, ">= 0"),
        "bleed_radius": F(14.0, "float", _pos, "> 0"),
        "seed": F(0, "int"),
    },
    "pipeline": {
        "k": F(5, "int", _nonneg, ">= 0"),
        "n": F(5, "int", lambda x: x >= 1, ">= 1"),
        "lr_theta": F(5e-5, "float", _pos, "> 0"),
        "lr_base": F(3e-6, "float", _pos, "> 0"),
        "lr_kin": F(2e-3, "float", _pos, "> 0"),
        "lambda1": F(10.0, "float", _nonneg, ">= 0"),
        "lambda2": F(1.0, "float", _nonneg, ">= 0"),
        "tau": F(1.5, "float", _pos, "> 0"),
        "dilate_radius": F(6.0, "float", _nonneg, ">= 0"),
        "tool_intensity": F(0.85, "float", lambda x: 0 <= x <= 1, "in [0, 1]"),
        "threshold": F(0.5, "float", lambda x: 0 < x < 1, "in (0, 1)"),
        "use_kcn": F(True, "bool"),
        "use_reg": F(True, "bool"),
        "optimize_base": F(True, "bool"),
        "carry_state": F(True, "bool"),
        "shared_base": F(False, "bool"),
        "hidden": F((32, 64, 128, 128, 64, 32), "ints", _all(lambda x: x >= 1), ">= 1"),
        "kcn_seed": F(0, "int"),
        "features": F("filter-bank", "str", lambda x: x in EXTRACTORS, "one of " + ", ".join(EXTRACTORS)),
    },
    "camera": {
        "fx": F(180.0, "float", _pos, "> 0"),
        "fy": F(180.0, "float", _pos, "> 0"),
        "cx": F(80.0, "float"),
        "cy": F(60.0, "float"),
        "width": F(160, "int", lambda x: x >= 1, ">= 1"),
        "height": F(120, "int", lambda x: x >= 1, ">= 1"),
        "pose": F((0.0,) * 6, "floats", lambda xs: len(xs) == 6, "6 values"),
    },
    "arm_left": _arm_fields(),
    "arm_right": _arm_fields(),
    "base": {
        "left_true": F(_LEFT_TRUE, "floats", lambda xs: len(xs) == 6, "6 values"),
        "right_true": F(_RIGHT_TRUE, "floats", lambda xs: len(xs) == 6, "6 values"),
        "left_init": F(_LEFT_INIT, "floats", lambda xs: len(xs) == 6, "6 values"),
        "right_init": F(_RIGHT_INIT, "floats", lambda xs: len(xs) == 6, "6 values"),
    },
    "sweep": {
        "k_values": F((1, 2, 3, 5, 10, 30, 50), "ints", _all(_nonneg), ">= 0"),
        "baseline": F(True, "bool"),
        "n_values": F((1, 3, 5, 10, 20, 40), "ints", _all(lambda x: x >= 1), ">= 1"),
        "lambda1_values": F((0.0, 1.0, 10.0, 100.0, 1000.0, 10000.0), "floats", _all(_nonneg), ">= 0"),
        "lambda2_values": F((0.0, 0.1, 1.0, 10.0, 100.0, 1000.0), "floats", _all(_nonneg), ">= 0"),
        "axes": F(("k",), "strs", _all(lambda a: a in ("k", "n", "lambda1", "lambda2")),
                  "k, n, lambda1 or lambda2"),
    },
    "ablate": {
        "k_values": F((1, 3, 5, 10), "ints", _all(_nonneg), ">= 0"),
    },
    "experiment": {
        "seeds": F((1, 2, 3), "ints", lambda xs: len(xs) >= 1, "at least one seed"),
        "workers": F(1, "int", lambda x: x >= 1, ">= 1"),
        "record_time": F(True, "bool"),
    },
    "paths": {
        "data": F("data", "str", lambda s: s != "", "non-empty"),
        "results": F("results", "str", lambda s: s != "", "non-empty"),
        "report": F("report", "str", lambda s: s != "", "non-empty"),
    },
}

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _parse(text: str, kind: str):
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind == "str":
        if not text:
            raise ValueError("expected a non-empty value")
        return text
    items = [t for t in text.replace(",", " ").split() if t]
    if kind == "floats":
        return tuple(float(t) for t in items)
    if kind == "ints":
        return tuple(int(t) for t in items)
    if kind == "strs":
        return tuple(items)
    raise AssertionError(kind)


def _format(value, kind: str) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind in ("int", "str"):
        return str(value)
    if kind == "floats":
        return " ".join(repr(float(v)) for v in value)
    return " ".join(str(v) for v in value)


class ExperimentConfig:
    """Resolved configuration with builders for the runtime objects."""

    def __init__(self, values: dict[str, dict[str, Any]] | None = None):
        self.values = {s: {k: f.default for k, f in keys.items()} for s, keys in SCHEMA.items()}
        for section, keys in (values or {}).items():
            for key, value in keys.items():
                self.set(f"{section}.{key}", value)
        self.validate()

    def __getitem__(self, dotted: str):
        section, key = _split(dotted)
        return self.values[section][key]

    def set(self, dotted: str, value) -> None:
        section, key = _split(dotted)
        field = SCHEMA[section][key]
        if isinstance(value, str):
            try:
                value = _parse(value, field.kind)
            except ValueError as exc:
                raise ConfigError(f"{dotted}: {exc}") from None
        if field.check is not None and not field.check(value):
            raise ConfigError(f"{dotted} = {value!r} violates constraint: {field.rule}")
        self.values[section][key] = value

    def validate(self) -> None:
        for section, keys in SCHEMA.items():
            for key, field in keys.items():
                value = self.values[section][key]
                if field.check is not None and not field.check(value):
                    raise ConfigError(f"{section}.{key} = {value!r} violates constraint: {field.rule}")
        if self["synth.freq_min"] > self["synth.freq_max"]:
            raise ConfigError("synth.freq_min must not exceed synth.freq_max")
        for side in ("arm_left", "arm_right"):
            lengths = {k: len(self.values[side][k]) for k in ("a", "alpha", "d", "theta", "kind", "radius")}
            if len(set(lengths.values())) != 1:
                raise ConfigError(f"{side}: per-link lists differ in length {lengths}")
        d = len(self.values["arm_left"]["a"]) + len(self.values["arm_right"]["a"])
        for dotted in ("synth.offset", "synth.amplitude", "noise.scale"):
            if len(self[dotted]) not in (0, 1, d):
                raise ConfigError(f"{dotted} needs 1 or {d} values, got {len(self[dotted])}")
        try:
            self.pipeline()
            self.camera()
            self.arms()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def copy(self) -> ExperimentConfig:
        return ExperimentConfig({s: dict(v) for s, v in self.values.items()})

    def with_overrides(self, assignments) -> ExperimentConfig:
        out = self.copy()
        for item in assignments:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not section.key=value")
            key, value = item.split("=", 1)
            out.set(key.strip(), value)
        out.validate()
        return out

    def dump(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            for key, field in keys.items():
                lines.append(f"{section}.{key} = {_format(self.values[section][key], field.kind)}")
            lines.append("")
        return "\n".join(lines)

    # ---- builders

    @property
    def seeds(self) -> list[int]:
        return sorted(set(self["experiment.seeds"]))

    def trajectory(self, seed: int) -> TrajectorySpec:
        return TrajectorySpec(self["synth.length"], tuple(self["synth.offset"]),
                              tuple(self["synth.amplitude"]), self["synth.freq_min"],
                              self["synth.freq_max"], self["synth.sinusoids"], seed)

    def noise(self, seed: int) -> NoiseSpec:
        return NoiseSpec(self["noise.sigma_w"], self["noise.sigma_b"], tuple(self["noise.scale"]), seed)

    def domain(self) -> DomainSpec:
        v = self.values["domain"]
        return DomainSpec(v["kind"], v["brightness"], v["smoke"], v["bleed"], v["bleed_count"],
                          v["bleed_radius"], v["seed"])

    def camera(self) -> Camera:
        v = self.values["camera"]
        return Camera(v["fx"], v["fy"], v["cx"], v["cy"], v["width"], v["height"],
                      np.array(v["pose"], dtype=np.float64))

    def arms(self) -> tuple[ArmModel, ...]:
        out = []
        for side in ("arm_left", "arm_right"):
            v = self.values[side]
            links = tuple(DhLink(a, al, d, th, kind, r) for a, al, d, th, kind, r
                          in zip(v["a"], v["alpha"], v["d"], v["theta"], v["kind"], v["radius"]))
            out.append(ArmModel(side.split("_", 1)[1], links, v["has_jaw"]))
        return tuple(out)

    def bases_true(self) -> np.ndarray:
        return np.array([self["base.left_true"], self["base.right_true"]], dtype=np.float64)

    def bases_init(self) -> np.ndarray:
        return np.array([self["base.left_init"], self["base.right_init"]], dtype=np.float64)

    def pipeline(self) -> PipelineConfig:
        v = self.values["pipeline"]
        return PipelineConfig(
            k=v["k"], n=v["n"], lr_theta=v["lr_theta"], lr_base=v["lr_base"], lr_kin=v["lr_kin"],
            reg=RegWeights(v["lambda1"], v["lambda2"]), tau=v["tau"],
            dilate_radius=v["dilate_radius"], tool_intensity=v["tool_intensity"],
            threshold=v["threshold"], use_kcn=v["use_kcn"], use_reg=v["use_reg"],
            optimize_base=v["optimize_base"], carry_state=v["carry_state"],
            shared_base=v["shared_base"], hidden=tuple(v["hidden"]), kcn_seed=v["kcn_seed"],
            features=v["features"])

    def scene(self, background) -> Scene:
        return Scene(self.arms(), self.camera(), np.asarray(background, dtype=np.float64),
                     self.bases_init())

    def generator_kwargs(self) -> dict:
        v = self.values["synth"]
        return dict(tool_intensity=v["tool_intensity"], tau=v["tau"], sensor_noise=v["sensor_noise"],
                    scene_seed=v["scene_seed"], bg_variation=v["bg_variation"])


def _split(dotted: str) -> tuple[str, str]:
    if dotted.count(".") != 1:
        raise ConfigError(f"key {dotted!r} is not of the form section.key")
    section, key = (p.strip() for p in dotted.split("."))
    if section not in SCHEMA:
        raise ConfigError(f"unknown section {section!r} in {dotted!r}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {dotted!r}")
    return section, key


def loads(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: {key} already set on line {seen[key]}")
        seen[key] = lineno
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return loads(text, str(path))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(cfg.dump(), encoding="utf-8")
