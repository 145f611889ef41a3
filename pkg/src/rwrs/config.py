"""JSON experiment configurations with a versioned schema."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .exceedance import Box
from .poisson_tests import DEFAULT_BOXES, ExperimentConfig
from .scenery import FAMILIES, ScenerySpec
from .simkit import McEstimate, RngKey
from .stable_walk import StepLaw, estimate_q

SCHEMA_VERSION = "rwrs-config/1"

_number_or_null = {"type": ["number", "null"]}

SCHEMA = {
    "type": "object",
    "required": ["schema", "law", "scenery", "n", "reps"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "law": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["zipf", "unit"]},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "tail_cutoff": {"type": "integer", "minimum": 1},
            },
            "if": {"properties": {"family": {"const": "zipf"}}},
            "then": {"required": ["alpha"]},
        },
        "scenery": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": list(FAMILIES)},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "m": {"type": "integer", "minimum": 2},
                "weights": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "ar_rho": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "n": {"type": "integer", "minimum": 8},
        "reps": {"type": "integer", "minimum": 1},
        "levels": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "boxes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["t", "v"],
                "additionalProperties": False,
                "properties": {
                    "t": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                    "v": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "array", "prefixItems": [{"type": "number"}, _number_or_null], "minItems": 2, "maxItems": 2},
                    },
                },
            },
        },
        "negative_control": {"type": "boolean"},
        "q": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "value": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "stderr": {"type": "number", "minimum": 0},
                "horizon": {"type": "integer", "minimum": 1},
                "reps": {"type": "integer", "minimum": 2},
            },
        },
        "diagnostics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_grid": {"type": "array", "items": {"type": "integer", "minimum": 8}, "minItems": 1},
                "reps": {"type": "integer", "minimum": 2},
                "x": {"type": "number"},
                "k_ladder": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "c": {"type": "number", "minimum": 0},
                "inner_reps": {"type": "integer", "minimum": 2},
                "return_reps": {"type": "integer", "minimum": 2},
                "dk_ratio_threshold": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


class ConfigError(ValueError):
    """Malformed or invalid configuration; the message names the line and field."""


@dataclass(frozen=True)
class DiagnosticsSettings:
    n_grid: tuple[int, ...] = (1000, 10000)
    reps: int = 200
    x: float = 1.0
    k_ladder: tuple[int, ...] = (1, 2, 4, 8, 16)
    c: float = 1.0
    inner_reps: int = 100
    return_reps: int = 2000
    dk_ratio_threshold: float = 0.2


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration file plus its content digest."""

    raw: dict
    text: str
    law: StepLaw
    spec: ScenerySpec
    n: int
    reps: int
    seed: int
    levels: tuple[float, ...]
    boxes: tuple[Box, ...]
    negative_control: bool
    q: dict = field(default_factory=dict)
    diagnostics: DiagnosticsSettings = DiagnosticsSettings()

    @property
    def name(self) -> str:
        return self.raw.get("name", "run")

    def digest(self, seed: int | None = None) -> str:
        """sha256 of the canonical config with the effective seed."""
        body = dict(self.raw, seed=self.seed if seed is None else seed)
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def resolve_q(self, seed: int | None = None, workers: int = 1) -> McEstimate:
        """q from the config, or a fresh return-based estimate, or 1 for the unit walk."""
        if self.law.family == "unit":
            return McEstimate(1.0, 0.0, 2)
        if "value" in self.q:
            return McEstimate(float(self.q["value"]), float(self.q.get("stderr", 0.0)), 2)
        key = RngKey(self.seed if seed is None else seed, 1)
        report = estimate_q(self.law, self.q.get("horizon", 10_000), self.q.get("reps", 20_000), key, workers=workers)
        return report.return_based

    def experiment(self, q_hat: McEstimate, seed: int | None = None, reps: int | None = None) -> ExperimentConfig:
        return ExperimentConfig(
            law=self.law,
            spec=self.spec,
            n=self.n,
            reps=self.reps if reps is None else reps,
            boxes=self.boxes,
            levels=self.levels,
            q_hat=q_hat,
            master_seed=self.seed if seed is None else seed,
            negative_control=self.negative_control,
        )


def _line_of(text: str, path: list) -> int | None:
    """Best-effort line number of the last named key on ``path``."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(keys[-1]), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for err in errors:
            path = list(err.absolute_path)
            where = ".".join(str(p) for p in path) or "<root>"
            line = _line_of(text, path)
            loc = f"{source}:{line}" if line else source
            msgs.append(f"{loc}: field '{where}': {err.message}")
        raise ConfigError("\n".join(msgs))
    try:
        law = StepLaw.from_dict(raw["law"])
        spec = ScenerySpec.from_dict(raw["scenery"])
        boxes = tuple(Box.from_dict(b) for b in raw["boxes"]) if "boxes" in raw else DEFAULT_BOXES
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if spec.family == "moving_max" and not raw.get("negative_control", False):
        raise ConfigError(f"{source}:{_line_of(text, ['scenery'])}: field 'negative_control': moving_max sceneries violate D' and must be flagged as a negative control")
    diag = raw.get("diagnostics", {})
    settings = DiagnosticsSettings(
        **{k: tuple(v) if isinstance(v, list) else v for k, v in diag.items()}
    )
    return RunConfig(
        raw=raw,
        text=text,
        law=law,
        spec=spec,
        n=raw["n"],
        reps=raw["reps"],
        seed=raw.get("seed", 0),
        levels=tuple(float(x) for x in raw.get("levels", [1.0])),
        boxes=boxes,
        negative_control=raw.get("negative_control", False),
        q=raw.get("q", {}),
        diagnostics=settings,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def shipped_configs() -> list[Path]:
    """Paths of the preset configurations bundled with the package."""
    root = resources.files("rwrs") / "configs"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))
