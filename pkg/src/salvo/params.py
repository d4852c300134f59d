"""Parameter schemas, model manifests, and the layered precedence resolver.

Every invocation's parameters come from a four-layer ladder, from greatest
to least precedence: run overrides, experiment overrides, model defaults,
global defaults. ``resolve`` walks the ladder and validates every value;
``resolve_aliases`` then turns the ``default`` sentinels into concrete
pipeline settings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import (
    ConstraintViolationError,
    CrossFieldViolationError,
    InvalidInputError,
    NameCollisionError,
    ParseError,
    SchemaError,
    UnknownParameterError,
)
from .raster import ColorSpace

Scalar = str | int | float

GLOBAL_PARAMETER_NAMES = (
    "do_smoothing",
    "smooth_size",
    "smooth_std",
    "smooth_prop",
    "scale_output",
    "scale_min",
    "scale_max",
    "color_space",
)

#: Provenance tags, in precedence order.
LAYER_RUN = "run"
LAYER_EXPERIMENT = "experiment"
LAYER_MODEL_DEFAULT = "model_default"
LAYER_GLOBAL_DEFAULT = "global_default"

MODEL_TYPES = ("native", "external")

DEFAULT_EXTERNAL_TIMEOUT_S = 300.0


# --- constraints -------------------------------------------------------------

class Constraint:
    """Machine-checkable counterpart of a parameter's prose ``valid_values``."""

    def check(self, value: Scalar) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class EnumConstraint(Constraint):
    values: tuple[str, ...]

    def check(self, value: Scalar) -> bool:
        return isinstance(value, str) and value in self.values


@dataclass(frozen=True)
class IntRangeConstraint(Constraint):
    min_exclusive: int | None = None
    max_exclusive: int | None = None
    odd: bool = False

    def check(self, value: Scalar) -> bool:
        if isinstance(value, bool) or not isinstance(value, int):
            return False
        if self.min_exclusive is not None and value <= self.min_exclusive:
            return False
        if self.max_exclusive is not None and value >= self.max_exclusive:
            return False
        if self.odd and value % 2 == 0:
            return False
        return True


@dataclass(frozen=True)
class FloatRangeConstraint(Constraint):
    min_exclusive: float | None = None
    max_exclusive: float | None = None

    def check(self, value: Scalar) -> bool:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return False
        if not math.isfinite(value):
            return False
        if self.min_exclusive is not None and value <= self.min_exclusive:
            return False
        if self.max_exclusive is not None and value >= self.max_exclusive:
            return False
        return True


@dataclass(frozen=True)
class CrossFieldConstraint(Constraint):
    """A rule that relates several parameters, checked after resolution."""

    rule: str

    def check(self, value: Scalar) -> bool:
        # Only the scalar type can be checked in isolation.
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _check_scale_bounds(values: Mapping[str, Scalar]) -> str | None:
    lo, hi = values.get("scale_min"), values.get("scale_max")
    if lo is not None and hi is not None and not lo < hi:
        return f"scale_min ({lo}) must be strictly less than scale_max ({hi})"
    return None


CROSS_FIELD_RULES = {
    "scale_min_lt_scale_max": _check_scale_bounds,
}


def parse_constraint(obj: object, where: str) -> Constraint:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: constraint must be an object, got {type(obj).__name__}")
    kind = obj.get("kind")
    known = {k for k in obj if k != "kind"}
    if kind == "enum":
        if known - {"values"}:
            raise SchemaError(f"{where}: unknown enum constraint keys {sorted(known - {'values'})}")
        values = obj.get("values")
        if not isinstance(values, list) or not values or not all(isinstance(v, str) for v in values):
            raise SchemaError(f"{where}: enum constraint needs a non-empty list of strings")
        return EnumConstraint(tuple(values))
    if kind in ("int_range", "float_range"):
        allowed = {"min_exclusive", "max_exclusive"} | ({"odd"} if kind == "int_range" else set())
        if known - allowed:
            raise SchemaError(f"{where}: unknown {kind} constraint keys {sorted(known - allowed)}")
        lo, hi = obj.get("min_exclusive"), obj.get("max_exclusive")
        if lo is not None and hi is not None and not lo < hi:
            raise SchemaError(f"{where}: degenerate range ({lo}, {hi})")
        if kind == "int_range":
            return IntRangeConstraint(lo, hi, bool(obj.get("odd", False)))
        return FloatRangeConstraint(lo, hi)
    if kind == "cross_field":
        if known - {"rule"}:
            raise SchemaError(f"{where}: unknown cross_field constraint keys {sorted(known - {'rule'})}")
        rule = obj.get("rule")
        if rule not in CROSS_FIELD_RULES:
            raise SchemaError(f"{where}: unknown cross-field rule {rule!r}")
        return CrossFieldConstraint(rule)
    raise SchemaError(f"{where}: unknown constraint kind {kind!r}")


# --- parameter specs ----------------------------------------------------------

@dataclass(frozen=True)
class ParameterSpec:
    """One declared parameter: default, human docs, and machine constraint."""

    name: str
    default: Scalar
    description: str
    valid_values: str
    constraint: Constraint

    def check(self, value: Scalar) -> None:
        """Raise ``ConstraintViolationError`` unless ``value`` is acceptable."""
        if not self.constraint.check(value):
            raise ConstraintViolationError(self.name, value, self.valid_values)


_PARAM_SPEC_KEYS = {"default", "description", "valid_values", "constraint"}


def _parse_parameter_spec(name: str, obj: object, where: str) -> ParameterSpec:
    here = f"{where}: parameter {name!r}"
    if not isinstance(obj, dict):
        raise SchemaError(f"{here} must be an object")
    missing = _PARAM_SPEC_KEYS - obj.keys()
    if missing:
        raise SchemaError(f"{here} is missing {sorted(missing)}")
    unknown = obj.keys() - _PARAM_SPEC_KEYS
    if unknown:
        raise SchemaError(f"{here} has unknown keys {sorted(unknown)}")
    default = obj["default"]
    if isinstance(default, bool) or not isinstance(default, (str, int, float)):
        raise SchemaError(f"{here}: default must be a string or number")
    if not isinstance(obj["description"], str) or not isinstance(obj["valid_values"], str):
        raise SchemaError(f"{here}: description and valid_values must be strings")
    constraint = parse_constraint(obj["constraint"], here)
    spec = ParameterSpec(name, default, obj["description"], obj["valid_values"], constraint)
    if not constraint.check(default):
        raise SchemaError(f"{here}: default {default!r} violates its own constraint")
    return spec


def _parse_parameters(obj: object, where: str) -> dict[str, ParameterSpec]:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: 'parameters' must be an object")
    return {name: _parse_parameter_spec(name, spec, where) for name, spec in obj.items()}


# --- global configuration -----------------------------------------------------

@dataclass(frozen=True)
class GlobalConfig:
    """The eight framework-wide parameters every model shares."""

    parameters: Mapping[str, ParameterSpec]


def load_global_config(path: str | Path) -> GlobalConfig:
    """Load and validate the global parameter file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    unknown = doc.keys() - {"parameters"}
    if unknown:
        raise SchemaError(f"{path}: unknown top-level keys {sorted(unknown)}")
    if "parameters" not in doc:
        raise SchemaError(f"{path}: missing 'parameters'")
    params = _parse_parameters(doc["parameters"], str(path))
    missing = set(GLOBAL_PARAMETER_NAMES) - params.keys()
    if missing:
        raise SchemaError(f"{path}: missing global parameters {sorted(missing)}")
    extra = params.keys() - set(GLOBAL_PARAMETER_NAMES)
    if extra:
        raise SchemaError(f"{path}: unknown global parameters {sorted(extra)}")
    return GlobalConfig(params)


def default_global_config() -> GlobalConfig:
    """The configuration shipped with the package."""
    with resources.as_file(resources.files("salvo") / "data" / "config.json") as p:
        return load_global_config(p)


# --- model manifests -----------------------------------------------------------

@dataclass(frozen=True)
class AssetSpec:
    """A downloadable file a model needs before it can run."""

    relative_path: str
    url: str
    sha256: str


@dataclass(frozen=True)
class SmoothingPreference:
    size: int
    std: float


@dataclass(frozen=True)
class BorderTrim:
    """Per-side margin a model trims off its output (it returns only the
    valid interior region); the framework pads it back."""

    top: int
    bottom: int
    left: int
    right: int


@dataclass(frozen=True)
class LaunchSpec:
    """How to start an external model process.

    ``{model_dir}`` inside command arguments expands to the model's
    directory, so manifests can reference their own files portably.
    """

    command: tuple[str, ...]
    env: Mapping[str, str] = field(default_factory=dict)
    cwd: str | None = None


@dataclass(frozen=True)
class ModelManifest:
    """Per-model descriptor loaded from ``<model_dir>/manifest.json``."""

    name: str
    long_name: str
    citation: str
    model_type: str
    model_files: tuple[AssetSpec, ...] = ()
    parameters: Mapping[str, ParameterSpec] = field(default_factory=dict)
    notes: str | None = None
    preferred_color_space: ColorSpace | None = None
    preferred_smoothing: SmoothingPreference | None = None
    output_trim: BorderTrim | None = None
    launch: LaunchSpec | None = None
    timeout_s: float = DEFAULT_EXTERNAL_TIMEOUT_S
    model_dir: Path | None = None


_MANIFEST_KEYS = {
    "name",
    "long_name",
    "citation",
    "model_type",
    "model_files",
    "parameters",
    "notes",
    "preferred_color_space",
    "preferred_smoothing",
    "output_trim",
    "launch",
    "timeout_s",
}

_HEX_DIGITS = set("0123456789abcdef")


def _parse_asset(obj: object, where: str) -> AssetSpec:
    if not isinstance(obj, dict) or obj.keys() != {"relative_path", "url", "sha256"}:
        raise SchemaError(f"{where}: each model_files entry needs exactly relative_path, url, sha256")
    rel, url, sha = obj["relative_path"], obj["url"], obj["sha256"]
    if not isinstance(rel, str) or not rel or Path(rel).is_absolute() or ".." in Path(rel).parts:
        raise SchemaError(f"{where}: asset relative_path {rel!r} must be a safe relative path")
    if not isinstance(url, str) or not url:
        raise SchemaError(f"{where}: asset url must be a non-empty string")
    if not isinstance(sha, str) or len(sha) != 64 or not set(sha) <= _HEX_DIGITS:
        raise SchemaError(f"{where}: asset sha256 must be 64 lowercase hex characters")
    return AssetSpec(rel, url, sha)


def load_manifest(path: str | Path) -> ModelManifest:
    """Load and validate one model manifest file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object")
    unknown = doc.keys() - _MANIFEST_KEYS
    if unknown:
        raise SchemaError(f"{path}: unknown manifest keys {sorted(unknown)}")
    for key in ("name", "long_name", "citation", "model_type"):
        if not isinstance(doc.get(key), str) or not doc[key]:
            raise SchemaError(f"{path}: {key!r} must be a non-empty string")
    if doc["model_type"] not in MODEL_TYPES:
        raise SchemaError(f"{path}: model_type must be one of {MODEL_TYPES}, got {doc['model_type']!r}")

    assets = tuple(_parse_asset(a, str(path)) for a in doc.get("model_files", []))
    params = _parse_parameters(doc.get("parameters", {}), str(path))
    shadowed = params.keys() & set(GLOBAL_PARAMETER_NAMES)
    if shadowed:
        raise NameCollisionError(
            f"{path}: model parameters {sorted(shadowed)} shadow global parameter names"
        )

    notes = doc.get("notes")
    if notes is not None and not isinstance(notes, str):
        raise SchemaError(f"{path}: notes must be a string")

    preferred_space = None
    if "preferred_color_space" in doc:
        raw = doc["preferred_color_space"]
        try:
            preferred_space = ColorSpace(raw)
        except ValueError:
            raise SchemaError(f"{path}: unknown preferred_color_space {raw!r}") from None
        if preferred_space is ColorSpace.DEFAULT:
            raise SchemaError(f"{path}: preferred_color_space may not be the 'default' alias")

    preferred_smoothing = None
    if "preferred_smoothing" in doc:
        raw = doc["preferred_smoothing"]
        if not isinstance(raw, dict) or raw.keys() != {"size", "std"}:
            raise SchemaError(f"{path}: preferred_smoothing needs exactly 'size' and 'std'")
        size, std = raw["size"], raw["std"]
        if not isinstance(size, int) or isinstance(size, bool) or size < 1 or size % 2 == 0:
            raise SchemaError(f"{path}: preferred_smoothing size must be an odd integer >= 1")
        if not isinstance(std, (int, float)) or isinstance(std, bool) or std <= 0:
            raise SchemaError(f"{path}: preferred_smoothing std must be > 0")
        preferred_smoothing = SmoothingPreference(size, float(std))

    output_trim = None
    if "output_trim" in doc:
        raw = doc["output_trim"]
        sides = ("top", "bottom", "left", "right")
        if not isinstance(raw, dict) or raw.keys() != set(sides):
            raise SchemaError(f"{path}: output_trim needs exactly top, bottom, left, right")
        amounts = []
        for side in sides:
            amount = raw[side]
            if not isinstance(amount, int) or isinstance(amount, bool) or amount < 0:
                raise SchemaError(f"{path}: output_trim {side} must be a non-negative integer")
            amounts.append(amount)
        output_trim = BorderTrim(*amounts)

    launch = None
    if "launch" in doc:
        raw = doc["launch"]
        if not isinstance(raw, dict) or not raw.keys() <= {"command", "env", "cwd"}:
            raise SchemaError(f"{path}: launch accepts only command, env, cwd")
        command = raw.get("command")
        if (
            not isinstance(command, list)
            or not command
            or not all(isinstance(c, str) for c in command)
        ):
            raise SchemaError(f"{path}: launch command must be a non-empty list of strings")
        env = raw.get("env", {})
        if not isinstance(env, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in env.items()
        ):
            raise SchemaError(f"{path}: launch env must map strings to strings")
        cwd = raw.get("cwd")
        if cwd is not None and not isinstance(cwd, str):
            raise SchemaError(f"{path}: launch cwd must be a string")
        launch = LaunchSpec(tuple(command), dict(env), cwd)

    if doc["model_type"] == "external" and launch is None:
        raise SchemaError(f"{path}: external models must declare how to launch them")
    if doc["model_type"] == "native" and launch is not None:
        raise SchemaError(f"{path}: native models run in-process and take no launch spec")

    timeout_s = doc.get("timeout_s", DEFAULT_EXTERNAL_TIMEOUT_S)
    if not isinstance(timeout_s, (int, float)) or isinstance(timeout_s, bool) or timeout_s <= 0:
        raise SchemaError(f"{path}: timeout_s must be a positive number")

    return ModelManifest(
        name=doc["name"],
        long_name=doc["long_name"],
        citation=doc["citation"],
        model_type=doc["model_type"],
        model_files=assets,
        parameters=params,
        notes=notes,
        preferred_color_space=preferred_space,
        preferred_smoothing=preferred_smoothing,
        output_trim=output_trim,
        launch=launch,
        timeout_s=float(timeout_s),
        model_dir=path.parent,
    )


# --- resolution -----------------------------------------------------------------

@dataclass(frozen=True)
class ResolvedParams:
    """A complete, validated name->value mapping for one invocation."""

    values: Mapping[str, Scalar]
    provenance: Mapping[str, str]

    def __getitem__(self, name: str) -> Scalar:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values


def resolve(
    manifest: ModelManifest,
    global_config: GlobalConfig,
    experiment_params: Mapping[str, Scalar] | None = None,
    run_params: Mapping[str, Scalar] | None = None,
) -> ResolvedParams:
    """Resolve every parameter through the precedence ladder and validate it.

    Precedence, from greatest to least: run overrides, experiment overrides,
    the model's own defaults (for model-specific parameters), global
    defaults. Raises ``UnknownParameterError`` for names that exist nowhere,
    ``ConstraintViolationError`` for bad values, and
    ``CrossFieldViolationError`` when the resolved set breaks a cross-field
    rule.
    """
    experiment_params = dict(experiment_params or {})
    run_params = dict(run_params or {})
    specs: dict[str, ParameterSpec] = dict(global_config.parameters)
    specs.update(manifest.parameters)

    unknown = (experiment_params.keys() | run_params.keys()) - specs.keys()
    if unknown:
        raise UnknownParameterError(
            f"unknown parameter(s) for model {manifest.name!r}: {sorted(unknown)}"
        )

    values: dict[str, Scalar] = {}
    provenance: dict[str, str] = {}
    for name, spec in specs.items():
        if name in run_params:
            value, layer = run_params[name], LAYER_RUN
        elif name in experiment_params:
            value, layer = experiment_params[name], LAYER_EXPERIMENT
        elif name in manifest.parameters:
            value, layer = spec.default, LAYER_MODEL_DEFAULT
        else:
            value, layer = spec.default, LAYER_GLOBAL_DEFAULT
        spec.check(value)
        if isinstance(spec.constraint, (FloatRangeConstraint, CrossFieldConstraint)):
            value = float(value)
        values[name] = value
        provenance[name] = layer

    rules = {
        spec.constraint.rule
        for spec in specs.values()
        if isinstance(spec.constraint, CrossFieldConstraint)
    }
    for rule in sorted(rules):
        message = CROSS_FIELD_RULES[rule](values)
        if message is not None:
            raise CrossFieldViolationError(message)

    return ResolvedParams(values, provenance)


# --- alias resolution -------------------------------------------------------------

#: Where an effective setting came from, beyond the raw provenance layers.
SOURCE_MODEL_PREFERENCE = "model_preference"
SOURCE_BUILTIN_DEFAULT = "builtin_default"


@dataclass(frozen=True)
class GaussianSmoothing:
    size: int
    std: float


@dataclass(frozen=True)
class EffectivePipelineSettings:
    """Fully concrete pre-/post-processing settings for one image."""

    color_space: ColorSpace
    color_space_source: str
    smoothing: GaussianSmoothing | None
    smoothing_source: str
    scale_mode: str
    scale_min: float
    scale_max: float


def resolve_aliases(
    rp: ResolvedParams,
    manifest: ModelManifest,
    image_dims: tuple[int, int],
) -> EffectivePipelineSettings:
    """Turn ``default`` sentinels into concrete settings for one image.

    ``color_space`` "default" becomes the model's preferred space, else RGB.
    ``do_smoothing`` "default" becomes the model's preferred kernel, else the
    custom-parameter Gaussian; "proportional" scales sigma with the larger
    image dimension. The result never contains an alias, and resolving twice
    yields the same settings.
    """
    height, width = image_dims
    if height < 1 or width < 1:
        raise InvalidInputError(f"image dimensions must be positive, got {height}x{width}")

    raw_space = rp["color_space"]
    if raw_space == ColorSpace.DEFAULT.value:
        if manifest.preferred_color_space is not None:
            space, space_source = manifest.preferred_color_space, SOURCE_MODEL_PREFERENCE
        else:
            space, space_source = ColorSpace.RGB, SOURCE_BUILTIN_DEFAULT
    else:
        space, space_source = ColorSpace(raw_space), rp.provenance["color_space"]

    mode = rp["do_smoothing"]
    smoothing_source = rp.provenance["do_smoothing"]
    if mode == "none":
        smoothing = None
    elif mode == "custom":
        smoothing = GaussianSmoothing(int(rp["smooth_size"]), float(rp["smooth_std"]))
    elif mode == "proportional":
        std = float(rp["smooth_prop"]) * max(height, width)
        smoothing = GaussianSmoothing(2 * math.ceil(3.0 * std) + 1, std)
    elif mode == "default":
        if manifest.preferred_smoothing is not None:
            pref = manifest.preferred_smoothing
            smoothing = GaussianSmoothing(pref.size, pref.std)
            smoothing_source = SOURCE_MODEL_PREFERENCE
        else:
            smoothing = GaussianSmoothing(int(rp["smooth_size"]), float(rp["smooth_std"]))
            smoothing_source = SOURCE_BUILTIN_DEFAULT
    else:  # unreachable: the enum constraint blocks anything else
        raise InvalidInputError(f"unknown do_smoothing mode {mode!r}")

    return EffectivePipelineSettings(
        color_space=space,
        color_space_source=space_source,
        smoothing=smoothing,
        smoothing_source=smoothing_source,
        scale_mode=str(rp["scale_output"]),
        scale_min=float(rp["scale_min"]),
        scale_max=float(rp["scale_max"]),
    )


# --- human-readable description -----------------------------------------------

def _format_param_table(params: Mapping[str, ParameterSpec]) -> str:
    if not params:
        return "  (no parameters)"
    rows = [("name", "default", "valid values", "description")]
    for name in params:
        spec = params[name]
        rows.append((name, repr(spec.default), spec.valid_values, spec.description))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = []
    for row in rows:
        lines.append(
            "  "
            + row[0].ljust(widths[0])
            + "  "
            + row[1].ljust(widths[1])
            + "  "
            + row[2].ljust(widths[2])
            + "  "
            + row[3]
        )
    return "\n".join(lines)


def describe(target: str, registry) -> str:
    """Render parameter information for ``"global"`` or a model name.

    ``registry`` must expose ``global_config`` and ``get_manifest(name)``
    (raising ``UnknownModelError`` for unknown names).
    """
    if target == "global":
        header = "Global parameters (apply to every model):"
        return header + "\n" + _format_param_table(registry.global_config.parameters)

    manifest = registry.get_manifest(target)
    lines = [
        f"{manifest.name} - {manifest.long_name}",
        f"  type:     {manifest.model_type}",
        f"  citation: {manifest.citation}",
    ]
    if manifest.notes:
        lines.append(f"  notes:    {manifest.notes}")
    if manifest.preferred_color_space is not None:
        lines.append(f"  preferred color space: {manifest.preferred_color_space.value}")
    if manifest.preferred_smoothing is not None:
        pref = manifest.preferred_smoothing
        lines.append(f"  preferred smoothing:   size {pref.size}, std {pref.std}")
    lines.append("")
    lines.append("Model-specific parameters:")
    lines.append(_format_param_table(manifest.parameters))
    return "\n".join(lines)
