"""Declarative experiments: parse a YAML description, plan runs, execute.

An experiment file holds one ``experiment`` section (shared settings and the
experiment-layer parameters) and a ``runs`` list (one model invocation
each, optionally with run-layer overrides). Planning resolves parameters
through the full precedence ladder up front, so every constraint violation
surfaces before any image is processed.
"""

from __future__ import annotations

import json
import logging
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import yaml

from . import __version__
from .errors import (
    ConstraintViolationError,
    EmptyInputDirError,
    ParseError,
    SalvoError,
    SchemaError,
    UnknownParameterError,
)
from .external import ExternalModelHandle, invoke_external, verify_assets
from .mapops import PadReplicate, RescaleBilinear, fit_to_dims, rescale_values, smooth
from .models import NativeModel, Registry
from .params import (
    GlobalConfig,
    ResolvedParams,
    Scalar,
    resolve,
    resolve_aliases,
)
from .raster import Image, SaliencyMap, convert_color, load_image, write_map

logger = logging.getLogger("salvo")

RUN_RECORD_NAME = "_run_record"
ARTIFACTS_DIR_NAME = "_artifacts"

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


# --- experiment files ---------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    algorithm: str
    output_path: str | None = None
    parameters: Mapping[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    description: str
    input_path: str
    base_output_path: str
    parameters: Mapping[str, Scalar]
    runs: tuple[RunSpec, ...]


def _require_scalar_mapping(obj: object, where: str) -> dict[str, Scalar]:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: parameters must be a mapping")
    out: dict[str, Scalar] = {}
    for key, value in obj.items():
        if not isinstance(key, str):
            raise SchemaError(f"{where}: parameter names must be strings, got {key!r}")
        if isinstance(value, bool) or not isinstance(value, (str, int, float)):
            raise SchemaError(
                f"{where}: parameter {key!r} must be a string or number, got {value!r}"
            )
        out[key] = value
    return out


def parse_experiment(path: str | Path) -> ExperimentSpec:
    """Load and structurally validate an experiment file.

    Parameter values are checked for shape only; whether a name exists and
    its value satisfies its constraint depends on each run's model, which is
    ``plan``'s job.
    """
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be a mapping")
    unknown = doc.keys() - {"experiment", "runs"}
    if unknown:
        raise SchemaError(f"{path}: unknown top-level keys {sorted(unknown)}")

    header = doc.get("experiment")
    if not isinstance(header, dict):
        raise SchemaError(f"{path}: missing 'experiment' section")
    allowed = {"name", "description", "input_path", "base_output_path", "parameters"}
    unknown = header.keys() - allowed
    if unknown:
        raise SchemaError(f"{path}: unknown experiment keys {sorted(unknown)}")
    for key in ("input_path", "base_output_path"):
        if not isinstance(header.get(key), str) or not header[key]:
            raise SchemaError(f"{path}: experiment.{key} must be a non-empty string")
    for key in ("name", "description"):
        if key in header and not isinstance(header[key], str):
            raise SchemaError(f"{path}: experiment.{key} must be a string")

    raw_runs = doc.get("runs")
    if not isinstance(raw_runs, list) or not raw_runs:
        raise SchemaError(f"{path}: 'runs' must be a non-empty list")
    runs = []
    for index, entry in enumerate(raw_runs):
        where = f"{path}: runs[{index}]"
        if not isinstance(entry, dict):
            raise SchemaError(f"{where} must be a mapping")
        unknown = entry.keys() - {"algorithm", "output_path", "parameters"}
        if unknown:
            raise SchemaError(f"{where}: unknown keys {sorted(unknown)}")
        algorithm = entry.get("algorithm")
        if not isinstance(algorithm, str) or not algorithm:
            raise SchemaError(f"{where}: algorithm must be a non-empty string")
        output_path = entry.get("output_path")
        if output_path is not None and (not isinstance(output_path, str) or not output_path):
            raise SchemaError(f"{where}: output_path must be a non-empty string")
        runs.append(
            RunSpec(algorithm, output_path, _require_scalar_mapping(entry.get("parameters"), where))
        )

    explicit = [r.output_path for r in runs if r.output_path is not None]
    duplicates = {p for p in explicit if explicit.count(p) > 1}
    if duplicates:
        raise SchemaError(
            f"{path}: runs share explicit output_path(s) {sorted(duplicates)}; "
            "each run must write to its own directory"
        )

    return ExperimentSpec(
        name=header.get("name", ""),
        description=header.get("description", ""),
        input_path=header["input_path"],
        base_output_path=header["base_output_path"],
        parameters=_require_scalar_mapping(header.get("parameters"), f"{path}: experiment"),
        runs=tuple(runs),
    )


# --- planning -------------------------------------------------------------------

@dataclass(frozen=True)
class RunPlan:
    """One fully-resolved model invocation over the experiment's images."""

    run_index: int
    model: NativeModel | ExternalModelHandle
    resolved: ResolvedParams
    input_files: tuple[Path, ...]
    output_dir: Path
    skipped_reason: str | None = None

    @property
    def algorithm(self) -> str:
        return self.model.manifest.name


def list_input_images(input_path: str | Path) -> tuple[Path, ...]:
    """Image files of a directory, lexicographically sorted by name."""
    directory = Path(input_path)
    if not directory.is_dir():
        raise FileNotFoundError(f"input directory does not exist: {directory}")
    files = sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )
    if not files:
        raise EmptyInputDirError(f"no .png/.jpg/.jpeg images in {directory}")
    return tuple(files)


def plan(
    spec: ExperimentSpec,
    registry: Registry,
    global_config: GlobalConfig | None = None,
) -> list[RunPlan]:
    """Turn a parsed experiment into executable run plans.

    Parameters are resolved per run through the precedence ladder.
    Experiment-layer names a given model does not declare are dropped for
    that run with a warning (they may be meaningful to other runs);
    run-layer names must be valid for their model. A model whose assets are
    incomplete yields a plan marked skipped rather than an error, so the
    rest of the experiment still runs.
    """
    global_config = global_config or registry.global_config
    input_files = list_input_images(spec.input_path)

    plans: list[RunPlan] = []
    seen_dirs: dict[Path, int] = {}
    for index, run in enumerate(spec.runs):
        manifest = registry.get_manifest(run.algorithm)
        known = set(global_config.parameters) | set(manifest.parameters)
        experiment_layer = {k: v for k, v in spec.parameters.items() if k in known}
        for name in sorted(spec.parameters.keys() - known):
            logger.warning(
                "experiment parameter %r is not declared by model %r; ignoring it for run %d",
                name, run.algorithm, index,
            )
        try:
            resolved = resolve(manifest, global_config, experiment_layer, run.parameters)
        except ConstraintViolationError as exc:
            raise ConstraintViolationError(
                exc.name, exc.value, exc.valid_values, context=f"run {index} ({run.algorithm})"
            ) from exc
        except UnknownParameterError as exc:
            raise UnknownParameterError(f"run {index} ({run.algorithm}): {exc}") from exc

        output_dir = Path(run.output_path) if run.output_path else (
            Path(spec.base_output_path) / run.algorithm
        )
        if output_dir in seen_dirs:
            raise SchemaError(
                f"run {index} ({run.algorithm}) and run {seen_dirs[output_dir]} both "
                f"write to {output_dir}; each run must write to its own directory"
            )
        seen_dirs[output_dir] = index

        skipped_reason = None
        status = verify_assets(manifest, registry.cache_dir)
        if not status.complete:
            skipped_reason = f"missing assets: {', '.join(status.missing)}"
            logger.warning(
                "skipping run %d (%s): %s (try `salvo download %s`)",
                index, run.algorithm, skipped_reason, run.algorithm,
            )

        plans.append(
            RunPlan(
                run_index=index,
                model=registry.get(run.algorithm),
                resolved=resolved,
                input_files=input_files,
                output_dir=output_dir,
                skipped_reason=skipped_reason,
            )
        )
    return plans


# --- execution --------------------------------------------------------------------

@dataclass(frozen=True)
class RunReport:
    algorithm: str
    output_dir: str
    ok: int = 0
    failed: int = 0
    skipped: int = 0
    failures: tuple[tuple[str, str], ...] = ()
    skipped_reason: str | None = None


@dataclass(frozen=True)
class ExperimentReport:
    runs: tuple[RunReport, ...]
    wall_time_s: float

    @property
    def total_ok(self) -> int:
        return sum(r.ok for r in self.runs)

    @property
    def total_failed(self) -> int:
        return sum(r.failed for r in self.runs)

    @property
    def total_skipped(self) -> int:
        return sum(r.skipped for r in self.runs)

    @property
    def succeeded(self) -> bool:
        return self.total_failed == 0


def compute_raw_map(
    model: NativeModel | ExternalModelHandle,
    image: Image,
    resolved: ResolvedParams,
    effective_color_space,
    keep_artifacts_dir: Path | None = None,
):
    """Produce a model's raw (pre-pipeline) map for one loaded image.

    Native models receive the image converted to the effective color space.
    External models receive the original image as a PNG plus the resolved
    parameters on the wire, with ``color_space`` replaced by the concrete
    effective value — the alias would be meaningless outside the framework.
    """
    if isinstance(model, NativeModel):
        return model.compute(convert_color(image, effective_color_space), resolved)
    wire_params = dict(resolved.values)
    wire_params["color_space"] = effective_color_space.value
    if keep_artifacts_dir is not None:
        return invoke_external(model, image, wire_params, keep_artifacts_dir, keep_artifacts=True)
    workdir = tempfile.mkdtemp(prefix=f"salvo-{model.manifest.name}-")
    return invoke_external(model, image, wire_params, workdir)


def process_image(
    plan_: RunPlan,
    input_file: Path,
    write_raw: bool = False,
    keep_artifacts: bool = False,
) -> None:
    """Run one image through the full pipeline and write its outputs."""
    manifest = plan_.model.manifest
    image = load_image(input_file)
    effective = resolve_aliases(plan_.resolved, manifest, (image.height, image.width))

    artifacts_dir = None
    if keep_artifacts and isinstance(plan_.model, ExternalModelHandle):
        artifacts_dir = plan_.output_dir / ARTIFACTS_DIR_NAME / input_file.stem
    raw = compute_raw_map(plan_.model, image, plan_.resolved, effective.color_space, artifacts_dir)

    policy = PadReplicate(manifest.output_trim) if manifest.output_trim else RescaleBilinear()
    fitted = fit_to_dims(raw, (image.height, image.width), policy)
    smoothed = smooth(fitted, effective.smoothing)
    final = rescale_values(smoothed, effective.scale_mode, effective.scale_min, effective.scale_max)

    result = SaliencyMap(final, model_name=manifest.name, resolved_params=plan_.resolved)
    write_map(result, plan_.output_dir / f"{input_file.stem}.png", "png8")
    if write_raw:
        write_map(result, plan_.output_dir / f"{input_file.stem}.f32raw", "f32raw")


def _write_run_record(plan_: RunPlan, input_path_display: str) -> None:
    record = {
        "framework_version": __version__,
        "model": plan_.algorithm,
        "parameters": dict(plan_.resolved.values),
        "provenance": dict(plan_.resolved.provenance),
        "input_path": input_path_display,
        "input_files": [p.name for p in plan_.input_files],
    }
    path = plan_.output_dir / RUN_RECORD_NAME
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def execute(
    plans: list[RunPlan],
    skip_existing: bool = False,
    workers: int = 1,
    write_raw: bool = False,
    keep_artifacts: bool = False,
) -> ExperimentReport:
    """Execute run plans in order, isolating per-image failures.

    A failing image is recorded in the report and does not stop the run or
    the experiment; only setup problems (an unwritable output directory)
    abort. Within a run, images may be processed by a bounded thread pool;
    external models are pinned to one worker because each child process
    serves a single request.
    """
    started = time.monotonic()
    reports: list[RunReport] = []
    for plan_ in plans:
        if plan_.skipped_reason is not None:
            reports.append(
                RunReport(
                    algorithm=plan_.algorithm,
                    output_dir=str(plan_.output_dir),
                    skipped=len(plan_.input_files),
                    skipped_reason=plan_.skipped_reason,
                )
            )
            continue

        plan_.output_dir.mkdir(parents=True, exist_ok=True)
        input_dir = plan_.input_files[0].parent if plan_.input_files else Path(".")
        _write_run_record(plan_, str(input_dir))

        def process_one(input_file: Path, plan_: RunPlan = plan_) -> tuple[str, str, str]:
            out_png = plan_.output_dir / f"{input_file.stem}.png"
            out_raw = plan_.output_dir / f"{input_file.stem}.f32raw"
            if skip_existing and out_png.exists() and (not write_raw or out_raw.exists()):
                return ("skipped", input_file.name, "")
            try:
                process_image(plan_, input_file, write_raw, keep_artifacts)
            except (SalvoError, OSError, ValueError) as exc:
                logger.warning("%s: %s failed: %s", plan_.algorithm, input_file.name, exc)
                return ("failed", input_file.name, str(exc))
            return ("ok", input_file.name, "")

        pool_size = 1 if isinstance(plan_.model, ExternalModelHandle) else max(1, workers)
        if pool_size > 1:
            with ThreadPoolExecutor(max_workers=pool_size) as pool:
                outcomes = list(pool.map(process_one, plan_.input_files))
        else:
            outcomes = [process_one(f) for f in plan_.input_files]

        failures = tuple((name, msg) for status, name, msg in outcomes if status == "failed")
        reports.append(
            RunReport(
                algorithm=plan_.algorithm,
                output_dir=str(plan_.output_dir),
                ok=sum(1 for s, _, _ in outcomes if s == "ok"),
                failed=len(failures),
                skipped=sum(1 for s, _, _ in outcomes if s == "skipped"),
                failures=failures,
            )
        )
    return ExperimentReport(tuple(reports), time.monotonic() - started)


def run_experiment_file(
    path: str | Path,
    registry: Registry,
    skip_existing: bool = False,
    workers: int = 1,
    write_raw: bool = False,
    keep_artifacts: bool = False,
) -> ExperimentReport:
    """Parse, plan, and execute an experiment file in one call."""
    spec = parse_experiment(path)
    plans = plan(spec, registry)
    return execute(
        plans,
        skip_existing=skip_existing,
        workers=workers,
        write_raw=write_raw,
        keep_artifacts=keep_artifacts,
    )
