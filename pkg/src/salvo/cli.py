"""Command-line interface.

Exit statuses are a stable scripting contract: 0 for success, 1 when any
image failed or a download failed partway, 2 for usage and configuration
errors (unknown model, bad parameter value, malformed experiment file).
Human-facing results go to standard output; diagnostics go to standard
error.
"""

from __future__ import annotations

import logging
import os
import subprocess
import sys
from pathlib import Path

import click

from . import __version__
from .errors import (
    ChecksumMismatchError,
    NetworkError,
    SalvoError,
    UnknownModelError,
)
from .experiment import ExperimentReport, ExperimentSpec, RunSpec, execute, parse_experiment, plan
from .external import (
    PROTOCOL_VERSION,
    ExternalModelHandle,
    clean_all_assets,
    clean_assets,
    download_assets,
    verify_assets,
)
from .models import MODELS_ROOT_ENV, Registry
from .params import Scalar, describe

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _make_registry(ctx: click.Context) -> Registry:
    try:
        return Registry(
            models_root=ctx.obj.get("models_root"),
            cache_dir=ctx.obj.get("cache_dir"),
        )
    except SalvoError as exc:
        _fail(str(exc), EXIT_USAGE)
        raise AssertionError("unreachable")


@click.group()
@click.option(
    "--models-root",
    envvar=MODELS_ROOT_ENV,
    type=click.Path(file_okay=False),
    default=None,
    help="Directory of additional model directories (each holding a manifest.json).",
)
@click.option(
    "--cache-dir",
    envvar="SALVO_CACHE_DIR",
    type=click.Path(file_okay=False),
    default=None,
    help="Where downloaded model assets are cached.",
)
@click.pass_context
def main(ctx: click.Context, models_root: str | None, cache_dir: str | None) -> None:
    """Run saliency models over image directories with uniform parameters."""
    salvo_logger = logging.getLogger("salvo")
    for old in list(salvo_logger.handlers):
        if getattr(old, "_salvo_cli", False):
            salvo_logger.removeHandler(old)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    handler._salvo_cli = True
    salvo_logger.addHandler(handler)
    salvo_logger.setLevel(logging.INFO)
    ctx.obj = {"models_root": models_root, "cache_dir": cache_dir}


@main.command()
def version() -> None:
    """Display version information."""
    click.echo(f"salvo {__version__} (external model protocol v{PROTOCOL_VERSION})")


@main.command()
@click.argument("target", required=False)
@click.pass_context
def info(ctx: click.Context, target: str | None) -> None:
    """Describe registered models, one model, or the global parameters.

    With no TARGET, list every registered model. With a model name, show
    its description, citation, and parameters. With "global", show the
    framework-wide parameters every model accepts.
    """
    registry = _make_registry(ctx)
    if target is None:
        rows = [("name", "type", "assets", "long name")]
        for manifest in registry.manifests():
            if manifest.model_files:
                status = verify_assets(manifest, registry.cache_dir)
                assets = "ready" if status.complete else f"missing {len(status.missing)}"
            else:
                assets = "none needed"
            rows.append((manifest.name, manifest.model_type, assets, manifest.long_name))
        widths = [max(len(row[i]) for row in rows) for i in range(3)]
        for row in rows:
            click.echo(
                f"{row[0].ljust(widths[0])}  {row[1].ljust(widths[1])}  "
                f"{row[2].ljust(widths[2])}  {row[3]}"
            )
        return
    try:
        click.echo(describe(target, registry))
    except UnknownModelError as exc:
        _fail(str(exc), EXIT_USAGE)


@main.command()
@click.argument("model", required=False)
@click.option("--all", "download_all", is_flag=True, help="Download assets for every model.")
@click.pass_context
def download(ctx: click.Context, model: str | None, download_all: bool) -> None:
    """Download and verify a model's asset files."""
    if (model is None) == (not download_all):
        raise click.UsageError("give a MODEL name or --all")
    registry = _make_registry(ctx)
    try:
        targets = registry.manifests() if download_all else [registry.get_manifest(model)]
    except UnknownModelError as exc:
        _fail(str(exc), EXIT_USAGE)
    try:
        for manifest in targets:
            report = download_assets(manifest, registry.cache_dir)
            if report.empty:
                click.echo(f"{manifest.name}: nothing to download")
                continue
            for name in report.downloaded:
                click.echo(f"{manifest.name}: downloaded {name}")
            for name in report.skipped:
                click.echo(f"{manifest.name}: {name} already present")
    except (NetworkError, ChecksumMismatchError) as exc:
        _fail(str(exc), EXIT_FAILURES)


@main.command()
@click.argument("model", required=False)
@click.option("--all", "clean_all", is_flag=True, help="Remove every model's cached assets.")
@click.pass_context
def clean(ctx: click.Context, model: str | None, clean_all: bool) -> None:
    """Delete downloaded asset files."""
    if (model is None) == (not clean_all):
        raise click.UsageError("give a MODEL name or --all")
    registry = _make_registry(ctx)
    if clean_all:
        report = clean_all_assets(registry.cache_dir)
    else:
        try:
            manifest = registry.get_manifest(model)
        except UnknownModelError as exc:
            _fail(str(exc), EXIT_USAGE)
        report = clean_assets(manifest, registry.cache_dir)
    if not report.removed:
        click.echo("nothing to clean")
    for path in report.removed:
        click.echo(f"removed {path}")


def _parse_param(text: str) -> tuple[str, Scalar]:
    name, sep, raw = text.partition("=")
    if not sep or not name:
        raise click.UsageError(f"--param expects name=value, got {text!r}")
    for convert in (int, float):
        try:
            return name, convert(raw)
        except ValueError:
            continue
    return name, raw


def _print_report(report: ExperimentReport) -> None:
    for run in report.runs:
        line = f"{run.algorithm} -> {run.output_dir}: ok={run.ok} failed={run.failed} skipped={run.skipped}"
        if run.skipped_reason:
            line += f" ({run.skipped_reason})"
        click.echo(line)
        for name, message in run.failures:
            click.echo(f"  {run.algorithm}: {name} failed: {message}", err=True)
    click.echo(
        f"total: ok={report.total_ok} failed={report.total_failed} "
        f"skipped={report.total_skipped} ({report.wall_time_s:.1f}s)"
    )


@main.command()
@click.argument("experiment_file", required=False, type=click.Path(dir_okay=False))
@click.option("--model", "model_name", default=None, help="Model to run (ad-hoc form).")
@click.option("--input", "input_dir", type=click.Path(file_okay=False), default=None,
              help="Directory of input images (ad-hoc form).")
@click.option("--output", "output_dir", type=click.Path(file_okay=False), default=None,
              help="Directory to write maps into (ad-hoc form).")
@click.option("--param", "params", multiple=True, metavar="NAME=VALUE",
              help="Run-layer parameter override; repeatable.")
@click.option("--workers", default=1, show_default=True, help="Images processed concurrently per run.")
@click.option("--skip-existing", is_flag=True, help="Leave already-produced maps in place.")
@click.option("--write-raw", is_flag=True, help="Also write lossless float maps next to the PNGs.")
@click.option("--keep-artifacts", is_flag=True,
              help="Keep external models' scratch directories for inspection.")
@click.pass_context
def run(
    ctx: click.Context,
    experiment_file: str | None,
    model_name: str | None,
    input_dir: str | None,
    output_dir: str | None,
    params: tuple[str, ...],
    workers: int,
    skip_existing: bool,
    write_raw: bool,
    keep_artifacts: bool,
) -> None:
    """Run model(s) over a directory of images.

    Either give an EXPERIMENT_FILE, or use --model/--input/--output for a
    one-off run. The ad-hoc form accepts repeated --param NAME=VALUE
    overrides, which take run-layer precedence.
    """
    adhoc = model_name is not None or input_dir is not None or output_dir is not None
    if adhoc and experiment_file is not None:
        raise click.UsageError("give an experiment file or --model/--input/--output, not both")
    if adhoc and not (model_name and input_dir and output_dir):
        raise click.UsageError("the ad-hoc form needs all of --model, --input, and --output")
    if not adhoc and experiment_file is None:
        raise click.UsageError("give an experiment file or --model/--input/--output")
    if params and not adhoc:
        raise click.UsageError("--param only applies to the ad-hoc form; "
                               "use the experiment file's parameter sections instead")

    registry = _make_registry(ctx)
    try:
        if adhoc:
            spec = ExperimentSpec(
                name=f"adhoc-{model_name}",
                description="",
                input_path=input_dir,
                base_output_path=output_dir,
                parameters={},
                runs=(RunSpec(model_name, output_dir, dict(_parse_param(p) for p in params)),),
            )
        else:
            spec = parse_experiment(experiment_file)
        plans = plan(spec, registry)
        report = execute(
            plans,
            skip_existing=skip_existing,
            workers=workers,
            write_raw=write_raw,
            keep_artifacts=keep_artifacts,
        )
    except FileNotFoundError as exc:
        _fail(str(exc), EXIT_USAGE)
    except SalvoError as exc:
        _fail(str(exc), EXIT_USAGE)
    except OSError as exc:
        _fail(str(exc), EXIT_USAGE)
    _print_report(report)
    sys.exit(EXIT_OK if report.succeeded else EXIT_FAILURES)


@main.command()
@click.argument("model")
@click.pass_context
def shell(ctx: click.Context, model: str) -> None:
    """Open an interactive shell in a model's environment.

    The shell starts in the model's directory with its environment mapping
    applied, plus SALVO_MODEL_DIR and SALVO_ASSETS_DIR. Only external
    models have an environment to enter; native models run in-process.
    """
    registry = _make_registry(ctx)
    try:
        manifest = registry.get_manifest(model)
    except UnknownModelError as exc:
        _fail(str(exc), EXIT_USAGE)
    if manifest.model_type != "external":
        _fail(
            f"model {model!r} runs in-process and has no separate environment to enter",
            EXIT_USAGE,
        )
    handle = ExternalModelHandle(manifest, registry.cache_dir)
    shell_cmd = os.environ.get("SHELL", "/bin/sh")
    click.echo(f"entering {model} environment; exit the shell to return", err=True)
    result = subprocess.call(
        [shell_cmd],
        cwd=handle.working_directory(),
        env=handle.environment(),
    )
    sys.exit(result)


if __name__ == "__main__":
    main()
