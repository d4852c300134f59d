"""Execution of externally-implemented models and their downloadable assets.

An external model is any program that speaks the one-line request/response
protocol over standard streams (see README, "external model protocol"). Each
invocation runs in a fresh subprocess with its own working directory,
process group, and environment mapping, so models with conflicting
dependencies coexist in one experiment.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import signal
import subprocess
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from filelock import FileLock

from .errors import (
    ChecksumMismatchError,
    LaunchError,
    ModelError,
    ModelTimeoutError,
    NetworkError,
    ProtocolError,
)
from .params import ModelManifest, Scalar
from .raster import Image, read_f32raw, write_image

PROTOCOL_VERSION = 1

CACHE_DIR_ENV = "SALVO_CACHE_DIR"

_DOWNLOAD_CHUNK = 1 << 16
_STDERR_TAIL_CHARS = 2000


def default_cache_dir() -> Path:
    """Asset cache location: ``$SALVO_CACHE_DIR``, else ``~/.cache/salvo``."""
    env = os.environ.get(CACHE_DIR_ENV)
    if env:
        return Path(env)
    xdg = os.environ.get("XDG_CACHE_HOME")
    base = Path(xdg) if xdg else Path.home() / ".cache"
    return base / "salvo"


# --- handles ----------------------------------------------------------------

class ExternalModelHandle:
    """A runnable reference to one external model.

    ``{model_dir}`` and ``{assets_dir}`` placeholders in the manifest's
    launch command, environment values, and working directory expand to the
    model's directory and its asset cache directory. The child also receives
    both as ``SALVO_MODEL_DIR`` / ``SALVO_ASSETS_DIR`` environment variables.
    """

    def __init__(self, manifest: ModelManifest, cache_dir: str | Path | None = None) -> None:
        if manifest.model_type != "external" or manifest.launch is None:
            raise LaunchError(f"model {manifest.name!r} is not an external model")
        self.manifest = manifest
        self.cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def timeout(self) -> float:
        return self.manifest.timeout_s

    @property
    def assets_dir(self) -> Path:
        return self.cache_dir / self.manifest.name

    def _expand(self, text: str) -> str:
        assert self.manifest.model_dir is not None
        return text.replace("{model_dir}", str(self.manifest.model_dir)).replace(
            "{assets_dir}", str(self.assets_dir)
        )

    def command(self) -> list[str]:
        assert self.manifest.launch is not None
        return [self._expand(arg) for arg in self.manifest.launch.command]

    def environment(self) -> dict[str, str]:
        assert self.manifest.launch is not None
        env = dict(os.environ)
        env.update({k: self._expand(v) for k, v in self.manifest.launch.env.items()})
        env["SALVO_MODEL_DIR"] = str(self.manifest.model_dir)
        env["SALVO_ASSETS_DIR"] = str(self.assets_dir)
        return env

    def working_directory(self) -> Path:
        assert self.manifest.model_dir is not None and self.manifest.launch is not None
        if self.manifest.launch.cwd is not None:
            return Path(self._expand(self.manifest.launch.cwd))
        return self.manifest.model_dir


# --- invocation ---------------------------------------------------------------

def invoke_external(
    handle: ExternalModelHandle,
    image: Image,
    params: Mapping[str, Scalar],
    workdir: str | Path,
    keep_artifacts: bool = False,
) -> np.ndarray:
    """Run one image through an external model and return its raw map.

    The image is written into ``workdir`` as a PNG, one request line goes to
    the child's standard input, one response line is read back, and the map
    named by the response is loaded. The child runs in its own process group
    and is killed wholesale on timeout; ``workdir`` is removed afterwards
    unless ``keep_artifacts`` is set.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    try:
        input_path = (workdir / "input.png").resolve()
        output_path = (workdir / "map.f32raw").resolve()
        write_image(image, input_path)
        request = {
            "protocol_version": PROTOCOL_VERSION,
            "image_path": str(input_path),
            "params": dict(params),
            "output_path": str(output_path),
        }
        try:
            proc = subprocess.Popen(
                handle.command(),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=handle.working_directory(),
                env=handle.environment(),
                text=True,
                encoding="utf-8",
                start_new_session=True,
            )
        except FileNotFoundError as exc:
            raise LaunchError(f"cannot launch model {handle.name!r}: {exc}") from exc
        try:
            stdout, stderr = proc.communicate(json.dumps(request) + "\n", timeout=handle.timeout)
        except subprocess.TimeoutExpired:
            _kill_process_group(proc)
            proc.communicate()
            raise ModelTimeoutError(
                f"model {handle.name!r} exceeded its {handle.timeout:g}s timeout and was killed"
            ) from None

        response = _parse_response_line(stdout)
        if response is not None and response.get("status") == "error":
            message = response.get("error_message") or "(no error message)"
            raise ModelError(f"model {handle.name!r} reported an error: {message}")
        if proc.returncode != 0:
            raise ModelError(
                f"model {handle.name!r} exited with status {proc.returncode}"
                + _stderr_tail(stderr)
            )
        if response is None:
            raise ProtocolError(
                f"model {handle.name!r} wrote no parseable response line" + _stderr_tail(stderr)
            )
        if response.get("status") != "ok":
            raise ProtocolError(
                f"model {handle.name!r} returned unknown status {response.get('status')!r}"
            )
        map_path = response.get("map_path")
        if not isinstance(map_path, str) or not map_path:
            raise ProtocolError(f"model {handle.name!r} responded ok without a map_path")
        try:
            return read_f32raw(map_path)
        except FileNotFoundError:
            raise ProtocolError(
                f"model {handle.name!r} responded ok but {map_path} does not exist"
            ) from None
    finally:
        if not keep_artifacts:
            shutil.rmtree(workdir, ignore_errors=True)


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def _parse_response_line(stdout: str | None) -> dict | None:
    """The first non-empty stdout line, decoded; None when unusable."""
    for line in (stdout or "").splitlines():
        line = line.strip()
        if not line:
            continue
        try:
            parsed = json.loads(line)
        except json.JSONDecodeError:
            return None
        return parsed if isinstance(parsed, dict) else None
    return None


def _stderr_tail(stderr: str | None) -> str:
    tail = (stderr or "").strip()[-_STDERR_TAIL_CHARS:]
    return f"; stderr: {tail}" if tail else ""


# --- asset lifecycle ------------------------------------------------------------

@dataclass(frozen=True)
class AssetStatus:
    """Result of a pure filesystem-and-hash check of a model's assets."""

    missing: tuple[str, ...]

    @property
    def complete(self) -> bool:
        return not self.missing


@dataclass(frozen=True)
class DownloadReport:
    model: str
    downloaded: tuple[str, ...] = ()
    skipped: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.downloaded and not self.skipped


@dataclass(frozen=True)
class CleanReport:
    removed: tuple[str, ...] = field(default_factory=tuple)


def _sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(_DOWNLOAD_CHUNK):
            digest.update(chunk)
    return digest.hexdigest()


def _model_lock(cache_dir: Path, model_name: str) -> FileLock:
    cache_dir.mkdir(parents=True, exist_ok=True)
    return FileLock(cache_dir / f"{model_name}.lock")


def verify_assets(manifest: ModelManifest, cache_dir: str | Path | None = None) -> AssetStatus:
    """Check presence and integrity of every declared asset. Never raises."""
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    missing = []
    for asset in manifest.model_files:
        path = cache_dir / manifest.name / asset.relative_path
        try:
            ok = path.is_file() and _sha256_of(path) == asset.sha256
        except OSError:
            ok = False
        if not ok:
            missing.append(asset.relative_path)
    return AssetStatus(tuple(missing))


def download_assets(manifest: ModelManifest, cache_dir: str | Path | None = None) -> DownloadReport:
    """Fetch all assets, verifying each against its declared sha256.

    Already-valid files are skipped, so repeated calls are idempotent and
    touch the network only for what is absent or corrupt. A hash mismatch
    removes the offending download before raising, so a failed fetch never
    leaves a bad file in the cache.
    """
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    downloaded, skipped = [], []
    with _model_lock(cache_dir, manifest.name):
        for asset in manifest.model_files:
            final = cache_dir / manifest.name / asset.relative_path
            if final.is_file() and _sha256_of(final) == asset.sha256:
                skipped.append(asset.relative_path)
                continue
            final.parent.mkdir(parents=True, exist_ok=True)
            partial = final.with_name(final.name + ".part")
            digest = hashlib.sha256()
            try:
                with urllib.request.urlopen(asset.url) as src, open(partial, "wb") as dst:
                    while chunk := src.read(_DOWNLOAD_CHUNK):
                        digest.update(chunk)
                        dst.write(chunk)
            except (urllib.error.URLError, OSError) as exc:
                partial.unlink(missing_ok=True)
                raise NetworkError(
                    f"failed to download {asset.url} for model {manifest.name!r}: {exc}"
                ) from exc
            if digest.hexdigest() != asset.sha256:
                partial.unlink(missing_ok=True)
                final.unlink(missing_ok=True)
                raise ChecksumMismatchError(
                    f"model {manifest.name!r} asset {asset.relative_path!r}: "
                    f"expected sha256 {asset.sha256}, downloaded bytes hash to {digest.hexdigest()}"
                )
            partial.replace(final)
            downloaded.append(asset.relative_path)
    return DownloadReport(manifest.name, tuple(downloaded), tuple(skipped))


def clean_assets(manifest: ModelManifest, cache_dir: str | Path | None = None) -> CleanReport:
    """Remove everything the cache holds for one model."""
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    subtree = cache_dir / manifest.name
    removed = []
    with _model_lock(cache_dir, manifest.name):
        if subtree.is_dir():
            shutil.rmtree(subtree)
            removed.append(str(subtree))
    lock_path = cache_dir / f"{manifest.name}.lock"
    lock_path.unlink(missing_ok=True)
    return CleanReport(tuple(removed))


def clean_all_assets(cache_dir: str | Path | None = None) -> CleanReport:
    """Remove every model subtree in the cache directory."""
    cache_dir = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    removed = []
    if cache_dir.is_dir():
        for child in sorted(cache_dir.iterdir()):
            if child.is_dir():
                shutil.rmtree(child)
                removed.append(str(child))
            elif child.suffix == ".lock":
                child.unlink(missing_ok=True)
    return CleanReport(tuple(removed))
