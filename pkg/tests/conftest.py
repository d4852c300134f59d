"""Shared fixtures: deterministic images, a clean registry, stub external
models, and per-criterion result lines for the acceptance suite."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image as PILImage

from salvo.models import Registry


@pytest.fixture()
def registry(monkeypatch, tmp_path):
    """A registry with only the built-in models and an isolated asset cache."""
    monkeypatch.delenv("SALVO_MODELS_ROOT", raising=False)
    monkeypatch.delenv("SALVO_CACHE_DIR", raising=False)
    return Registry(cache_dir=tmp_path / "cache")


def write_rgb_png(path: Path, height: int, width: int, seed: int = 0) -> np.ndarray:
    """Write a deterministic random RGB PNG; returns the uint8 pixel array."""
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")
    return arr


def write_solid_png(path: Path, height: int, width: int, rgb: tuple[int, int, int]) -> None:
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:, :] = rgb
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


@pytest.fixture()
def image_dir(tmp_path):
    """Directory with three small deterministic images (mixed extensions)."""
    d = tmp_path / "inputs"
    d.mkdir()
    write_rgb_png(d / "alpha.png", 12, 17, seed=1)
    write_rgb_png(d / "bravo.png", 9, 9, seed=2)
    rng = np.random.default_rng(3)
    arr = rng.integers(0, 256, size=(10, 14, 3), dtype=np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(d / "charlie.jpg", format="JPEG")
    return d


# A single configurable stub server used by every external-model test. Its
# behavior is selected by environment variables set through the manifest:
#   STUB_MODE: ok | garbage | error | badexit | sleep | envcheck
#   STUB_VALUE: constant map value for ok mode (default 0.25)
#   STUB_SLEEP_S, STUB_PID_FILE, STUB_ENV_NAME, STUB_ENV_EXPECT
STUB_SERVER = '''\
import json
import os
import struct
import sys
import time


def png_dims(path):
    with open(path, "rb") as fh:
        header = fh.read(24)
    width = int.from_bytes(header[16:20], "big")
    height = int.from_bytes(header[20:24], "big")
    return height, width


def write_map(path, height, width, value):
    data = struct.pack("<4sIII", b"SALF", height, width, 0)
    data += struct.pack(f"<{height * width}f", *([value] * (height * width)))
    with open(path, "wb") as fh:
        fh.write(data)


def main():
    mode = os.environ.get("STUB_MODE", "ok")
    pid_file = os.environ.get("STUB_PID_FILE")
    if pid_file:
        with open(pid_file, "w") as fh:
            fh.write(str(os.getpid()))
    line = sys.stdin.readline()
    request = json.loads(line)
    if mode == "sleep":
        time.sleep(float(os.environ.get("STUB_SLEEP_S", "60")))
    if mode == "garbage":
        print("this is not a protocol response")
        return 0
    if mode == "error":
        print(json.dumps({"status": "error", "error_message": "stub exploded on purpose"}))
        return 1
    if mode == "envcheck":
        name = os.environ["STUB_ENV_NAME"]
        expect = os.environ["STUB_ENV_EXPECT"]
        actual = os.environ.get(name)
        if actual != expect:
            print(json.dumps({"status": "error",
                              "error_message": f"env {name}={actual!r}, expected {expect!r}"}))
            return 1
    height, width = png_dims(request["image_path"])
    value = float(os.environ.get("STUB_VALUE", "0.25"))
    write_map(request["output_path"], height, width, value)
    print(json.dumps({"status": "ok", "map_path": request["output_path"],
                      "model_version": "stub-1", "extra_field_to_ignore": 42}))
    return 0 if mode != "badexit" else 3


if __name__ == "__main__":
    sys.exit(main())
'''


def make_stub_model(
    models_root: Path,
    name: str = "stub",
    env: dict[str, str] | None = None,
    timeout_s: float | None = None,
    model_files: list[dict] | None = None,
    command: list[str] | None = None,
) -> Path:
    """Create a stub external model directory under ``models_root``."""
    model_dir = models_root / name
    model_dir.mkdir(parents=True, exist_ok=True)
    (model_dir / "server.py").write_text(STUB_SERVER)
    manifest = {
        "name": name,
        "long_name": f"Stub model {name}",
        "citation": "None; test stub.",
        "model_type": "external",
        "launch": {
            "command": command or [sys.executable, "{model_dir}/server.py"],
            "env": env or {},
        },
    }
    if timeout_s is not None:
        manifest["timeout_s"] = timeout_s
    if model_files is not None:
        manifest["model_files"] = model_files
    (model_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return model_dir


def make_asset(directory: Path, name: str, content: bytes) -> dict:
    """Write a downloadable asset file and return its model_files entry."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name
    path.write_bytes(content)
    return {
        "relative_path": name,
        "url": path.as_uri(),
        "sha256": hashlib.sha256(content).hexdigest(),
    }


# --- acceptance criterion reporting -------------------------------------------

def pytest_configure(config):
    config._criterion_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    results = item.config._criterion_results
    if report.when == "call":
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        results[number] = (title, status)
    elif report.when == "setup" and not report.passed:
        results[number] = (title, "SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_criterion_results", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status = results[number]
        terminalreporter.write_line(f"criterion {number:>2}: {status}  {title}")
