"""Acceptance gate: one test per release criterion.

Each test carries the ``criterion`` marker; the terminal summary prints one
pass/fail line per criterion. Criteria 1-9 exercise the framework alone;
criterion 10 additionally needs the reference external model that lives in
the sibling ``ref_model`` package and is skipped until that is built.
"""

import dataclasses
import json
import logging
import math
import os
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest
from PIL import Image as PILImage
from scipy.ndimage import uniform_filter

from salvo.errors import (
    ChecksumMismatchError,
    ModelTimeoutError,
    NameCollisionError,
    UnknownParameterError,
)
from salvo.experiment import ExperimentSpec, RunSpec, execute, parse_experiment, plan
from salvo.external import ExternalModelHandle, download_assets, clean_assets, invoke_external
from salvo.mapops import rescale_values
from salvo.models import Registry
from salvo.models.imsig import dct2, idct2
from salvo.params import default_global_config, load_manifest, resolve
from salvo.raster import (
    ColorSpace,
    Image,
    lab_to_rgb,
    load_image,
    rgb_to_hsv,
    rgb_to_lab,
    rgb_to_ycbcr,
    hsv_to_rgb,
    ycbcr_to_rgb,
)

from conftest import make_asset, make_stub_model, write_rgb_png

REF_MODELS_ROOT = Path(__file__).resolve().parents[1] / "ref_model"
REF_MANIFEST = REF_MODELS_ROOT / "refcontrast" / "manifest.json"


@pytest.mark.criterion(1, "defaults fidelity")
def test_criterion_01_defaults(registry):
    resolved = resolve(registry.get_manifest("uniform"), default_global_config())
    assert dict(resolved.values) == {
        "do_smoothing": "default",
        "smooth_size": 9,
        "smooth_std": 3.0,
        "smooth_prop": 0.05,
        "scale_output": "min-max",
        "scale_min": 0.0,
        "scale_max": 1.0,
        "color_space": "default",
    }
    assert isinstance(resolved["smooth_size"], int)
    assert isinstance(resolved["smooth_std"], float)
    assert set(resolved.provenance.values()) == {"global_default"}


@pytest.mark.criterion(2, "precedence ladder")
def test_criterion_02_precedence(tmp_path):
    gc = default_global_config()

    def manifest_file(doc):
        path = tmp_path / doc["name"]
        path.mkdir(exist_ok=True)
        (path / "manifest.json").write_text(json.dumps(doc))
        return path / "manifest.json"

    base = {"long_name": "ladder probe", "citation": "none", "model_type": "native"}
    knob_spec = {
        "default": 0.5,
        "description": "synthetic model-level parameter",
        "valid_values": "Positive number.",
        "constraint": {"kind": "float_range", "min_exclusive": 0},
    }
    knob_manifest = load_manifest(
        manifest_file({**base, "name": "withknob", "parameters": {"knob": knob_spec}})
    )
    plain_manifest = load_manifest(manifest_file({**base, "name": "plain"}))

    checked = 0
    for has_run in (False, True):
        for has_exp in (False, True):
            for has_model in (False, True):
                for has_global in (False, True):
                    if has_model and has_global:
                        # A name may not be declared at both default layers;
                        # the schema rejects the manifest outright.
                        with pytest.raises(NameCollisionError):
                            load_manifest(manifest_file({
                                **base,
                                "name": "shadow",
                                "parameters": {"smooth_std": knob_spec},
                            }))
                    elif has_model:
                        exp = {"knob": 0.25} if has_exp else None
                        run = {"knob": 0.75} if has_run else None
                        resolved = resolve(knob_manifest, gc, exp, run)
                        expect = (0.75, "run") if has_run else \
                                 (0.25, "experiment") if has_exp else \
                                 (0.5, "model_default")
                        assert resolved["knob"] == expect[0]
                        assert resolved.provenance["knob"] == expect[1]
                    elif has_global:
                        exp = {"smooth_std": 1.5} if has_exp else None
                        run = {"smooth_std": 2.5} if has_run else None
                        resolved = resolve(plain_manifest, gc, exp, run)
                        expect = (2.5, "run") if has_run else \
                                 (1.5, "experiment") if has_exp else \
                                 (3.0, "global_default")
                        assert resolved["smooth_std"] == expect[0]
                        assert resolved.provenance["smooth_std"] == expect[1]
                    elif has_run or has_exp:
                        # Overriding a name no layer declares is an error.
                        exp = {"mystery": 1} if has_exp else None
                        run = {"mystery": 1} if has_run else None
                        with pytest.raises(UnknownParameterError):
                            resolve(plain_manifest, gc, exp, run)
                    else:
                        resolved = resolve(plain_manifest, gc)
                        assert "mystery" not in resolved
                    checked += 1
    assert checked == 16


@pytest.mark.criterion(3, "output dimensions")
def test_criterion_03_output_dims(tmp_path, registry):
    sizes = [(1, 1), (7, 5), (64, 64), (481, 641)]
    input_dir = tmp_path / "in"
    input_dir.mkdir()
    for i, (h, w) in enumerate(sizes):
        write_rgb_png(input_dir / f"img{i}.png", h, w, seed=i)
    spec = ExperimentSpec(
        "dims", "", str(input_dir), str(tmp_path / "out"), {},
        tuple(RunSpec(name) for name in registry.model_names()),
    )
    report = execute(plan(spec, registry))
    assert report.total_failed == 0 and report.total_skipped == 0
    for name in registry.model_names():
        for i, (h, w) in enumerate(sizes):
            with PILImage.open(tmp_path / "out" / name / f"img{i}.png") as img:
                assert img.size == (w, h), f"{name} on {h}x{w}"


@pytest.mark.criterion(4, "scaling postconditions")
def test_criterion_04_scaling():
    rng = np.random.default_rng(20260818)
    for i in range(100):
        h, w = rng.integers(2, 33, size=2)
        m = rng.random((h, w)) * rng.uniform(0.5, 10) + rng.uniform(-5, 5)
        if i % 7 == 0:  # inject a tie for the max so the argmax is a set
            m.flat[[0, m.size - 1]] = m.max() + 1.0
        assert np.ptp(m) > 0
        lo, hi = (0.0, 1.0) if i % 2 == 0 else sorted(rng.uniform(-3, 3, size=2))
        if hi - lo < 1e-3:
            hi = lo + 1.0

        scaled = rescale_values(m, "min-max", lo, hi)
        assert abs(scaled.min() - lo) < 1e-6
        assert abs(scaled.max() - hi) < 1e-6
        before = set(np.flatnonzero(m == m.max()))
        after = set(np.flatnonzero(scaled == scaled.max()))
        assert before == after

        normed = rescale_values(m - m.min(), "normalized")
        assert abs(normed.sum() - 1.0) < 1e-6
        assert (normed >= 0).all()


@pytest.mark.criterion(5, "DCT correctness")
def test_criterion_05_dct():
    rng = np.random.default_rng(5)
    for h in (1, 2, 3, 5, 8, 13, 31, 32):
        for w in (1, 2, 4, 7, 16, 32):
            x = rng.standard_normal((h, w))
            assert np.max(np.abs(idct2(dct2(x)) - x)) < 1e-9

    for a, b in [(1.0, 0.0), (0.3, -2.0), (5.5, 5.5)]:
        row = dct2(np.array([[a, b]]))
        expected = np.array([[(a + b) / math.sqrt(2), (a - b) / math.sqrt(2)]])
        assert np.max(np.abs(row - expected)) < 1e-12
        col = dct2(np.array([[a], [b]]))
        assert np.max(np.abs(col - expected.T)) < 1e-12

    c, h, w = 0.37, 5, 7
    spectrum = dct2(np.full((h, w), c))
    assert abs(spectrum[0, 0] - c * math.sqrt(h * w)) < 1e-12
    spectrum[0, 0] = 0.0
    assert np.max(np.abs(spectrum)) < 1e-12


def naive_dct2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    out = np.zeros((h, w))
    for u in range(h):
        au = math.sqrt(1 / h) if u == 0 else math.sqrt(2 / h)
        for v in range(w):
            av = math.sqrt(1 / w) if v == 0 else math.sqrt(2 / w)
            s = 0.0
            for m in range(h):
                for n in range(w):
                    s += (x[m, n]
                          * math.cos(math.pi * (2 * m + 1) * u / (2 * h))
                          * math.cos(math.pi * (2 * n + 1) * v / (2 * w)))
            out[u, v] = au * av * s
    return out


def naive_idct2(coeff: np.ndarray) -> np.ndarray:
    h, w = coeff.shape
    out = np.zeros((h, w))
    for m in range(h):
        for n in range(w):
            s = 0.0
            for u in range(h):
                au = math.sqrt(1 / h) if u == 0 else math.sqrt(2 / h)
                for v in range(w):
                    av = math.sqrt(1 / w) if v == 0 else math.sqrt(2 / w)
                    s += (au * av * coeff[u, v]
                          * math.cos(math.pi * (2 * m + 1) * u / (2 * h))
                          * math.cos(math.pi * (2 * n + 1) * v / (2 * w)))
            out[m, n] = s
    return out


@pytest.mark.criterion(6, "signature oracle equivalence")
def test_criterion_06_signature_oracle(registry):
    model = registry.get("IMSIG")
    params = resolve(registry.get_manifest("IMSIG"), default_global_config())
    rng = np.random.default_rng(6)
    for _ in range(20):
        data = rng.random((8, 8))
        image = Image(data[:, :, np.newaxis], ColorSpace.GRAY)
        produced = model.compute(image, params)
        oracle = naive_idct2(np.sign(naive_dct2(data))) ** 2
        assert np.max(np.abs(produced - oracle)) < 1e-9


@pytest.mark.criterion(7, "color round trips")
def test_criterion_07_color_round_trips():
    grid = np.linspace(0.0, 1.0, 9)
    rgb = np.stack(np.meshgrid(grid, grid, grid, indexing="ij"), axis=-1)
    rgb = rgb.reshape(27, 27, 3)

    lab_rt = lab_to_rgb(rgb_to_lab(rgb))
    assert np.max(np.abs(lab_rt - rgb)) < 1e-3

    ycbcr_rt = ycbcr_to_rgb(rgb_to_ycbcr(rgb))
    assert np.max(np.abs(ycbcr_rt - rgb)) < 1e-6

    hsv_rt = hsv_to_rgb(rgb_to_hsv(rgb))
    assert np.max(np.abs(hsv_rt - rgb)) < 1e-6


@pytest.mark.criterion(8, "experiment reproduction")
def test_criterion_08_experiment(tmp_path, registry, image_dir):
    out = tmp_path / "out"
    spec_path = tmp_path / "exp.yaml"
    spec_path.write_text(
        "experiment:\n"
        "  name: smoothing-comparison\n"
        "  description: shared no-smoothing baseline with one override\n"
        f"  input_path: {image_dir}\n"
        f"  base_output_path: {out}\n"
        "  parameters:\n"
        "    do_smoothing: none\n"
        "runs:\n"
        "  - algorithm: cG\n"
        f"    output_path: {out / 'cg-smoothed'}\n"
        "    parameters:\n"
        "      do_smoothing: default\n"
        "  - algorithm: cG\n"
        f"    output_path: {out / 'cg-plain'}\n"
        "  - algorithm: IMSIG\n"
        "  - algorithm: uniform\n"
        "    parameters:\n"
        "      color_space: gray\n"
    )
    report = execute(plan(parse_experiment(spec_path), registry))
    assert report.succeeded and report.total_ok == 12

    # Predicted layout: explicit dirs verbatim, defaults named for the algorithm.
    expected_dirs = ["cg-smoothed", "cg-plain", "IMSIG", "uniform"]
    assert sorted(p.name for p in out.iterdir()) == sorted(expected_dirs)
    for sub in expected_dirs:
        names = sorted(p.name for p in (out / sub).iterdir())
        assert names == ["_run_record", "alpha.png", "bravo.png", "charlie.png"]

    records = {sub: json.loads((out / sub / "_run_record").read_text())
               for sub in expected_dirs}
    assert records["cg-smoothed"]["provenance"]["do_smoothing"] == "run"
    assert records["cg-smoothed"]["parameters"]["do_smoothing"] == "default"
    for sub in ("cg-plain", "IMSIG", "uniform"):
        assert records[sub]["provenance"]["do_smoothing"] == "experiment"
        assert records[sub]["parameters"]["do_smoothing"] == "none"
    assert records["uniform"]["provenance"]["color_space"] == "run"
    assert records["IMSIG"]["provenance"]["color_space"] == "global_default"

    snapshot = {p: p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
    execute(plan(parse_experiment(spec_path), registry))
    assert {p: p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()} == snapshot


@pytest.mark.criterion(9, "asset lifecycle")
def test_criterion_09_assets(tmp_path, image_dir, caplog):
    cache = tmp_path / "cache"
    models_root = tmp_path / "models"
    asset = make_asset(tmp_path / "srv", "weights.bin", b"w" * 256)
    make_stub_model(models_root, name="stub", model_files=[asset])
    bad = dict(asset, sha256="0" * 64)
    make_stub_model(models_root, name="badsum", model_files=[bad])
    missing = {
        "relative_path": "weights.bin",
        "url": (tmp_path / "never-served.bin").as_uri(),
        "sha256": "0" * 64,
    }
    make_stub_model(models_root, name="needy", model_files=[missing])
    registry = Registry(models_root=models_root, cache_dir=cache)

    # Download is idempotent.
    stub = registry.get_manifest("stub")
    first = download_assets(stub, cache)
    assert first.downloaded == ("weights.bin",)
    payload = (cache / "stub" / "weights.bin").read_bytes()
    second = download_assets(stub, cache)
    assert second.downloaded == () and second.skipped == ("weights.bin",)
    assert (cache / "stub" / "weights.bin").read_bytes() == payload

    # A checksum mismatch removes the offending file.
    with pytest.raises(ChecksumMismatchError):
        download_assets(registry.get_manifest("badsum"), cache)
    assert not (cache / "badsum" / "weights.bin").exists()
    assert not list(cache.rglob("*.part"))

    # clean . download . clean leaves the cache empty.
    fresh = tmp_path / "fresh-cache"
    clean_assets(stub, fresh)
    download_assets(stub, fresh)
    assert (fresh / "stub" / "weights.bin").exists()
    clean_assets(stub, fresh)
    assert not list(fresh.iterdir())

    # Missing assets skip that run with a warning; the rest completes.
    spec = ExperimentSpec(
        "deg", "", str(image_dir), str(tmp_path / "out"), {},
        (RunSpec("needy"), RunSpec("uniform")),
    )
    with caplog.at_level(logging.WARNING, logger="salvo"):
        report = execute(plan(spec, registry))
    assert report.runs[0].skipped == 3 and report.runs[0].ok == 0
    assert report.runs[1].ok == 3
    assert report.succeeded
    assert any("needy" in rec.message for rec in caplog.records)


def _wait_until_dead(pid: int, timeout_s: float = 5.0) -> bool:
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        time.sleep(0.05)
    return False


@pytest.mark.criterion(10, "external protocol conformance")
@pytest.mark.skipif(not REF_MANIFEST.exists(), reason="reference model not built")
def test_criterion_10_reference_model(tmp_path, image_dir, monkeypatch):
    registry = Registry(models_root=REF_MODELS_ROOT, cache_dir=tmp_path / "cache")
    manifest = registry.get_manifest("refcontrast")
    handle = ExternalModelHandle(manifest, registry.cache_dir)

    pid_file = tmp_path / "server.pid"
    monkeypatch.setenv("REFCONTRAST_PID_FILE", str(pid_file))

    # Valid request: output matches the in-framework oracle.
    image = load_image(image_dir / "alpha.png")
    produced = invoke_external(handle, image, {"contrast_window": 9}, tmp_path / "w1")
    luma = image.data[:, :, 0] * 0.299 + image.data[:, :, 1] * 0.587 + image.data[:, :, 2] * 0.114
    oracle = np.abs(luma - uniform_filter(luma, size=9, mode="nearest"))
    assert produced.shape == oracle.shape
    assert np.max(np.abs(produced - oracle)) < 1e-6
    assert _wait_until_dead(int(pid_file.read_text())), "server outlived the request"

    # A bad protocol version is rejected with an error response and exit 1.
    request = {
        "protocol_version": 99,
        "image_path": str(image_dir / "alpha.png"),
        "params": {},
        "output_path": str(tmp_path / "unused.f32raw"),
    }
    completed = subprocess.run(
        handle.command(),
        input=json.dumps(request) + "\n",
        capture_output=True,
        text=True,
        cwd=handle.working_directory(),
        env=handle.environment(),
        timeout=60,
    )
    assert completed.returncode == 1
    response = json.loads(completed.stdout.splitlines()[0])
    assert response["status"] == "error"
    assert "version" in response["error_message"].lower()
    assert not (tmp_path / "unused.f32raw").exists()

    # An artificial delay triggers timeout handling and leaves no orphans.
    pid_file.unlink()
    monkeypatch.setenv("REFCONTRAST_DELAY_S", "30")
    slow = ExternalModelHandle(
        dataclasses.replace(manifest, timeout_s=1.0), registry.cache_dir
    )
    started = time.monotonic()
    with pytest.raises(ModelTimeoutError):
        invoke_external(slow, image, {"contrast_window": 9}, tmp_path / "w2")
    assert time.monotonic() - started < 15
    assert not (tmp_path / "w2").exists()
    assert _wait_until_dead(int(pid_file.read_text())), "timed-out server left running"
