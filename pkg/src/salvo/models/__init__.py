"""Model registry and the in-process (native) model interface.

Native models implement ``compute`` directly in Python; external models are
described by a manifest and executed over the subprocess wire protocol (see
``salvo.external``). The registry resolves both uniformly by name.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from ..errors import SchemaError, UnknownModelError
from ..params import (
    GlobalConfig,
    ModelManifest,
    ResolvedParams,
    default_global_config,
    load_manifest,
)
from ..raster import Image

MODELS_ROOT_ENV = "SALVO_MODELS_ROOT"


class NativeModel:
    """An in-process saliency model.

    Subclasses implement ``compute``, which receives an image already
    converted to the effective color space and returns a raw 2-D float map.
    ``compute`` must be deterministic and produce only finite values; the
    framework handles resizing, smoothing, and value rescaling afterwards.
    """

    def __init__(self, manifest: ModelManifest) -> None:
        self.manifest = manifest

    @property
    def name(self) -> str:
        return self.manifest.name

    def compute(self, image: Image, params: ResolvedParams) -> np.ndarray:
        raise NotImplementedError


def _builtin_implementations() -> dict[str, type[NativeModel]]:
    from .cg import CenteredGaussianModel
    from .imsig import SignatureModel
    from .uniform import UniformModel

    return {
        "cG": CenteredGaussianModel,
        "IMSIG": SignatureModel,
        "uniform": UniformModel,
    }


def builtin_models_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "data" / "models"


class Registry:
    """Name -> model lookup over built-in and user-provided model directories.

    Built-in models ship inside the package; additional models are picked up
    from ``models_root`` (or the directory named by ``SALVO_MODELS_ROOT``),
    where every subdirectory holding a ``manifest.json`` defines one model.
    The registry is immutable once constructed.
    """

    def __init__(
        self,
        models_root: str | Path | None = None,
        global_config: GlobalConfig | None = None,
        cache_dir: str | Path | None = None,
    ) -> None:
        self.global_config = global_config or default_global_config()
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._manifests: dict[str, ModelManifest] = {}
        self._native_impls = _builtin_implementations()

        for manifest_path in sorted(builtin_models_dir().glob("*/manifest.json")):
            self._add(load_manifest(manifest_path))

        if models_root is None:
            models_root = os.environ.get(MODELS_ROOT_ENV)
        if models_root:
            root = Path(models_root)
            if root.is_dir():
                for manifest_path in sorted(root.glob("*/manifest.json")):
                    self._add(load_manifest(manifest_path))

    def _add(self, manifest: ModelManifest) -> None:
        assert manifest.model_dir is not None
        if manifest.name != manifest.model_dir.name:
            raise SchemaError(
                f"{manifest.model_dir}: manifest name {manifest.name!r} must match "
                f"its directory name {manifest.model_dir.name!r}"
            )
        if manifest.name in self._manifests:
            raise SchemaError(
                f"duplicate model name {manifest.name!r} "
                f"(already registered from {self._manifests[manifest.name].model_dir})"
            )
        if manifest.model_type == "native" and manifest.name not in self._native_impls:
            raise SchemaError(
                f"{manifest.model_dir}: native model {manifest.name!r} has no "
                "in-process implementation"
            )
        self._manifests[manifest.name] = manifest

    def model_names(self) -> list[str]:
        return sorted(self._manifests)

    def manifests(self) -> list[ModelManifest]:
        return [self._manifests[name] for name in self.model_names()]

    def get_manifest(self, name: str) -> ModelManifest:
        try:
            return self._manifests[name]
        except KeyError:
            raise UnknownModelError(
                f"unknown model {name!r} (known: {', '.join(self.model_names())})"
            ) from None

    def get(self, name: str):
        """Resolve a name to a ``NativeModel`` or ``ExternalModelHandle``."""
        manifest = self.get_manifest(name)
        if manifest.model_type == "native":
            return self._native_impls[name](manifest)
        from ..external import ExternalModelHandle

        return ExternalModelHandle(manifest, self.cache_dir)
