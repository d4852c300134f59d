"""salvo: run saliency models over image batches with uniform parameters.

The library wraps heterogeneous saliency-model implementations — some
in-process, some external programs — behind one parameter system and one
post-processing pipeline, so maps produced by different models are directly
comparable and every run is reproducible from its recorded settings.
"""

__version__ = "0.1.0"

from .errors import SalvoError
from .external import (
    PROTOCOL_VERSION,
    ExternalModelHandle,
    clean_assets,
    download_assets,
    invoke_external,
    verify_assets,
)
from .experiment import (
    ExperimentReport,
    ExperimentSpec,
    RunPlan,
    execute,
    parse_experiment,
    plan,
    run_experiment_file,
)
from .mapops import fit_to_dims, gaussian_kernel, rescale_values, resample_bilinear, smooth
from .models import NativeModel, Registry
from .params import (
    GLOBAL_PARAMETER_NAMES,
    EffectivePipelineSettings,
    GlobalConfig,
    ModelManifest,
    ResolvedParams,
    default_global_config,
    describe,
    load_global_config,
    load_manifest,
    resolve,
    resolve_aliases,
)
from .raster import ColorSpace, Image, SaliencyMap, convert_color, load_image, read_f32raw, write_map

__all__ = [
    "__version__",
    "PROTOCOL_VERSION",
    "SalvoError",
    "ColorSpace",
    "Image",
    "SaliencyMap",
    "convert_color",
    "load_image",
    "read_f32raw",
    "write_map",
    "GLOBAL_PARAMETER_NAMES",
    "EffectivePipelineSettings",
    "GlobalConfig",
    "ModelManifest",
    "ResolvedParams",
    "default_global_config",
    "describe",
    "load_global_config",
    "load_manifest",
    "resolve",
    "resolve_aliases",
    "gaussian_kernel",
    "smooth",
    "rescale_values",
    "resample_bilinear",
    "fit_to_dims",
    "NativeModel",
    "Registry",
    "ExternalModelHandle",
    "invoke_external",
    "download_assets",
    "clean_assets",
    "verify_assets",
    "ExperimentSpec",
    "ExperimentReport",
    "RunPlan",
    "parse_experiment",
    "plan",
    "execute",
    "run_experiment_file",
]
