"""Probabilistic pose-and-shape estimation from single views.

Two conditional diffusion stages (normalized coordinate maps, then
triplanar signed-distance latents) followed by similarity registration of
sampled hypotheses into the metric scene.
"""

from .camera import Camera, Sim3Transform, look_at_camera, rotation_about_axis
from .config import RunConfig, load_config
from .diffusion import (
    AnalyticMixtureDenoiser,
    GaussianMixture,
    NoiseSchedule,
    SampleRun,
    ddpm_sample,
    dpm_solver_pp_sample,
    forward_sample,
)
from .errors import (
    DegeneracyError,
    DivergenceError,
    DomainError,
    InsufficientEvidenceError,
    ProbShapeError,
    RegistrationFailedError,
    ShapeMismatchError,
    UsageError,
)
from .metrics import EvalProtocol, aligned_chamfer, best_of_n, chamfer_l1, fscore
from .render import NorfMap, Observation, render_norf, render_observation
from .registration import CorrespondenceSet, ransac_register, select_hypothesis, umeyama
from .shapes import (
    BoxShape,
    CupShape,
    EllShape,
    MeshShape,
    SphereShape,
    normalize_to_unit_cube,
)
from .surface import Mesh, extract_isosurface, extract_surface
from .triplane import FieldLibrary, Triplane, fit_triplanes, interpolate

__version__ = "0.1.0"

__all__ = [
    "AnalyticMixtureDenoiser",
    "BoxShape",
    "Camera",
    "CorrespondenceSet",
    "CupShape",
    "DegeneracyError",
    "DivergenceError",
    "DomainError",
    "EllShape",
    "EvalProtocol",
    "FieldLibrary",
    "GaussianMixture",
    "InsufficientEvidenceError",
    "Mesh",
    "MeshShape",
    "NoiseSchedule",
    "NorfMap",
    "Observation",
    "ProbShapeError",
    "RegistrationFailedError",
    "RunConfig",
    "SampleRun",
    "ShapeMismatchError",
    "Sim3Transform",
    "SphereShape",
    "Triplane",
    "UsageError",
    "aligned_chamfer",
    "best_of_n",
    "chamfer_l1",
    "ddpm_sample",
    "dpm_solver_pp_sample",
    "extract_isosurface",
    "extract_surface",
    "fit_triplanes",
    "forward_sample",
    "fscore",
    "interpolate",
    "load_config",
    "look_at_camera",
    "normalize_to_unit_cube",
    "ransac_register",
    "render_norf",
    "render_observation",
    "rotation_about_axis",
    "select_hypothesis",
    "umeyama",
]
