"""Depth-guided neural signed-distance reconstruction, verified on synthetic scenes."""

from .errors import ConfigError, ContractError, FitError, InputError, MetricError, NumericalError
from .geometry import CameraIntrinsics, Pose, Ray, project, ray_at, ray_for_pixel
from .field import ArchitectureConfig, FieldModel, load_checkpoint, save_checkpoint
from .renderer import RenderConfig, render_image, render_ray
from .losses import LossConfig, total_loss
from .depthguide import DepthMap, SparseObservation, fit_depth_scale
from .scenegen import AnalyticScene, generate_dataset, preset
from .dataset import SceneDataset
from .meshing import Mesh, export_mesh, marching_cubes
from .metrics import chamfer, depth_rmse, psnr
from .trainer import TrainConfig, train

__all__ = [
    "ConfigError", "ContractError", "FitError", "InputError", "MetricError", "NumericalError",
    "CameraIntrinsics", "Pose", "Ray", "project", "ray_at", "ray_for_pixel", "ArchitectureConfig",
    "FieldModel", "load_checkpoint", "save_checkpoint", "RenderConfig", "render_image", "render_ray",
    "LossConfig", "total_loss", "DepthMap", "SparseObservation", "fit_depth_scale", "AnalyticScene",
    "generate_dataset", "preset", "SceneDataset", "Mesh", "export_mesh", "marching_cubes", "chamfer",
    "depth_rmse", "psnr", "TrainConfig", "train",
]

__version__ = "0.1.0"
