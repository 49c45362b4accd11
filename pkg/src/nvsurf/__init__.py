"""Differentiable deferred neural rendering on hash-featurized meshes.

A mesh rasterizer produces per-pixel surface intersections, a trainable
multi-resolution hash encoding featurizes them, and a FiLM-conditioned MLP
shader decodes view-dependent color; the whole pipeline trains end to end
against an L1 photometric loss with hand-written gradients.
"""

from .encoding import (EncodingConfig, MultiResHashGrid, encode_point,
                       encode_points, init_grid, level_resolutions)
from .errors import (CheckpointFormatError, ConfigurationError,
                     DimensionError, EmptySceneError, MeshFormatError,
                     NvsurfError, TrainingDivergenceError,
                     UndefinedMetricError)
from .geometry import (BVH, Camera, HitBuffer, HitRecord, TriangleMesh,
                       build_bvh, foreground_mask, intersect_ray,
                       load_mesh, normalize_scene, rasterize_view)
from .metrics import psnr, ssim
from .numerics import (LinearLayer, ParamGroup, adam_step,
                       finite_difference_check, l1_loss, linear_backward,
                       linear_forward)
from .pipeline import (ModelConfig, SceneModel, TrainConfig,
                       load_checkpoint, render_image, save_checkpoint,
                       train, train_step)
from .shader import (DeferredShader, DeformationNet, EmbeddingTable,
                     deform_features, encode_direction,
                     interpolate_lighting, shade)

__version__ = "0.1.0"
