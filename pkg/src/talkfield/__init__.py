"""Audio-driven talking heads: 3D-prior conditioned radiance field with a local-global standardized space."""

from .camera import CameraPose, Ray, generate_rays, look_at_pose
from .head_param import ExtractedPrior, HeadParams, PriorExtractor, assemble, extract_prior
from .nerf import ConditionalField, RenderConfig, UpsamplerHu, composite, photometric_loss, render_frame, render_ray
from .pipeline import Checkpoint, Pipeline, PipelineConfig, evaluate, synthesize
from .synth import DataConfig, SceneSpec, generate_dataset, make_scene, render_gt

__version__ = "0.1.0"
