"""Multi-style novel view synthesis toolkit.

Three trained stages: a 2D feature-statistic stylizer, a vanilla radiance
field, and a multi-style head set over the frozen field trunk, plus offline
rendering, a CLI, and an HTTP render service.
"""

from .adain import (
    AdainStylizer,
    PerceptualEncoder,
    StyleStatistics,
    StylizedDecoder,
    adain_loss,
    adain_transform,
    encode,
    extract_style_statistics,
    train_adain,
)
from .data import (
    AdainConfig,
    MultiStyleConfig,
    NerfConfig,
    RunConfig,
    SceneDataset,
    load_checkpoint,
    load_scene,
    save_checkpoint,
    weights_digest,
)
from .errors import (
    CheckpointCorruptError,
    CheckpointDigestError,
    CheckpointError,
    CheckpointStageError,
    CheckpointVersionError,
    StateError,
    StyleFieldError,
    ValidationError,
)
from .multistyle import (
    MultiStyleModel,
    StyleRegistry,
    StylizedDataset,
    build_stylized_dataset,
    interpolate_styles,
    load_multistyle_model,
    load_stylized_dataset,
    multistyle_forward,
    render_view,
    set_intensity,
    train_multistyle,
)
from .nerf import NerfNetwork, TrainedNerf, evaluate_psnr, nerf_forward, render_rays, train_nerf
from .rendering import (
    CameraPose,
    CompositeResult,
    QuadratureBatch,
    Ray,
    RayBatch,
    composite,
    generate_rays,
    hierarchical_sample,
    orbit_pose,
    positional_encode,
    stratified_sample,
)

__version__ = "0.1.0"
