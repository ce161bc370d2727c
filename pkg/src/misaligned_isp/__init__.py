"""Joint learning of image alignment and raw-to-sRGB mapping on misaligned pairs."""
from .backbone import LiteISPConfig, LiteISPNet, PatchDiscriminator, dwt_haar, iwt_haar, param_count
from .errors import (
    ConfigError,
    DimensionError,
    EmptyMaskWarning,
    ISPError,
    LoadError,
    MetadataError,
    ParameterError,
    UndefinedMetricError,
)
from .evalmetrics import EvalReport, evaluate, psnr, ssim
from .flowalign import align_target, make_estimator, valid_mask, warp
from .gcm import GCM, GCMConfig
from .harness import Checkpoint, TrainConfig, desk_config, fit, load_config, paper_zrr_config, run_ablation
from .losses import LossWeights, loss_gcm, loss_isp, masked_l1
from .rawdata import GenParams, RawFrame, demosaic_simple, make_synthetic_dataset, pack_bayer, synth_pair

__version__ = "0.1.0"
