"""Composite label maps, synthesis quality metrics and diffusion numerics
for 3D LGE MRI.

Submodules
----------
volcore       volume types, NIfTI / raw I/O, resampling, smoothing
clusterlab    intensity k-means, silhouette and Davies-Bouldin scores
composite     fusion of expert masks with cluster labels
synthmetrics  PSNR, MS-SSIM, FID, MMD and feature files
diffmath      cosine noise schedule, forward noising, guidance blending
losses        soft Dice, cross-entropy, shape-consistency loss
augment       seeded spatial / intensity augmentation plans
statsreport   Wilcoxon signed-rank test and report tables
cli           ``lge-synthlab`` command line
"""

from . import augment, clusterlab, composite, diffmath, errors, losses, statsreport, synthmetrics, volcore
from .clusterlab import davies_bouldin, kmeans, silhouette_score, sweep_k
from .composite import compose, detect_background_cluster, validate_composite
from .diffmath import cfg_blend, cosine_schedule, denoise_loss, forward_noise
from .losses import class_weights, cross_entropy, shape_consistency_loss, soft_dice
from .statsreport import emit_report, summarize, wilcoxon_signed_rank
from .synthmetrics import extract_features, fid, mmd2, moments, ms_ssim, psnr
from .volcore import (
    LabelMap3D,
    MaskPair,
    Volume3D,
    gaussian_smooth,
    load_volume,
    normalize_intensity,
    resample,
    save_volume,
)

__version__ = "0.1.0"
