"""radkit: desk-scale MIMO radar self-supervised pretraining toolkit.

Pipeline pieces, in dependency order: domain types and seeded streams
(:mod:`radkit.types`, :mod:`radkit.rng`), file formats (:mod:`radkit.io`),
the scene-to-tensor simulator (:mod:`radkit.simulate`), raw- and
heatmap-domain augmentations (:mod:`radkit.augment`), the gradient-checked
encoder and frozen teacher (:mod:`radkit.encoder`), contrastive losses
(:mod:`radkit.contrastive`), the pretraining loop and linear probe
(:mod:`radkit.train`), detection/retrieval metrics (:mod:`radkit.metrics`),
and the scikit-learn estimator facade (:mod:`radkit.estimators`).
"""

from .augment import AugmentationSpec, AugmentStep, ViewPair
from .contrastive import ContrastiveConfig, EmbeddingBatch
from .encoder import EncoderParams, vision_oracle
from .estimators import RadarContrastivePretrainer, RidgeProbe
from .metrics import Detection, mean_ap, retrieval_topk, rotated_iou
from .rng import RngStream
from .simulate import SimConfig, integrate_heatmap, synthesize_tensor
from .train import Frame, FrameDataset, ProbeConfig, TrainConfig, linear_probe, pretrain
from .types import (
    ArrayGeometry,
    Heatmap,
    PolarGrid,
    RotatedBox,
    Scatterer,
    Scene,
    VirtualArrayTensor,
)

__version__ = "0.1.0"

__all__ = [
    "ArrayGeometry",
    "AugmentStep",
    "AugmentationSpec",
    "ContrastiveConfig",
    "Detection",
    "EmbeddingBatch",
    "EncoderParams",
    "Frame",
    "FrameDataset",
    "Heatmap",
    "PolarGrid",
    "ProbeConfig",
    "RadarContrastivePretrainer",
    "RidgeProbe",
    "RngStream",
    "RotatedBox",
    "Scatterer",
    "Scene",
    "SimConfig",
    "TrainConfig",
    "ViewPair",
    "VirtualArrayTensor",
    "integrate_heatmap",
    "linear_probe",
    "mean_ap",
    "pretrain",
    "retrieval_topk",
    "rotated_iou",
    "synthesize_tensor",
    "vision_oracle",
    "__version__",
]
