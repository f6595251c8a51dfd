"""Playback-speed order prediction for self-supervised video representation learning."""

from .backbones import BackboneConfig, build_backbone, extract_features, extract_retrieval_features
from .config import TrainConfig, load_config
from .data import (
    DatasetManifest,
    FrameVolume,
    SyntheticConfig,
    build_manifest,
    generate_synthetic,
    ingest_video,
    spatial_augment,
)
from .heads import OrderHead, OrderHeadConfig, SpeedHead, pairwise_encode, task_loss
from .report import emit_report
from .retrieval import FeatureIndex, build_gallery, query_topk, retrieval_eval, topk_accuracy
from .sampler import (
    ClipSpec,
    label_to_permutation,
    permutation_to_label,
    sample_clip,
    sample_tuple,
    speed_label,
    tuple_speeds,
)
from .tgn import TemporalGroupNorm, attach_norm, plan_groups, tgn_forward, tgn_reference_oracle
from .train import evaluate_classification, finetune, load_checkpoint, pretrain, save_checkpoint

__version__ = "0.1.0"
