"""Cross-view image matching at desk scale.

A numpy library for training and evaluating ground-to-aerial (and, by
role swap, aerial-to-ground) image retrieval: ranking-loss training with
exhaustive and hard-negative triplet mining, two-stream and joint
encoders with multi-scale aggregation, a feature-fusion head, a
configurable stand-in for learned view synthesis, and retrieval plus
geo-localization metrics.
"""

from .autodiff import Tensor, reverse_accumulate
from .config import StageConfig, load_stage_config, stage_config_from_text
from .containers import (Checkpoint, read_checkpoint, read_embeddings,
                         write_checkpoint, write_embeddings)
from .encoder import (ConvBlock, Encoder, EncoderConfig, JointModel,
                      TwoStreamModel, build_joint, build_two_stream,
                      toy_encoder_config, warm_start_joint)
from .fusion import FusionModel, fuse_query, init_fusion, project_reference
from .gradcheck import finite_diff_check
from .losses import (LossConfig, Triplet, TripletBatch, batch_loss,
                     enumerate_exhaustive_triplets, joint_loss,
                     mine_hard_negatives, pair_distance, soft_margin_loss,
                     triplet_loss, weighted_soft_margin_loss)
from .manifest import Manifest, load_dataset, load_manifest
from .params import InitSpec, ParamStore, adam_step, draw_init
from .retrieval import (EmbeddingMatrix, GeoSample, RecallReport,
                        distance_matrix, geolocalize_curve, haversine_m,
                        recall_at_k, recall_report, top_one_percent)
from .synthetic import SyntheticSpec, generate_synthetic_dataset
from .synthproxy import (ProxyConfig, canny, proxy_synthesize, stack_4channel,
                         to_grayscale)
from .training import embed_manifest, extract_embeddings, run_stage

__version__ = "0.1.0"
