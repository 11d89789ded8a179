"""Zero-base generalized few-shot learning on frozen features, with
mean-variance classifier normalization."""

from .features import (DatasetError, Episode, EpisodeSpec, FeatureDataset,
                       SyntheticConfig, generate_synthetic, load_dataset,
                       sample_episode, save_dataset, split_base_novel)
from .model import (LinearClassifier, ce_gradient, cross_entropy_loss, logits,
                    softmax)
from .normalization import (NormalizationConfig, WeightStats, compute_stats,
                            mean_center, norm_equalize, proposition1_residual,
                            variance_balance)
from .postopt import AffineParams, apply_affine, init_affine, train_affine
from .training import (TrainConfig, extend_classifier, finetune, sgd_step,
                       train_base)
from .config import PipelineConfig
from .evaluation import (EpisodeAggregate, EvalReport, aggregate, evaluate,
                         predict, run_episode, upper_bounds)

__version__ = "0.1.0"
