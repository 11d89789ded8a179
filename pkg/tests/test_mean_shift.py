"""The mean-shift mechanism behind zero-base fine-tuning.

Softmax cross-entropy gradients sum to zero across classes, so without weight
decay the sum of all column means never changes. Whatever mass the novel
columns gain, the base columns lose, shared among them. The ratio
mu_bar_novel / |mu_bar_base| is therefore tied to the class counts.
"""

import numpy as np

from mvcn.config import PipelineConfig
from mvcn.evaluation import episode_spec, run_pipeline
from mvcn.experiment import prepare_splits, pretrain
from mvcn.features import SyntheticConfig, generate_synthetic
from mvcn.model import ce_gradient
from mvcn.normalization import compute_stats
from mvcn.training import TrainConfig, extend_classifier, finetune


def test_column_mean_sum_conserved(full_setup):
    cfg, splits, pre = full_setup
    res = run_pipeline(splits.base_test, splits.novel, episode_spec(cfg, 0), cfg, pre)
    ep = res.episode
    clf = extend_classifier(pre, ep.n_novel, 1)
    start = compute_stats(clf).mu.sum()
    totals = []
    finetune(clf, ep, TrainConfig(0.003, weight_decay=0.0, iterations=200),
             callback=lambda s, c: totals.append(c.weights.mean(axis=0).sum()))
    assert np.allclose(totals, start, atol=1e-12, rtol=0)


def test_gradient_columns_sum_to_zero(rng):
    for _ in range(20):
        p = rng.dirichlet(np.ones(9))
        g = ce_gradient(rng.random(6), p, int(rng.integers(9)))
        assert np.abs(g.sum(axis=1)).max() <= 1e-15


def test_shift_ratio_scales_with_base_class_count():
    cfg = PipelineConfig()
    splits = prepare_splits(generate_synthetic(SyntheticConfig(n_base_classes=64)), cfg)
    pre = pretrain(splits, cfg)
    none = cfg.with_ablation("none")
    stats = [run_pipeline(splits.base_test, splits.novel, episode_spec(none, i), none, pre)
             .finetuned_stats for i in range(20)]
    assert sum(s.mu_bar_novel > 0 and s.mu_bar_novel > 10 * abs(s.mu_bar_base)
               for s in stats) >= 18
    assert sum(s.sigma_bar_base > s.sigma_bar_novel for s in stats) >= 18
