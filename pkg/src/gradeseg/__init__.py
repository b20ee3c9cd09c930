"""Grade-aware training strategies for tumour segmentation, evaluated on synthetic phantoms."""

from .dataset import (Grade, PhantomConfig, Subject, generate_cohort, generate_phantom,
                      inject_grade_channel, load_subject, save_subject, stratify)
from .model import ModelSpec, ModelState, backward, forward, init_model, loss
from .stats import RegionKind, better_ratio, compare, dice, region_mask, wilcoxon_one_sided
from .training import FoldPlan, Regime, TrainConfig, make_folds, run_all, train_fold

__version__ = "0.1.0"
