"""miakit: membership-inference attack toolkit.

Trains an overfit target classifier (or ingests posterior dumps from an
externally trained one), mounts a contrastive-learning membership
attack against it alongside six classic baselines, and reports balanced
accuracy, F1, ROC/AUC, and TPR at low FPR.
"""

from .config import ExperimentConfig, load_config, stage_seed
from .contrastive import (
    AttackModel,
    ContrastiveConfig,
    MembershipDecision,
    build_attack_data,
    cosine_sim,
    finetune,
    infer_membership,
    make_views,
    membership_scores,
    nt_xent,
    nt_xent_with_grad,
    train_encoder,
)
from .data import (
    Dataset,
    MembershipSplit,
    PosteriorDump,
    gen_synthetic,
    load_posterior_dump,
    split_membership,
    write_posterior_dump,
)
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    FormatError,
    MiakitError,
    NumericError,
    ParameterError,
    StageError,
    StateError,
    TrainingError,
)
from .features import build_feature, build_features, entropy
from .metrics import (
    AttackReport,
    RocCurve,
    balanced_accuracy,
    f1,
    roc,
    score_report,
    tpr_at_fpr,
)
from .nn import (
    Gradients,
    Network,
    NetworkSpec,
    backward,
    dropout_apply,
    forward,
    init_network,
    load_network,
    save_network,
    sgd_step,
    softmax,
    softmax_cross_entropy,
)
from .pipeline import run_ablation, run_experiment
from .target import (
    ShadowPair,
    TargetProfile,
    build_shadows,
    posteriors,
    train_target,
)

__version__ = "0.1.0"
