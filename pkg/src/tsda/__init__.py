"""Two-stream domain adaptation: per-layer shared or affinely coupled weights,
an RBF-kernel MMD regularizer, AdaDelta training and MMD-based selection of
which layers to couple."""
from .data import (
    DatasetFormatError,
    DomainDataset,
    gen_intensity_shift_patterns,
    gen_two_moons_shift,
    holdout_split,
    read_dataset,
    write_dataset,
)
from .losses import coupling_loss, mmd2, task_loss, total_loss
from .metrics import accuracy, average_precision, pcp_score, pr_curve
from .optim import AdaDelta
from .selection import enumerate_configs, score_pair, select_config
from .trainer import RunReport, TrainConfig, TrainingError, joint_train, pretrain_source, train
from .twostream import (
    SharingMode,
    StreamPair,
    build_pair,
    init_target_from_source,
    load_checkpoint,
    parse_pattern,
    predict,
    save_checkpoint,
)

__version__ = "0.1.0"
