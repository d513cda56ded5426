"""Binary autoencoder hashing trained by auxiliary coordinates, serially or over a ring of machines."""

from .data import (Dataset, generate_synthetic, partition, pca_hash, pca_init, read_bvecs, read_fvecs,
                   train_validation_split, write_bvecs, write_fvecs)
from .evaluation import (MetricConfig, RetrievalEvaluator, ground_truth_knn, hamming_search, precision,
                         recall_at_r)
from .mac import (CIFAR_SCHEDULE, SIFT1B_SCHEDULE, SIFT_SCHEDULE, EvalConfig, MuSchedule, RunRecord,
                  mac_train, z_step, z_step_alternate, z_step_enumerate, z_step_relaxed_init)
from .model import BAModel, SgdConfig, e_ba, e_q, load_checkpoint, save_checkpoint
from .runtime import ParMACConfig, lockstep_simulate, run_parmac

__version__ = "0.1.0"

__all__ = [
    "Dataset", "generate_synthetic", "partition", "pca_hash", "pca_init", "read_bvecs", "read_fvecs",
    "train_validation_split", "write_bvecs", "write_fvecs", "MetricConfig", "RetrievalEvaluator",
    "ground_truth_knn", "hamming_search", "precision", "recall_at_r", "CIFAR_SCHEDULE",
    "SIFT1B_SCHEDULE", "SIFT_SCHEDULE", "EvalConfig", "MuSchedule", "RunRecord", "mac_train", "z_step",
    "z_step_alternate", "z_step_enumerate", "z_step_relaxed_init", "BAModel", "SgdConfig", "e_ba",
    "e_q", "load_checkpoint", "save_checkpoint", "ParMACConfig", "lockstep_simulate", "run_parmac",
]
