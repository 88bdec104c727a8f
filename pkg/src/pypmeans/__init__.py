"""Power-law aware nonparametric clustering (pyp-means) and tooling."""
from .dataset import Dataset, DatasetError, load_csv, normalize, save_csv
from .core import (
    ClusterCapError,
    ClusterState,
    DegenerateLambdaError,
    PypParams,
    RunResult,
    agglomerate,
    estimate_lambda,
    fit,
    merge_gain_threshold,
    objective,
    partition,
    recluster_dr,
    threshold,
    update_centers,
)

__version__ = "0.1.0"
