"""Change-point tests for partially observed functional data."""

from .boundaries import Boundaries, BoundarySet, build_boundaries, read_boundaries, write_boundaries
from .core import (
    ChangeShape,
    CusumField,
    FunctionalDataset,
    Grid,
    TestResult,
    WeightSpec,
    abrupt_z,
    counts,
    cusum_field,
    estimate_changepoint,
    integral_weights,
    pooled_mean,
    quadrature,
    statistic,
    sum_weights,
    y_process,
    z_process,
)
from .permutation import (
    Bucket,
    BucketSet,
    Decision,
    PermutationPlan,
    exact_p,
    permute_adapter,
    seq_decide,
    vanilla_p,
)
from .simulation import (
    Delta,
    MissingnessSpec,
    NoiseSpec,
    ScenarioSpec,
    StudyConfig,
    gen_dataset,
    gen_mask,
    gen_noise,
    run_study,
)

__version__ = "0.1.0"
