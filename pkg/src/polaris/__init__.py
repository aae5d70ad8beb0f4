"""Learning monotonic progression networks from binary cross-sectional data."""

__version__ = "0.1.0"

from .core import (
    Cpd,
    CycleDetected,
    Dag,
    Dataset,
    DuplicateParent,
    IndexOutOfRange,
    InvalidDag,
    InvalidDataset,
    InvalidNetwork,
    MpnType,
    Network,
    PolarisError,
    SelfLoop,
    TooLarge,
    load_dataset,
    load_network,
    positive_rows,
    row_class,
    save_dataset,
    save_network,
    topological_order,
    validate_dag,
)
from .estimation import AlphaTable, alpha_table, estimate_cpd, family_counts, theta_plus
from .evaluation import EvalResult, ExperimentConfig, aupr, evaluate, precision_recall, run_experiment
from .filtering import CandidateSet, FamilyStats, alpha_filter, enumerate_candidates, filter_all
from .scoring import (
    BIC,
    POLARIS,
    FoldChange,
    LocalScore,
    NonPositiveAlpha,
    ScoreKind,
    bic_local,
    diprog,
    diprog_local,
    edge_confidences,
    edge_fold_change,
    local_score,
    network_score,
    polaris_local,
)
from .search import LearnResult, LocalScoreCache, build_cache, exact_search, learn
from .synthesis import (
    InfeasibleConfig,
    InvalidConfig,
    SynthesisConfig,
    exact_marginals,
    make_rng,
    random_dag,
    random_mpn,
    random_network,
    sample,
)
