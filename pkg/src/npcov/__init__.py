"""Decision-logic coverage for feed-forward networks.

The pipeline: propagate a prediction's logit back through the network
to score per-neuron relevance, keep each layer's smallest top slice
that holds an alpha share of it (the critical path), cluster the
training set's paths per class into a decision graph, then measure how
thoroughly a test suite exercises that graph through similarity and
activation-distance buckets. Neuron-level baselines, masking
evaluations, and suite statistics round out the toolkit.
"""

from .abstraction import (
    AbstractPath,
    Cluster,
    DecisionGraph,
    KMeansResult,
    abstract_mask_eval,
    abstract_width,
    build_decision_graph,
    filter_beta,
    graph_params,
    kmeans,
    load_graph,
    merge,
    save_graph,
    save_graph_file,
)
from .cdp import (
    CriticalPath,
    extract_cdp,
    layer_jaccard,
    mask_eval,
    ncdp,
    path_similarity,
    quintile_mask_eval,
    width,
)
from .comparators import (
    ActivationRanges,
    baseline_report,
    kmnc,
    nbc,
    nc,
    profile_ranges,
)
# The ratio accessor stays at npcov.coverage.coverage: re-exporting it
# here would shadow the submodule binding of the same name.
from .coverage import (
    CoverageConfig,
    CoverageState,
    anpc_update,
    distance_bucket,
    merge_states,
    nearest_member,
    new_state,
    report,
    run_suite,
    similarity_bucket,
    snpc_update,
)
from .errors import GraphModelMismatch, LoadError, ShapeError, TrainingDiverged
from .lrp import RelevanceTrace, relevance
from .metrics import (
    CoverageChange,
    SimilarityReport,
    correlations,
    error_sensitivity_suites,
    natural_errors,
    normalized_coverage_change,
    output_impartiality,
    similarity_stats,
    write_suite_csv,
)
from .model import (
    ActivationTrace,
    Layer,
    Model,
    coverage_layer_sizes,
    forward,
    load_model,
    predict,
    save_model,
    to_bytes,
)
from .trainkit import (
    LabeledDataset,
    TrainConfig,
    accuracy,
    grad_input,
    load_dataset,
    make_blobs,
    pgd_attack,
    save_dataset,
    split_dataset,
    train_sgd,
)

__version__ = "0.1.0"
