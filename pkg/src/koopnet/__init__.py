"""Koopman-operator identification of nonlinear networked dynamics.

The package splits the problem into composable stages: snapshot simulation,
a sample-space Koopman operator that yields vector-field estimates, sparse
regression on node functions for topology reconstruction, per-node lifted
identification with continuous-time recovery, and scoring against ground
truth. ``TwoStepIdentifier`` chains the stages behind a scikit-learn style
fit/predict interface.
"""

__version__ = "0.1.0"

from .dictionary import (
    Centered,
    Constant,
    DictionarySpec,
    Exp,
    GaussianRBF,
    Monomial,
    NodeFunctionSet,
    Sigmoid,
    Sine,
    TestFunctionSet,
    center_node_functions,
    eval_matrix,
    monomial_dictionary,
    monomial_node_functions,
    parse_function,
    rbf_set,
)
from .dual import (
    DualOperator,
    estimate_vector_field,
    fit_dual_operator,
    rbf_test_sets,
    select_test_set,
)
from .local import (
    GlobalLiftedModel,
    LocalLiftedModel,
    ParameterEstimate,
    assemble_global,
    extract_parameters,
    fit_all_local,
    fit_local_discrete,
    predict_lifted,
    to_continuous,
)
from .metrics import ScoreReport, ScoringError, local_error, score_run
from .models import (
    NetworkModel,
    Term,
    make_erdos_renyi_polynomial,
    make_hindmarsh_rose,
    make_nonpolynomial_network,
    rng_for,
)
from .numerics import (
    LassoResult,
    NonPrincipalSpectrumError,
    NumericalFailure,
    expm,
    lasso,
    logm,
    pinv,
)
from .pipeline import DualGlobalIdentifier, DualKoopman, TwoStepIdentifier
from .refine import model_from_estimate, refine_parameters
from .simulate import (
    DatasetFormatError,
    DivergenceError,
    SnapshotDataset,
    flow,
    load_dataset,
    make_dataset,
    save_dataset,
)
from .topology import (
    ROCResult,
    TopologyEstimate,
    build_design_matrix,
    estimate_weights,
    roc_sweep,
    threshold_topology,
)
