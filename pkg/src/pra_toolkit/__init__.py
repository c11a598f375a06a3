"""Principal regression analysis of conditional stock correlations.

Lagged regressions of normalized return products on an index series,
their eigenmodes, and the random-matrix and Monte-Carlo nulls used to judge
which modes are significant.
"""

__version__ = "0.1.0"

from .exceptions import *  # noqa: F401,F403
from .fitting import FitResult, TwoScaleExponential, decay_horizon, fit_two_scale, two_scale_model
from .leverage import (
    BinnedCurve,
    LagCurve,
    LeverageCorrelation,
    additivity_residual,
    binned_conditional,
    leverage_full,
    leverage_partials,
)
from .nulls import (
    NullEnsembleStats,
    RMTSpectrum,
    SignificanceBand,
    delta_variance_analytic,
    identity_null_eigenvalues,
    null_ensemble,
    rmt_identity_spectrum,
    significance_bands,
    simulate_delta_null,
    spectral_residuals,
)
from .panel import (
    Gaussianizer,
    IndexSeries,
    InstantSeries,
    MissingPolicy,
    NormalizedPanel,
    PanelNormalizer,
    ReturnsPanel,
    gaussianize,
    index_series,
    instantaneous_stats,
    load_panel,
    normalize,
    read_panel_csv,
    write_panel_csv,
)
from .pipeline import PipelineConfig, ReportBundle, compare_runs, run_pipeline, validate_config
from .pra import (
    EigenDecomposition,
    PerturbationPrediction,
    PrincipalRegressionAnalysis,
    SymmetricMatrixSeries,
    analyze_lag,
    correlation_matrix,
    eig_symmetric,
    mode_overlap,
    perturbation_predict,
    quadratic_matrix,
    regression_matrix,
    rotation_delta,
    sign_split_matrices,
)
from .sidecar import read_sidecar, write_sidecar
from .synth import SynthSpec, generate, generate_null
