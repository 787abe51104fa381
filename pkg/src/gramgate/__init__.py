"""Risk-controlled gating over black-box response scores.

Calibrates a single gate threshold with finite-sample expected-loss
control (plain, batched-bootstrap, and randomized weighted-average
variants), scores response batches through Gram-matrix geometry
(interaction energies and spectral-overlap classification), and
verifies every guarantee with a Monte Carlo harness.
"""

from .calibrators import (
    BatchPartition,
    SimplexWeights,
    WeightLaw,
    bb_crc_calibrate,
    crc_calibrate,
    lambda_grid,
    multinomial_count_weights,
    partition_items,
    rbwa_crc_calibrate,
    sample_dirichlet,
    uniform_weights,
)
from .gram import (
    EmbeddingBatch,
    GramMatrices,
    RankRProjector,
    build_gram,
    eigengap_rank,
    interaction_energies,
    interaction_energy,
    normalized_energies,
    normalized_energy,
    operator_norm,
    projector_overlap,
    top_r_projector,
    top_r_projector_dual,
)
from .gpso import (
    GpsoDiagnostics,
    GpsoReport,
    PipelineConfig,
    Prototype,
    batch_scatter,
    build_prototype,
    classify,
    grouped_cv_evaluate,
)
from .harness import (
    CalibratorConfig,
    RiskReportRow,
    ScoreLaw,
    SeverityModel,
    SyntheticSpec,
    anti_concentration_check,
    clt_check,
    fs_reduction_report,
    generate_trial,
    rbwa_moment_check,
    run_risk_experiment,
)
from .policy import (
    CalibrationItem,
    Threshold,
    empirical_risk,
    gate,
    loss,
)

__version__ = "0.1.0"
