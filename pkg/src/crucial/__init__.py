"""Confidence-weighted loss family for time-series training.

The package has four layers:

* ``numerics``  -- scalar kernels (Lambert W, erfc), population loss moments,
  and a platform-stable seeded random source.
* ``loss``     -- the confidence-weighted loss family: closed-form confidence
  weights, the skewness-adaptive variant, and the sinusoidally cycled variant.
* ``sampler``  -- expected squared sampling error under uniform versus
  exponentially tilted selection, analytic and Monte Carlo, plus a toy
  selection/decay population simulator.
* ``data`` / ``trainer`` -- synthetic time-series generators, CSV interchange,
  prefix datasets, small numpy models, the training loop that consumes
  per-sample gradient factors, and backward/forward transfer metrics.

``properties`` packages the executable invariant suites and ``cli`` exposes
everything as subcommands.
"""

from .numerics import (
    LossStats,
    SeededRng,
    derive_seed,
    erfc,
    lambert_w0,
    loss_stats,
)
from .loss import (
    CrucialConfig,
    EpochState,
    KappaFormula,
    ModulatedLoss,
    Variant,
    advance_epoch_adp,
    baseline_confidence_loss,
    crucial_adp,
    crucial_sin,
    initial_epoch_state,
    kappa_star,
    loss_gradient_factor,
    modulated_value,
    write_loss_trace,
)
from .sampler import (
    ErrorReport,
    LossPopulation,
    Ordering,
    PopulationKind,
    SelectionCondition,
    SelectionMode,
    analytic_expected_errors,
    compare_conditions,
    distribution_cycle_sim,
    mc_expected_errors,
    ordering_check,
)
from .data import (
    CsvLoadResult,
    Dataset,
    PrefixDataset,
    TimeSeriesSample,
    gen_drift_classification,
    gen_sine_regression,
    load_csv,
    make_prefixes,
    save_csv,
)
from .trainer import (
    ElmanRNN,
    LinearModel,
    MLPModel,
    Model,
    TaskSpec,
    TrainResult,
    TrainingDiverged,
    TransferMatrix,
    auc_roc,
    bwt,
    evaluate,
    forward_backward,
    fwt,
    make_model,
    run_continuous,
    train_epoch,
    train_model,
    write_metrics_csv,
    write_transfer_json,
)

__version__ = "0.1.0"
