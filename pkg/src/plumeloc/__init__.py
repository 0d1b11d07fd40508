"""plumeloc: source-term estimation for instantaneous radiological releases.

Simulates 2-D puff transport and NaI detector counts, trains deterministic,
classification, and variational Bayesian networks that invert measurements
to release location and mass, runs a delayed-rejection adaptive-Metropolis
baseline against the same forward model, and compares the resulting
posterior densities.
"""

from .bnn import (
    PosteriorSampleSet,
    VariationalMlpModel,
    combined_density,
    elbo_loss,
    epistemic_density,
    evaluate_bnn,
    init_bnn,
    kl_to_prior,
    load_bnn,
    predict_stochastic,
    sample_weights,
    save_bnn,
    train_bnn,
)
from .datagen import (
    Dataset,
    Normalizer,
    default_layout,
    fit_normalizer,
    generate_dataset,
    load_dataset,
    make_features,
    sample_scenario,
    save_dataset,
    split_dataset,
)
from .density import (
    DensityEstimate,
    compare,
    credible_interval,
    ensemble_kde,
    gaussian_kde,
    histogram,
)
from .dram import (
    Chain,
    DramConfig,
    InferenceProblem,
    burn_and_summarize,
    dram_run,
    forward_model,
    grid_search_init,
    log_posterior,
    read_chain,
    sum_squares,
    write_chain,
)
from .errors import (
    ConfigError,
    DegenerateSampleError,
    DomainError,
    PlumelocError,
    ShapeError,
    SingularityError,
    TrainingError,
)
from .nn import (
    BinGrid,
    MlpModel,
    TrainConfig,
    backward,
    binned_expectation,
    cce_loss,
    decode_location,
    default_bin_grid,
    evaluate,
    forward,
    init_classification_model,
    init_regression_model,
    load_model,
    mae_loss,
    nadam_step,
    predict,
    save_model,
    softmax,
    swish,
    train,
)
from .sensing import (
    DetectorSpec,
    MeasurementVector,
    PhysicsConstants,
    expected_counts,
    observe_array,
    read_measurements,
    sample_counts,
    write_measurements,
)
from .transport import (
    ConcentrationField,
    Grid,
    GridConfig,
    Scenario,
    build_grid,
    cell_concentrations,
    concentration_at,
    plume_center,
)

__version__ = "0.1.0"
