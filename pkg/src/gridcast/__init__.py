"""gridcast: grid-based probabilistic trajectory forecasting for VRUs.

Trains discrete occupancy-grid forecasters (trajectory / pose / semantic
map variants) and a continuous bivariate-Gaussian baseline, and evaluates
forecasts for reliability, sharpness, positional accuracy, and obstacle
consistency.
"""

from .calibration import (
    TemperatureSchedule,
    apply_temperature,
    fit_temperature,
    sweep_sigma,
)
from .data import (
    Dataset,
    Manifest,
    augment_rotations,
    load_dataset,
    save_dataset,
    split_by_location,
    standard_manifest,
)
from .errors import (
    AllMassMaskedError,
    GridcastError,
    LayoutError,
    OutOfGridError,
    SchemaError,
    TruthOnObstacleError,
)
from .features import (
    FeatureVector,
    Normalizer,
    VruSample,
    apply_normalizer,
    ego_transform,
    fit_normalizer,
    pose_features,
    trajectory_features,
)
from .grid import (
    CellIndex,
    Grid,
    GridDistribution,
    cell_to_position,
    make_grid,
    position_to_cell,
    save_distribution_csv,
    save_distribution_pgm,
    validate_distribution,
)
from .metrics import (
    MetricsReport,
    ReliabilityCurve,
    aswaee,
    confidence_area,
    confidence_level,
    ece,
    evaluate_continuous,
    evaluate_discrete,
    gaussian_confidence_area,
    gaussian_confidence_level,
    gaussian_waee,
    observed_frequency,
    occupancy,
    reliability_curve,
    sharpness,
    waee,
)
from .models import (
    ContinuousModel,
    ContinuousModelConfig,
    DiscreteModel,
    DiscreteModelConfig,
    ForecastSet,
    GaussianForecastSet,
    TrainReport,
    bivariate_nll,
    build_continuous,
    build_discrete,
    forward_continuous,
    forward_discrete,
    load_model,
    save_model,
    table1_config,
    train_continuous,
    train_discrete,
)
from .scene import (
    CATEGORY_NAMES,
    Category,
    ObstacleMask,
    SemanticMap,
    encode_one_hot,
    obstacle_mask,
    rotate_map,
)
from .synth import PoseSettings, SynthConfig, synthesize
from .targets import (
    DEFAULT_SIGMA_CELLS,
    SmoothingSchedule,
    gaussian_target,
    masked_gaussian_target,
    one_hot_target,
)

__version__ = "0.1.0"
