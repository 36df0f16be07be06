"""Stable dynamical systems whose nonlinearity lives in the curvature of a learned graph embedding."""
from .arm import ArmModel, generate_arm_dataset, simulate_arm
from .data import SampleSet, TrajectoryData, TrajectoryDataset, load_dataset, save_dataset
from .dynamics import (DissipationExtras, FirstOrderDS, HybridDS, HybridParams, PotentialSpec,
                       SecondOrderDS, Trajectory, first_order_field, hybrid_field, hybrid_switch,
                       rollout, second_order_field)
from .embeddings import (BumpConfig, CompositeEmbedding, GateParams, MlpEmbedding, RbfDeformation,
                         bump_alpha, rbf_metric, rbf_metric_differential, sigma_from_radius,
                         velocity_gate)
from .errors import (CurvdsError, DatasetParseError, DegenerateParameterError, DivergenceError,
                     DomainError, PreconditionError, SimulationError, TrainingError)
from .geometry import (IDENTITY, AmbientMetric, ChartState, KernelAmbientMetric, MetricBundle,
                       christoffel_contraction, jacobian, metric_diagnostics, pullback_metric)
from .learning import (AdamState, TrainConfig, TrainResult, adam_step, loss_and_gradients,
                       loss_first, loss_gradients, loss_second, train_first, train_incremental,
                       train_second)
from .metrics import EvaluationReport, cosine_similarity, dtwd, evaluate, rmse
from .model import DSModel
from .spd import SpdParam, spd_materialize

__version__ = "0.1.0"
