"""Multi-scenario CTR prediction with hierarchical scenario-conditioned
dynamic layers, plus the Shared Bottom baseline, training, evaluation and
benchmarking tooling."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Batch,
    Dataset,
    FeatureSchema,
    Sample,
    SyntheticSpec,
    Vocabulary,
    generate_synthetic,
    make_batches,
    parse_csv,
)
from .dynamic import (
    DynamicLayerSet,
    DynamicShape,
    ScenarioCondition,
    dynamic_forward,
    flatten_layers,
    reshape_condition,
)
from .errors import (
    CheckpointError,
    ConfigError,
    GenerationError,
    HierRecError,
    MetricError,
    NumericError,
    ParseError,
    SchemaError,
    ShapeError,
    StateError,
)
from .metrics import EvalReport, ScenarioMetrics, auc, evaluate, logloss, relaimpr
from .model import ForwardTrace, HierRecConfig, HierRecModel, export_attention_weights
from .nn import (
    FcStackConfig,
    ParameterStore,
    adam_step,
    bce_loss,
    fc_stack_forward,
    grad_check,
    sigmoid,
    softmax_rows,
)
from .runconfig import RunConfig
from .shared_bottom import SharedBottomConfig, SharedBottomModel
from .training import TrainResult, train_model

__version__ = "0.1.0"
