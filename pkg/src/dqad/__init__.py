"""Deep-Q anomaly detection over patch feature maps."""

from .environment import (
    ACTION_ANOMALOUS,
    ACTION_NORMAL,
    BoundaryBank,
    EnvConfig,
    FeaturePools,
    TrainingData,
    reward,
)
from .features import (
    AggregatedFeatureMap,
    Dataset,
    DatasetManifest,
    LabeledFeature,
    LayerFeatureMap,
    SynthSpec,
    read_dataset,
    synth_generate,
    write_dataset,
)
from .metrics import MetricsReport, anomaly_score, auprc, auroc, evaluate, max_dice, score_map
from .qnet import QNetwork, RMSProp, load_checkpoint, save_checkpoint
from .replay import ReplayBuffer, Transition
from .trainer import RunLog, TrainConfig, epsilon_at, select_action, train

__version__ = "0.1.0"
