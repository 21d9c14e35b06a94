"""Program reidentification: verify that a running process is the program it claims to be.

Pipeline: system events -> behavior graph -> meta-path channels -> node
features -> per-channel graph encoders -> channel attention -> logistic
verifier, plus a synthetic workload generator and an evaluation harness.
"""

from .channels import MetaPath, MultiChannelGraph, transform_multichannel
from .dataset import build_example, reid_dataset
from .encoder import EncoderConfig
from .errors import ReidError
from .evaluation import EvalReport, ablation_run, auc, confusion_metrics, evaluate, kfold_split
from .events import Entity, Relation, SystemEvent, read_event_stream
from .features import FeatureConfig, assemble_features
from .graph import BehaviorGraph, build_behavior_graph
from .model import ModelConfig, TrainConfig, TrainedModel, load_model, predict, save_model, train

__version__ = "0.1.0"
