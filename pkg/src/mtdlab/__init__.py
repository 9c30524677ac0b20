"""Desk-scale lab for learning which moving-target-defense technique
mitigates which attack: a simulated device emits behavioral fingerprints, an
autoencoder anomaly detector turns afterstates into rewards, and a deep
Q-learning agent learns the attack-to-MTD policy online."""

__version__ = "0.1.0"

from .agent import ActionId, AgentConfig, DqnAgent, ReplayMemory, Transition
from .detector import AutoencoderModel, DetectorConfig, Verdict, calibrate_threshold, classify, reward_of, train_autoencoder
from .env import DatasetEnv, SimWorld, default_world
from .fingerprint import FeatureSchema, NormStats, default_schema
from .orchestrator import EpisodeRecord, RunMetrics, evaluate_detector, evaluate_policy, run_episode, train

__all__ = [
    "ActionId",
    "AgentConfig",
    "AutoencoderModel",
    "DatasetEnv",
    "DetectorConfig",
    "DqnAgent",
    "EpisodeRecord",
    "FeatureSchema",
    "NormStats",
    "ReplayMemory",
    "RunMetrics",
    "SimWorld",
    "Transition",
    "Verdict",
    "calibrate_threshold",
    "classify",
    "default_schema",
    "default_world",
    "evaluate_detector",
    "evaluate_policy",
    "reward_of",
    "run_episode",
    "train",
    "train_autoencoder",
]
