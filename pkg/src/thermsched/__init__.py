"""Deterministic thermal-aware scheduling simulator and learning pipeline.

Layers, bottom up: platform (power + RC thermal + DVFS/DTM), workload
(parametric apps, scenarios), engine (placement, migration, QoS accounting),
features/oracle (trace grids, exhaustive VF selection, soft labels), mlp
(from-scratch network), policies (imitation, Q-learning, governor baselines),
harness + cli (experiments and reports).
"""

__version__ = "0.1.0"

from .platform import (BIG, LITTLE, N_CORES, Platform, PlatformConfig,
                       load_platform_config)
from .workload import (AppInstance, AppLibrary, AppModel, ScenarioSpec,
                       generate_scenario, load_app_library)
from .engine import Engine, EngineConfig
from .features import FEATURE_NAMES, N_FEATURES, compute_normalizers
from .mlp import MlpModel, ModelSpec, TrainConfig, infer_batch, train
from .policies import POLICY_NAMES, make_policy

__all__ = [
    "BIG", "LITTLE", "N_CORES", "Platform", "PlatformConfig",
    "load_platform_config", "AppInstance", "AppLibrary", "AppModel",
    "ScenarioSpec", "generate_scenario", "load_app_library", "Engine",
    "EngineConfig", "FEATURE_NAMES", "N_FEATURES", "compute_normalizers",
    "MlpModel", "ModelSpec", "TrainConfig", "infer_batch", "train",
    "POLICY_NAMES", "make_policy", "__version__",
]
