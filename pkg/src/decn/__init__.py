"""Learned population optimizers built from depthwise convolutions."""
from .baselines import DeConfig, de_rand_1_bin, random_search
from .diffcore import KernelError, NumericError, ShapeError, Tape, Tensor, UnknownLeafError
from .estimator import DECN, DifferentialEvolution, RandomSearch
from .evolution import (
    ConfigError,
    DecnModel,
    KernelSet,
    ModelFormatError,
    crm_forward,
    decn_run,
    dump_kernels,
    em_step,
    evolve,
    load_model,
    save_model,
    sm_select,
)
from .functions import (
    FunctionSet,
    ObjectiveBatch,
    ObjectiveInstance,
    arm_instance,
    make_arm_dataset,
    make_dataset,
    sample_shift,
    sample_test_instances,
)
from .population import PopulationGrid, evaluate, init_population
from .records import RunRecord, substream
from .training import ModelConfig, TrainConfig, TrainLog, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DECN", "DeConfig", "DecnModel", "DifferentialEvolution", "FunctionSet",
    "KernelError", "KernelSet", "ModelConfig", "ModelFormatError", "NumericError",
    "ObjectiveBatch", "ObjectiveInstance", "PopulationGrid", "RandomSearch", "RunRecord",
    "ShapeError", "Tape", "Tensor", "TrainConfig", "TrainLog", "UnknownLeafError",
    "arm_instance", "crm_forward", "de_rand_1_bin", "decn_run", "dump_kernels", "em_step",
    "evaluate", "evolve", "init_population", "load_model", "make_arm_dataset", "make_dataset",
    "random_search", "sample_shift", "sample_test_instances", "save_model", "sm_select",
    "substream", "train",
]
