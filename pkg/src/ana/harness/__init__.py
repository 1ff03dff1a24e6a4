from .config import ConfigError, ExperimentConfig, dump_config, load_config, mnist_recipe, parse_config
from .data import DataFormatError, Dataset, load_cifar_binary, load_idx, load_mnist, read_idx, synth_lipschitz
from .experiment import ExperimentResult, build_network, run_experiment
from .oracles import Report, oracle_check

__all__ = [
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "ExperimentConfig",
    "ExperimentResult",
    "Report",
    "build_network",
    "dump_config",
    "load_cifar_binary",
    "load_config",
    "load_idx",
    "load_mnist",
    "mnist_recipe",
    "oracle_check",
    "parse_config",
    "read_idx",
    "run_experiment",
    "synth_lipschitz",
]
