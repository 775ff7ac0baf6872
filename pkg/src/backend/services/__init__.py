"""
Services for the boundary control laboratory

Configuration loading, validation, experiment assembly, the subcommand
runner and parallel work distribution. Only the dependency-free pieces are
imported here: the numerical packages import services.parallel, so the
builder, validator and runner are imported from their own modules.

Services:
- ConfigurationManager: experiment configuration sections (configuration_manager)
- ConfigValidator: schema and geometry checks with line-precise issues (config_validator)
- build_experiment: grids, regions, potentials and measurement maps (experiment_builder)
- ExperimentRunner: subcommand dispatch and artifact writing (experiment_runner)
- InvariantSuite: the acceptance checks behind `check` (invariant_suite)
- parallel_map: ordered thread-pool map (parallel)
"""

from .parallel import parallel_map, set_default_threads, get_default_threads
from .configuration_manager import ConfigurationManager, ExperimentConfig, config_from_dict

__all__ = [
    'parallel_map',
    'set_default_threads',
    'get_default_threads',
    'ConfigurationManager',
    'ExperimentConfig',
    'config_from_dict',
]
