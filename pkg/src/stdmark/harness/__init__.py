from .config import ConfigError, desk_config, load_config, validate
from .report import render_tables
from .runner import run_experiment, sweep
