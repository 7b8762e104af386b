from .config import ConfigError, RunConfig, load_config, parse_config
from .report import Report
from .suites import run_bench, run_flops, run_forward, run_gradcheck, run_verify

__all__ = [
    "ConfigError",
    "Report",
    "RunConfig",
    "load_config",
    "parse_config",
    "run_bench",
    "run_flops",
    "run_forward",
    "run_gradcheck",
    "run_verify",
]
