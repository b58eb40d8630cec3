"""Numerical laboratory for strong limits of supercritical superprocesses on finite state spaces."""

from .model import (Scenario, builtin, eval_phi, load_scenario, make_scenario, save_scenario,
                    validate_assumptions)

__version__ = "0.1.0"
