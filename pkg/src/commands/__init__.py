from .simulate import command as simulate_command
from .scaling import command as scaling_command
from .fit import command as fit_command

__all__ = [
    "simulate_command",
    "scaling_command",
    "fit_command",
]
