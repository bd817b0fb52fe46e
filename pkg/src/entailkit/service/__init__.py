"""HTTP service wrapping the annotation workbench."""

from .app import create_app, serve
from .state import AppState, BusyError, ServeConfig, state_from_config

__all__ = [
    "AppState",
    "BusyError",
    "ServeConfig",
    "create_app",
    "serve",
    "state_from_config",
]
