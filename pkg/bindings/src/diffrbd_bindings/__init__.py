from .plots import plot_benchmark, plot_loss
from .world import ClosedHandleError, EngineError, WorldHandle, load_world

__all__ = ["ClosedHandleError", "EngineError", "WorldHandle", "load_world",
           "plot_benchmark", "plot_loss"]
