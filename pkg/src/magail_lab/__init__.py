"""Tabular multi-agent adversarial imitation with exact equilibrium and occupancy solvers."""

from .game_core import (DemonstrationSet, GameDynamics, JointPolicy, MarkovGame, ObservationMap,
                        RngConfig, make_game)

__all__ = ["DemonstrationSet", "GameDynamics", "JointPolicy", "MarkovGame", "ObservationMap",
           "RngConfig", "make_game"]
__version__ = "0.1.0"
