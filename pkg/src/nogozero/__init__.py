"""NoGo engine with dual-tree policy-value MCTS and an AlphaZero-style
training pipeline."""

__version__ = "0.1.0"

from .game import Position, BLACK, WHITE, EMPTY  # noqa: F401
from .evaluators import NetShape, NormalizedCost, PVOutput, cost_of  # noqa: F401
from .mpv import BudgetSpec, DualSearch, ShareWeights, budget_split  # noqa: F401
from .search import SearchTree  # noqa: F401
