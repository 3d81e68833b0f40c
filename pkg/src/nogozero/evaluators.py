"""Policy-value evaluation interface, reference evaluators and the
normalized forward-pass cost model.

Every evaluator maps a non-terminal position to a `PVOutput` (a policy
over the legal moves plus a scalar value in [-1, 1] from the mover's
perspective) and carries a `NormalizedCost`: how many reference-network
forward passes one evaluation is worth.  A network with `a` times the
filters and `b` times the blocks of another costs a^2 * b times as much
per forward pass; costs are kept as exact rationals.

Evaluators are immutable after construction and safe to share between
searches.  Stochastic evaluators (rollout, noisy) derive a private RNG
from (instance seed, position key), so evaluating a given state is
reproducible regardless of call order.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .game import BLACK, Position, mix_seed, opponent

REFERENCE_SHAPE_FILTERS = 128
REFERENCE_SHAPE_BLOCKS = 10


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class NetShape:
    """f(x, y): a policy-value network with x filters and y residual blocks."""

    filters: int
    blocks: int

    def __post_init__(self):
        if self.filters < 1 or self.blocks < 1:
            raise ValueError(f"invalid shape {self}")

    def __str__(self) -> str:
        return f"f({self.filters},{self.blocks})"


@dataclass(frozen=True)
class NormalizedCost:
    """Cost of one forward pass, in units of the reference shape's pass."""

    units: Fraction

    def __post_init__(self):
        if self.units <= 0:
            raise ValueError("cost must be positive")

    def __float__(self) -> float:
        return float(self.units)


DEFAULT_REFERENCE = NetShape(REFERENCE_SHAPE_FILTERS, REFERENCE_SHAPE_BLOCKS)


def cost_of(shape: NetShape, reference: NetShape = DEFAULT_REFERENCE) -> NormalizedCost:
    """Relative forward-pass cost of `shape` against `reference`:
    (filters ratio)^2 * (blocks ratio), exact rational arithmetic."""
    units = Fraction(shape.filters, reference.filters) ** 2 * Fraction(shape.blocks, reference.blocks)
    return NormalizedCost(units)


@dataclass
class PVOutput:
    """Policy over the legal moves (aligned with `moves`, ascending point
    order) and a value in [-1, 1] from the perspective of the player to move."""

    moves: tuple[int, ...]
    probs: np.ndarray
    value: float

    def validate(self, position: Position | None = None) -> None:
        assert len(self.moves) == len(self.probs) > 0
        assert all(self.probs >= 0)
        assert abs(float(self.probs.sum()) - 1.0) <= 1e-6, "policy must sum to 1"
        assert abs(self.value) <= 1.0 + 1e-9, "value out of range"
        if position is not None:
            legal = position.legal_moves()
            assert list(self.moves) == legal, "policy support must be the legal moves"

    def full_vector(self, board_points: int) -> np.ndarray:
        """Dense policy over all board points (zeros on illegal moves)."""
        out = np.zeros(board_points, dtype=np.float64)
        out[list(self.moves)] = self.probs
        return out


class Evaluator:
    """Base class: subclasses implement `_evaluate`; the public entry
    point enforces the terminal-state contract and counts forward passes."""

    cost: NormalizedCost = NormalizedCost(Fraction(1))

    def __init__(self):
        self.calls = 0

    def evaluate(self, position: Position) -> PVOutput:
        if position.is_terminal() is not None:
            raise EvaluationError("cannot evaluate a terminal position")
        self.calls += 1
        return self._evaluate(position)

    def _evaluate(self, position: Position) -> PVOutput:
        raise NotImplementedError


def _uniform_policy(position: Position) -> tuple[tuple[int, ...], np.ndarray]:
    moves = tuple(position.legal_moves())
    probs = np.full(len(moves), 1.0 / len(moves))
    return moves, probs


class UniformEvaluator(Evaluator):
    """Uniform priors, value 0.  The degenerate baseline evaluator."""

    def __init__(self, cost: NormalizedCost = NormalizedCost(Fraction(1))):
        super().__init__()
        self.cost = cost

    def _evaluate(self, position: Position) -> PVOutput:
        moves, probs = _uniform_policy(position)
        return PVOutput(moves, probs, 0.0)


class MobilityEvaluator(Evaluator):
    """Cheap mobility proxy: uniform policy and
    value = tanh(c * (own legal-move count - opponent legal-move count)).

    NoGo is won by the last player able to move, so relative mobility is
    a meaningful, nearly-free value signal for tests and non-neural
    experiments.
    """

    def __init__(self, scale: float = 0.1, cost: NormalizedCost = NormalizedCost(Fraction(1))):
        super().__init__()
        self.scale = scale
        self.cost = cost

    def _evaluate(self, position: Position) -> PVOutput:
        moves, probs = _uniform_policy(position)
        own = position.legal_count(position.to_play)
        opp = position.legal_count(opponent(position.to_play))
        return PVOutput(moves, probs, math.tanh(self.scale * (own - opp)))


def random_playout(position: Position, rng: random.Random) -> int:
    """Play uniformly random legal moves to termination; returns the winner.
    Pure-Python reference path (the rollout evaluator uses the compiled
    kernel below when numba is available)."""
    pos = position.copy()
    while True:
        mask = pos.legal_mask(pos.to_play)
        count = mask.bit_count()
        if count == 0:
            return opponent(pos.to_play)
        k = rng.randrange(count)
        for _ in range(k):
            mask &= mask - 1
        point = (mask & -mask).bit_length() - 1
        pos._play_inplace(point)


# ----------------------------------------------------------------------
# Compiled playout kernel.  Rollout search budgets reach 10^4 playouts
# per move, which pure Python cannot sustain; the kernel re-derives
# legality with fresh flood fills (no shared state with the incremental
# engine) and is cross-checked against Position.is_legal in the tests.
# ----------------------------------------------------------------------

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep of the rollout path
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap


@lru_cache(maxsize=None)
def _neighbor_arrays(size: int):
    n = size * size
    nbrs = np.full((n, 4), -1, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    for p in range(n):
        r, c = divmod(p, size)
        for q in ((p - size) if r > 0 else -1, (p + size) if r < size - 1 else -1,
                  (p - 1) if c > 0 else -1, (p + 1) if c < size - 1 else -1):
            if q >= 0:
                nbrs[p, count[p]] = q
                count[p] += 1
    return nbrs, count


@_njit(cache=True)
def _flood_has_liberty(board, start, nbrs, nbr_len, stack, visited, gen):
    color = board[start]
    top = 0
    stack[top] = start
    top += 1
    visited[start] = gen
    while top > 0:
        top -= 1
        q = stack[top]
        for k in range(nbr_len[q]):
            t = nbrs[q, k]
            if board[t] == 0:
                return True
            if board[t] == color and visited[t] != gen:
                visited[t] = gen
                stack[top] = t
                top += 1
    return False


@_njit(cache=True)
def _kernel_is_legal(board, p, color, nbrs, nbr_len, stack, visited, gen):
    """Legality by flood fill; returns (legal, next_gen).  `board` is
    restored before returning."""
    if board[p] != 0:
        return False, gen
    board[p] = color
    gen += 1
    ok = _flood_has_liberty(board, p, nbrs, nbr_len, stack, visited, gen)
    if ok:
        for k in range(nbr_len[p]):
            t = nbrs[p, k]
            if board[t] == 3 - color:
                gen += 1
                if not _flood_has_liberty(board, t, nbrs, nbr_len, stack, visited, gen):
                    ok = False
                    break
    board[p] = 0
    return ok, gen


@_njit(cache=True)
def _playout_kernel(board, to_play, nbrs, nbr_len, seed):
    """Uniform random legal playout to termination; returns the winner."""
    np.random.seed(seed)
    n = board.shape[0]
    empties = np.empty(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    visited = np.zeros(n, dtype=np.int64)
    gen = 0
    while True:
        cnt = 0
        for p in range(n):
            if board[p] == 0:
                empties[cnt] = p
                cnt += 1
        move = -1
        for i in range(cnt):
            j = i + np.random.randint(0, cnt - i)
            tmp = empties[i]
            empties[i] = empties[j]
            empties[j] = tmp
            ok, gen = _kernel_is_legal(board, empties[i], to_play, nbrs, nbr_len,
                                       stack, visited, gen)
            if ok:
                move = empties[i]
                break
        if move < 0:
            return 3 - to_play
        board[move] = to_play
        to_play = 3 - to_play


def kernel_is_legal(board: np.ndarray, size: int, point: int, color: int) -> bool:
    """Test hook: the kernel's legality decision for one point."""
    nbrs, nbr_len = _neighbor_arrays(size)
    n = size * size
    ok, _ = _kernel_is_legal(board.astype(np.int8).copy(), point, color, nbrs, nbr_len,
                             np.empty(n, dtype=np.int64), np.zeros(n, dtype=np.int64), 0)
    return bool(ok)


def rollout_evaluate(position: Position, playouts: int, rng_seed: int) -> PVOutput:
    """Uniform policy; value = mean of +-1 outcomes of `playouts` random
    playouts, from to_play's perspective.  Deterministic given the seed."""
    if position.is_terminal() is not None:
        raise EvaluationError("cannot evaluate a terminal position")
    if playouts < 1:
        raise ValueError("playouts must be >= 1")
    mover = position.to_play
    total = 0
    if _HAVE_NUMBA:
        base = position.board_array()
        nbrs, nbr_len = _neighbor_arrays(position.size)
        for i in range(playouts):
            winner = _playout_kernel(base.copy(), mover, nbrs, nbr_len,
                                     mix_seed(rng_seed, i) & 0x7FFFFFFF)
            total += 1 if winner == mover else -1
    else:
        rng = random.Random(rng_seed)
        for _ in range(playouts):
            total += 1 if random_playout(position, rng) == mover else -1
    moves, probs = _uniform_policy(position)
    return PVOutput(moves, probs, total / playouts)


class RolloutEvaluator(Evaluator):
    """Monte Carlo rollout evaluator: per-state RNG derived from
    (seed, position key) so results do not depend on evaluation order."""

    def __init__(self, playouts: int = 1, seed: int = 0,
                 cost: NormalizedCost = NormalizedCost(Fraction(1))):
        super().__init__()
        if playouts < 1:
            raise ValueError("playouts must be >= 1")
        self.playouts = playouts
        self.seed = seed
        self.cost = cost

    def _evaluate(self, position: Position) -> PVOutput:
        return rollout_evaluate(position, self.playouts, mix_seed(self.seed, position.key))


class NoisyEvaluator(Evaluator):
    """Wraps another evaluator, adding seeded Gaussian noise (std `sigma`)
    to the value, re-clamped to [-1, 1].  Emulates a less accurate net of
    a declared cost in budget-equalized experiments."""

    def __init__(self, base: Evaluator, sigma: float, seed: int = 0,
                 cost: NormalizedCost | None = None):
        super().__init__()
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.base = base
        self.sigma = sigma
        self.seed = seed
        self.cost = cost if cost is not None else base.cost

    def _evaluate(self, position: Position) -> PVOutput:
        out = self.base._evaluate(position)
        noise = random.Random(mix_seed(self.seed, position.key)).gauss(0.0, self.sigma)
        value = min(1.0, max(-1.0, out.value + noise))
        return PVOutput(out.moves, out.probs, value)
