"""Strength evaluation: budget-equalized matches, Elo, internal baselines
and budget-allocation sweeps.

Agents are declarative `AgentSpec`s (search kind, evaluator construction
recipe, budget) so matches can be replayed bit-for-bit from (specs,
game count, seed) and games can be farmed out to worker processes.  The
match protocol alternates colors every game, runs a fresh search from
scratch for every move, samples the game's first move at temperature 1
for opening variety, and afterwards plays the most-visited move with a
seeded random tie-break.

Ratings are relative: `elo_from_winrate` maps a win rate to Elo via
400 * log10(p / (1 - p)), anchored at whatever opponent is used as the
zero point (by default the rollout-backed UCT baseline that stands in
for an external reference program).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import nn
from .evaluators import (DEFAULT_REFERENCE, Evaluator, MobilityEvaluator, NetShape,
                         NoisyEvaluator, NormalizedCost, RolloutEvaluator,
                         UniformEvaluator)
from .game import BLACK, WHITE, Position
from .mpv import BudgetSpec, DualSearch, ShareWeights
from .search import SearchTree, counts_to_policy


# ----------------------------------------------------------------------
# Declarative evaluator / agent construction
# ----------------------------------------------------------------------

@dataclass(eq=False)
class EvaluatorSpec:
    """Picklable recipe for building an evaluator inside a worker.

    kinds: "uniform", "mobility", "rollout" (uses `playouts`),
    "noisy" (mobility base plus value noise `sigma`), "net" (from
    `model` = (NetworkConfig, params) or `model_path`).  `cost` declares
    the normalized forward-pass cost of the non-net kinds.
    """

    kind: str = "uniform"
    playouts: int = 1
    sigma: float = 0.0
    scale: float = 0.1
    cost: Fraction = Fraction(1)
    model: tuple | None = None
    model_path: str | None = None
    reference: NetShape = DEFAULT_REFERENCE

    def build(self, seed: int) -> Evaluator:
        cost = NormalizedCost(Fraction(self.cost))
        if self.kind == "uniform":
            return UniformEvaluator(cost)
        if self.kind == "mobility":
            return MobilityEvaluator(self.scale, cost)
        if self.kind == "rollout":
            return RolloutEvaluator(self.playouts, seed, cost)
        if self.kind == "noisy":
            return NoisyEvaluator(MobilityEvaluator(self.scale), self.sigma, seed, cost)
        if self.kind == "net":
            if self.model is not None:
                cfg, params = self.model
            elif self.model_path is not None:
                cfg, params = nn.load_params(self.model_path)
            else:
                raise ValueError("net evaluator needs model or model_path")
            return nn.NetEvaluator(cfg, params, self.reference)
        raise ValueError(f"unknown evaluator kind {self.kind!r}")


@dataclass(eq=False)
class AgentSpec:
    """A playable search configuration: PV (single tree) or MPV (dual)."""

    name: str
    kind: str = "pv"                       # "pv" or "mpv"
    evaluator: EvaluatorSpec | None = None
    small: EvaluatorSpec | None = None
    large: EvaluatorSpec | None = None
    sims: int = 0
    budgets: BudgetSpec | None = None
    weights: ShareWeights = field(default_factory=ShareWeights)
    c_puct: float = 1.5

    def __post_init__(self):
        if self.kind == "pv":
            if self.evaluator is None or self.sims < 1:
                raise ValueError(f"pv agent {self.name!r} needs an evaluator and sims >= 1")
        elif self.kind == "mpv":
            if self.small is None or self.large is None or self.budgets is None:
                raise ValueError(f"mpv agent {self.name!r} needs small/large evaluators and budgets")
        else:
            raise ValueError(f"unknown agent kind {self.kind!r}")


class Agent:
    """Runtime agent bound to per-game evaluator seeds."""

    def __init__(self, spec: AgentSpec, seed: int):
        self.spec = spec
        if spec.kind == "pv":
            self.evaluators = (spec.evaluator.build(seed),)
        else:
            self.evaluators = (spec.small.build(seed), spec.large.build(seed * 2 + 1))

    @property
    def forward_passes(self) -> tuple[int, ...]:
        return tuple(e.calls for e in self.evaluators)

    def root_counts(self, position: Position, sched_seed):
        spec = self.spec
        if spec.kind == "pv":
            tree = SearchTree(position, self.evaluators[0], spec.c_puct)
            tree.run(spec.sims)
            root = tree.root
        else:
            dual = DualSearch(position, self.evaluators[0], self.evaluators[1],
                              weights=spec.weights, c_puct=spec.c_puct)
            dual.run(spec.budgets, sched_seed)
            root = dual.tree_s.root
        if root is None or int(root.edge_n.sum()) == 0:
            # Degenerate budgets (e.g. one simulation) leave no visit
            # counts; any legal move is as good as the search knows.
            moves = tuple(position.legal_moves())
            return moves, np.ones(len(moves), dtype=np.int64)
        return root.moves, root.edge_n

    def select_move(self, position: Position, move_index: int, rng, sched_seed) -> int:
        moves, counts = self.root_counts(position, sched_seed)
        if move_index == 0:
            probs = counts_to_policy(counts, 1.0)
            return int(rng.choice(moves, p=probs))
        best = counts.max()
        ties = np.flatnonzero(counts == best)
        return int(moves[int(rng.choice(ties))])


# ----------------------------------------------------------------------
# Elo and match results
# ----------------------------------------------------------------------

def elo_from_winrate(p: float) -> float:
    """Relative Elo of a player winning fraction `p` of games:
    400 * log10(p / (1 - p)), written as a log difference so that
    elo(1 - p) == -elo(p) holds exactly."""
    if not 0.0 < p < 1.0:
        raise ValueError("win rate must be strictly between 0 and 1")
    return 400.0 * (math.log10(p) - math.log10(1.0 - p))


def _bounded_elo(wins: int, games: int) -> float:
    # An unbeaten score has no finite Elo; report the half-game bound,
    # negated symmetrically for a whitewash.
    if wins == 0 or wins == games:
        bound = elo_from_winrate(1.0 - 0.5 / games)
        return bound if wins else -bound
    return elo_from_winrate(wins / games)


@dataclass
class MatchResult:
    games: int
    wins_a: int
    wins_b: int
    wins_a_black: int
    wins_a_white: int

    def __post_init__(self):
        assert self.wins_a + self.wins_b == self.games

    @property
    def p(self) -> float:
        return self.wins_a / self.games

    @property
    def elo(self) -> float:
        return _bounded_elo(self.wins_a, self.games)

    @property
    def stderr(self) -> float:
        q = min(max(self.p, 0.5 / self.games), 1.0 - 0.5 / self.games)
        return math.sqrt(q * (1.0 - q) / self.games)


def play_single_game(spec_black: AgentSpec, spec_white: AgentSpec,
                     board_size: int, seed) -> tuple[int, list[int]]:
    """One deterministic game; returns (winner color, move list)."""
    entropy = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    ss_rng, ss_black, ss_white = np.random.SeedSequence(entropy).spawn(3)
    rng = np.random.default_rng(ss_rng)
    agents = {
        BLACK: Agent(spec_black, int(ss_black.generate_state(1)[0])),
        WHITE: Agent(spec_white, int(ss_white.generate_state(1)[0])),
    }
    pos = Position(board_size)
    moves: list[int] = []
    while (winner := pos.is_terminal()) is None:
        agent = agents[pos.to_play]
        sched_seed = np.random.SeedSequence([*entropy, len(moves)])
        move = agent.select_move(pos, len(moves), rng, sched_seed)
        moves.append(move)
        pos = pos.play(move)
    return winner, moves


def _match_game_task(args):
    g, spec_a, spec_b, board_size, seed_entropy = args
    a_is_black = g % 2 == 0
    spec_black = spec_a if a_is_black else spec_b
    spec_white = spec_b if a_is_black else spec_a
    winner, moves = play_single_game(spec_black, spec_white, board_size,
                                     [*seed_entropy, g])
    a_won = (winner == BLACK) == a_is_black
    return g, a_won, a_is_black, moves


def play_match(a: AgentSpec, b: AgentSpec, n_games: int, board_size: int,
               seed=0, workers: int = 0, collect_moves: bool = False):
    """Alternating-color match; deterministic given (specs, n, seed).

    Returns MatchResult, or (MatchResult, transcripts) with collect_moves.
    """
    if n_games < 2 or n_games % 2:
        raise ValueError("n_games must be even and >= 2")
    seed_entropy = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    tasks = [(g, a, b, board_size, seed_entropy) for g in range(n_games)]
    outcomes = {}
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for g, a_won, a_is_black, moves in pool.map(_match_game_task, tasks, chunksize=1):
                outcomes[g] = (a_won, a_is_black, moves)
    else:
        for task in tasks:
            g, a_won, a_is_black, moves = _match_game_task(task)
            outcomes[g] = (a_won, a_is_black, moves)
    wins_a = wins_a_black = wins_a_white = 0
    transcripts = []
    for g in range(n_games):
        a_won, a_is_black, moves = outcomes[g]
        transcripts.append(moves)
        if a_won:
            wins_a += 1
            if a_is_black:
                wins_a_black += 1
            else:
                wins_a_white += 1
    result = MatchResult(n_games, wins_a, n_games - wins_a, wins_a_black, wins_a_white)
    return (result, transcripts) if collect_moves else result


# ----------------------------------------------------------------------
# Baselines and experiment drivers
# ----------------------------------------------------------------------

def uct_rollout_baseline(simulations: int, c_puct: float = 1.5) -> AgentSpec:
    """Classic UCT stand-in: PUCT with uniform priors over single random
    rollouts.  Serves as the fixed 0-Elo reference."""
    if simulations < 1:
        raise ValueError("simulations must be >= 1")
    return AgentSpec(name=f"uct-{simulations}", kind="pv",
                     evaluator=EvaluatorSpec("rollout", playouts=1),
                     sims=simulations, c_puct=c_puct)


def single_net_agent(name: str, evaluator: EvaluatorSpec, sims: int,
                     c_puct: float = 1.5) -> AgentSpec:
    return AgentSpec(name=name, kind="pv", evaluator=evaluator, sims=sims, c_puct=c_puct)


def dual_net_agent(name: str, small: EvaluatorSpec, large: EvaluatorSpec,
                   budgets: BudgetSpec, weights: ShareWeights = ShareWeights(),
                   c_puct: float = 1.5) -> AgentSpec:
    return AgentSpec(name=name, kind="mpv", small=small, large=large,
                     budgets=budgets, weights=weights, c_puct=c_puct)


def sims_for_budget(budget_units: Fraction, cost: Fraction) -> int:
    return math.floor(Fraction(budget_units) / Fraction(cost))


def budget_sweep(budgets: list[int], ratios, small: EvaluatorSpec,
                 large: EvaluatorSpec, opponent: AgentSpec, n_games: int,
                 board_size: int, seed: int = 0, workers: int = 0,
                 weights: ShareWeights = ShareWeights(), c_puct: float = 1.5):
    """Measure Elo versus a fixed opponent over a (budget, ratio) grid.

    Ratio 0 and 1 rows are the single-evaluator controls.  Returns one
    row dict per grid point."""
    rows = []
    for bi, budget in enumerate(budgets):
        for ri, ratio in enumerate(ratios):
            r = Fraction(ratio)
            agent = _sweep_agent(budget, r, small, large, weights, c_puct)
            result = play_match(agent, opponent, n_games, board_size,
                                seed=[seed, bi, ri], workers=workers)
            rows.append({
                "budget": budget, "r": str(r), "agent": agent.name,
                "games": result.games, "wins": result.wins_a,
                "p": result.p, "elo": result.elo, "stderr": result.stderr,
            })
    return rows


def _sweep_agent(budget: int, r: Fraction, small: EvaluatorSpec,
                 large: EvaluatorSpec, weights: ShareWeights,
                 c_puct: float) -> AgentSpec:
    if r == 0:
        return single_net_agent(f"small-B{budget}", small,
                                sims_for_budget(budget, evaluator_cost(small)), c_puct)
    if r == 1:
        return single_net_agent(f"large-B{budget}", large,
                                sims_for_budget(budget, evaluator_cost(large)), c_puct)
    b_l = sims_for_budget(r * budget, evaluator_cost(large))
    b_s = sims_for_budget((1 - r) * budget, evaluator_cost(small))
    return dual_net_agent(f"mpv-B{budget}-r{r}", small, large,
                          BudgetSpec(b_s, b_l), weights, c_puct)


def evaluator_cost(spec: EvaluatorSpec) -> Fraction:
    """Normalized per-pass cost of an evaluator spec."""
    if spec.kind == "net":
        if spec.model is not None:
            cfg = spec.model[0]
        else:
            cfg, _ = nn.load_params(spec.model_path)
        from .evaluators import cost_of
        return cost_of(NetShape(cfg.filters, cfg.blocks), spec.reference).units
    return Fraction(spec.cost)


def large_only_agent(ckpt_dir, sims: int, reference: NetShape = DEFAULT_REFERENCE,
                     c_puct: float = 1.5) -> AgentSpec:
    """PV agent using only the large net of a checkpoint (the small net,
    if any, is never loaded or evaluated)."""
    path = Path(ckpt_dir) / "fL.mpvn"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {ckpt_dir} has no fL.mpvn")
    cfg, params = nn.load_params(path)
    return single_net_agent(f"large-only-{Path(ckpt_dir).name}",
                            EvaluatorSpec("net", model=(cfg, params), reference=reference),
                            sims, c_puct)


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------

def match_machine_line(pairing: str, result: MatchResult) -> str:
    return (f"{pairing};{result.games};{result.wins_a};"
            f"{result.p:.4f};{result.elo:.1f};{result.stderr:.4f}")


def format_match_report(rows: list[tuple[str, MatchResult]]) -> str:
    """Human-readable table: one row per pairing."""
    header = f"{'pairing':<40} {'games':>6} {'wins':>6} {'p':>7} {'elo':>8} {'stderr':>7}"
    lines = [header, "-" * len(header)]
    for pairing, r in rows:
        lines.append(f"{pairing:<40} {r.games:>6} {r.wins_a:>6} "
                     f"{r.p:>7.4f} {r.elo:>8.1f} {r.stderr:>7.4f}")
    return "\n".join(lines)


def sweep_machine_lines(rows: list[dict]) -> list[str]:
    return [f"{row['agent']};{row['games']};{row['wins']};"
            f"{row['p']:.4f};{row['elo']:.1f};{row['stderr']:.4f}"
            for row in rows]
