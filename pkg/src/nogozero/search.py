"""Single-evaluator policy-value MCTS.

Each simulation walks from the root picking the edge maximizing

    Q(s,a) + c_puct * P(s,a) * sqrt(N(s)) / (1 + N(s,a))

until it reaches an edge whose child has not been evaluated (or a
terminal state), evaluates it, and backs the value up the path with a
perspective flip per ply.  Ties break to the lowest move index and
unvisited edges count as Q = 0, so searches are deterministic given the
evaluator.

Budgets are counted in evaluator forward passes: simulations that end
on a terminal state back up the exact game value without consuming
budget.  Nodes carry their own visit total ``n_total`` (1 for the
node's own evaluation plus one per simulation passing through), so
``n_total == 1 + sum(edge_n)`` at every non-terminal node.

A tree is a pure tree by path: transpositions are not merged, but a
key -> first-created-node index is maintained for cross-tree state
lookups by the dual-tree search.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .evaluators import Evaluator, PVOutput
from .game import Position


class Node:
    __slots__ = (
        "position", "key", "terminal_value", "moves", "priors",
        "edge_n", "edge_w", "children", "child_keys",
        "n_total", "w_total", "parent", "parent_edge",
        "exhausted", "_unexhausted",
    )

    def __init__(self, position: Position, parent: "Node | None", parent_edge: int | None):
        self.position = position
        self.key = position.key
        self.parent = parent
        self.parent_edge = parent_edge
        self.n_total = 0
        self.w_total = 0.0
        winner = position.is_terminal()
        if winner is not None:
            # The player to move has no legal move and loses.
            self.terminal_value = -1.0
            self.moves = ()
            self.priors = None
            self.edge_n = self.edge_w = None
            self.children = []
            self.child_keys = []
            self.exhausted = True
            self._unexhausted = 0
        else:
            self.terminal_value = None
            self.moves = tuple(position.legal_moves())
            self.priors = None  # set at evaluation
            self.edge_n = np.zeros(len(self.moves), dtype=np.int64)
            self.edge_w = np.zeros(len(self.moves), dtype=np.float64)
            self.children = [None] * len(self.moves)
            self.child_keys = [position.key_after(m) for m in self.moves]
            self.exhausted = False
            self._unexhausted = len(self.moves)

    @property
    def mean_value(self) -> float:
        """Mean backed-up value at this node, from its to_play perspective."""
        if self.n_total == 0:
            raise ValueError("node has no visits")
        return self.w_total / self.n_total

    def set_evaluation(self, out: PVOutput) -> None:
        if self.priors is not None:
            raise ValueError("node already evaluated")
        assert len(out.moves) == len(self.moves)
        self.priors = np.asarray(out.probs, dtype=np.float64)


class SimResult(NamedTuple):
    kind: str          # "evaluated" or "terminal"
    node: Node
    value: float       # from the leaf's to_play perspective
    consumed: bool     # True iff an evaluator forward pass was spent


class SearchExhausted(RuntimeError):
    """The reachable game tree is fully evaluated; no forward pass can
    be consumed."""


class SearchTree:
    """One evaluator, one tree.  Single-threaded per instance."""

    def __init__(self, root_position: Position, evaluator: Evaluator,
                 c_puct: float = 1.5):
        if root_position.is_terminal() is not None:
            raise ValueError("cannot search a terminal position")
        self.root_position = root_position
        self.evaluator = evaluator
        self.c_puct = c_puct
        self.root: Node | None = None
        self.nodes_by_key: dict[int, Node] = {}
        self.fwd_passes = 0
        self.simulations = 0
        self.root_noise: tuple[float, np.ndarray] | None = None
        # Optional hooks used by the dual-tree search: selection scoring
        # and a per-node visit notification during backup.
        self.score_override: Callable[["SearchTree", Node], np.ndarray] | None = None
        self.visit_hook: Callable[[Node], None] | None = None

    # ------------------------------------------------------------------
    # Node bookkeeping
    # ------------------------------------------------------------------

    def _register(self, node: Node) -> None:
        self.nodes_by_key.setdefault(node.key, node)

    def _attach(self, parent: Node | None, edge: int | None, position: Position) -> Node:
        node = Node(position, parent, edge)
        if parent is not None:
            if parent.children[edge] is not None:
                raise ValueError("edge already has a child")
            parent.children[edge] = node
        self._register(node)
        if node.exhausted and parent is not None:
            self._mark_child_exhausted(parent)
        return node

    def _mark_child_exhausted(self, node: Node) -> None:
        while node is not None:
            node._unexhausted -= 1
            if node._unexhausted > 0 or node.exhausted:
                return
            node.exhausted = True
            node = node.parent

    def _evaluate_node(self, node: Node) -> float:
        out = self.evaluator.evaluate(node.position)
        node.set_evaluation(out)
        self.fwd_passes += 1
        return out.value

    def _backup(self, node: Node, value: float) -> None:
        hook = self.visit_hook
        v = value
        cur = node
        cur.n_total += 1
        cur.w_total += v
        if hook is not None:
            hook(cur)
        while cur.parent is not None:
            v = -v
            parent = cur.parent
            parent.edge_n[cur.parent_edge] += 1
            parent.edge_w[cur.parent_edge] += v
            parent.n_total += 1
            parent.w_total += v
            cur = parent
            if hook is not None:
                hook(cur)

    # ------------------------------------------------------------------
    # Selection
    # ------------------------------------------------------------------

    def own_q(self, node: Node) -> np.ndarray:
        """Per-edge mean values from this tree alone (0 for unvisited edges)."""
        return node.edge_w / np.maximum(node.edge_n, 1)

    def apply_root_noise(self, node: Node, priors: np.ndarray) -> np.ndarray:
        if node is self.root and self.root_noise is not None:
            weight, vec = self.root_noise
            priors = (1.0 - weight) * priors + weight * vec
        return priors

    def compose_scores(self, node: Node, q: np.ndarray, priors: np.ndarray) -> np.ndarray:
        return q + (self.c_puct * math.sqrt(node.n_total)) * (priors / (1.0 + node.edge_n))

    def base_scores(self, node: Node) -> np.ndarray:
        """PUCT scores from this tree's own statistics."""
        return self.compose_scores(node, self.own_q(node),
                                   self.apply_root_noise(node, node.priors))

    def _scores(self, node: Node) -> np.ndarray:
        if self.score_override is not None:
            return self.score_override(self, node)
        return self.base_scores(node)

    def ensure_root(self) -> SimResult | None:
        """Evaluate the root if needed; the root evaluation is itself the
        first simulation and consumes one forward pass."""
        if self.root is None:
            self.root = self._attach(None, None, self.root_position)
            value = self._evaluate_node(self.root)
            self._backup(self.root, value)
            self.simulations += 1
            return SimResult("evaluated", self.root, value, True)
        return None

    def select_leaf(self, masked: bool = False) -> list[tuple[Node, int]]:
        """Walk from the (evaluated) root to an unevaluated child edge or a
        terminal node; returns the [(node, action-index)] path.  The final
        entry's action index is -1 when the walk stopped on an existing
        terminal node itself.

        With `masked=True`, edges whose subtree is fully evaluated are
        excluded, so the walk is guaranteed to reach a state the evaluator
        has not seen (used to force budget progress)."""
        if self.root is None or self.root.priors is None:
            raise ValueError("root not evaluated")
        path: list[tuple[Node, int]] = []
        node = self.root
        while True:
            if node.terminal_value is not None:
                path.append((node, -1))
                return path
            scores = self._scores(node)
            if masked:
                open_edges = np.array([c is None or not c.exhausted
                                       for c in node.children])
                scores = np.where(open_edges, scores, -np.inf)
            i = int(np.argmax(scores))
            path.append((node, i))
            child = node.children[i]
            if child is None or (child.priors is None and child.terminal_value is None):
                return path
            if child.terminal_value is not None:
                path.append((child, -1))
                return path
            node = child

    def simulate(self, masked: bool = False) -> SimResult:
        """One simulation: select, evaluate (or reuse a terminal value),
        back up.  Returns what happened and whether budget was spent."""
        rooted = self.ensure_root()
        if rooted is not None:
            return rooted
        path = self.select_leaf(masked)
        node, action = path[-1]
        self.simulations += 1
        if action == -1:  # walk ended on an existing terminal node
            self._backup(node, node.terminal_value)
            return SimResult("terminal", node, node.terminal_value, False)
        child = node.children[action]
        if child is None:
            child = self._attach(node, action, node.position.play(node.moves[action]))
        if child.terminal_value is not None:
            self._backup(child, child.terminal_value)
            return SimResult("terminal", child, child.terminal_value, False)
        value = self._evaluate_node(child)
        self._backup(child, value)
        return SimResult("evaluated", child, value, True)

    # ------------------------------------------------------------------
    # Public driving API
    # ------------------------------------------------------------------

    def consume_one_pass(self) -> list[SimResult]:
        """Simulate until exactly one forward pass is spent.

        The first simulation is unconstrained; if it ends on a terminal
        state (free: exact value, no evaluator call), retries mask
        fully-evaluated subtrees so each retry either spends the pass or
        creates a new terminal node, which bounds the loop.  Raises
        SearchExhausted when no unevaluated state is reachable."""
        results = []
        while True:
            if self.root is not None and self.root.exhausted:
                raise SearchExhausted("game tree fully evaluated")
            results.append(self.simulate(masked=bool(results)))
            if results[-1].consumed:
                return results

    def run(self, budget: int) -> int:
        """Consume exactly `budget` evaluator forward passes (terminal hits
        back up exact values for free and do not count).  Stops early only
        if the whole reachable game tree has been evaluated; returns the
        number of passes consumed."""
        if budget < 1:
            raise ValueError("budget must be >= 1")
        spent = 0
        while spent < budget:
            try:
                self.consume_one_pass()
            except SearchExhausted:
                break
            spent += 1
        return spent

    def run_simulations(self, n: int) -> None:
        """Drive by raw simulation count instead of forward passes
        (terminal hits count; used by fixed-simulation experiments)."""
        for _ in range(n):
            if self.root is not None and self.root.exhausted:
                break
            self.simulate()

    def set_root_noise(self, alpha: float, weight: float, rng) -> None:
        """Mix root priors with Dirichlet(alpha) noise during selection.
        Does not evaluate the root, so budget accounting is unaffected."""
        n_moves = self.root_position.legal_count()
        vec = rng.dirichlet([alpha] * n_moves)
        self.root_noise = (weight, vec)

    def policy(self, tau: float) -> tuple[tuple[int, ...], np.ndarray]:
        return policy_from_counts(self, tau)


def puct_scores(q: np.ndarray, priors: np.ndarray, edge_n: np.ndarray,
                n_total: int, c_puct: float) -> np.ndarray:
    """The bare selection formula, exposed for formula-level tests."""
    return q + c_puct * priors * math.sqrt(n_total) / (1.0 + edge_n)


def counts_to_policy(counts: np.ndarray, tau: float) -> np.ndarray:
    """pi_a proportional to N(s,a)^(1/tau); tau -> 0 gives the one-hot
    argmax with lowest-index tie-break."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise ValueError("no visits to derive a policy from")
    if tau < 1e-3:
        out = np.zeros_like(counts)
        out[int(np.argmax(counts))] = 1.0
        return out
    logc = np.full_like(counts, -np.inf)
    nz = counts > 0
    logc[nz] = np.log(counts[nz]) / tau
    logc -= logc.max()
    w = np.exp(logc)
    return w / w.sum()


def policy_from_counts(tree: SearchTree, tau: float) -> tuple[tuple[int, ...], np.ndarray]:
    """Visit-count move distribution at the root."""
    if tree.root is None or tree.root.priors is None:
        raise ValueError("root not evaluated")
    return tree.root.moves, counts_to_policy(tree.root.edge_n, tau)


def run_search(tree: SearchTree, budget: int) -> int:
    return tree.run(budget)


def select_leaf(tree: SearchTree) -> list[tuple[Node, int]]:
    return tree.select_leaf()


def best_move(tree: SearchTree) -> int:
    """Most-visited root move (lowest index on ties)."""
    moves, probs = policy_from_counts(tree, 0.0)
    return moves[int(np.argmax(probs))]
