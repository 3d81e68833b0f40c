"""Dual-tree MCTS combining a fast and an accurate policy-value evaluator.

Two trees grow over the same root: ``T_S`` driven by the cheap evaluator
with the larger simulation budget ``b_s``, and ``T_L`` driven by the
accurate evaluator with ``b_l <= b_s``.  A seeded schedule assigns each
of the ``b_s + b_l`` forward passes to one of the two nets uniformly at
random.

Small slots run one PUCT simulation on ``T_S``; wherever the other tree
knows a state, the selection rule replaces the per-edge mean value with
the convex mixture ``alpha * V_S + (1 - alpha) * V_L`` of the two
trees' node values and the prior with ``beta * p_S + (1 - beta) * p_L``
(single-tree fallback when only one side knows the state).  Large slots
pick the yet-unevaluated frontier state of ``T_L`` with the highest
visit count in ``T_S`` (earliest-insertion, then lowest-move-index tie
break); if even the best candidate is unknown to ``T_S``, the slot
falls back to a plain PUCT simulation on ``T_L``.  Each evaluation
updates only its own tree, and terminal hits back up exact values
without spending budget, so the two forward-pass counters land exactly
on (b_s, b_l).

State identity across trees is the position hash; within a tree, nodes
remain unique per path and the hash index maps to the first-created
node.  The frontier is a lazy max-heap re-validated on pop; with
``debug=True`` every pop is cross-checked against a linear scan.

With ``trace=True`` every simulation appends a line
``i;net=S|L;leaf=<key>;mode=puct|priority|fallback|terminal;value=<v>``
(mode ``terminal`` marks the free exact-value simulations interleaved
within a slot).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .evaluators import Evaluator, NetShape, NormalizedCost, cost_of, DEFAULT_REFERENCE
from .game import Position
from .search import Node, SearchExhausted, SearchTree, counts_to_policy


@dataclass(frozen=True)
class BudgetSpec:
    """Per-search simulation budgets of the small and large evaluators."""

    b_s: int
    b_l: int
    allow_unbalanced: bool = False

    def __post_init__(self):
        if self.b_l < 0 or self.b_s < 0:
            raise ValueError("budgets must be >= 0")
        if self.b_s < self.b_l and not self.allow_unbalanced:
            raise ValueError(f"b_s must be >= b_l, got ({self.b_s}, {self.b_l})")

    @property
    def total(self) -> int:
        return self.b_s + self.b_l


@dataclass(frozen=True)
class ShareWeights:
    """Mixing weights: alpha for values, beta for priors.  The more
    accurate the large net, the smaller they should be."""

    alpha: float = 0.5
    beta: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must be in [0, 1]")


def make_schedule(spec: BudgetSpec, rng_seed) -> np.ndarray:
    """Boolean sequence of length b_s + b_l with exactly b_s True (small)
    slots, a uniformly random subset; deterministic given the seed."""
    markers = np.zeros(spec.total, dtype=bool)
    markers[: spec.b_s] = True
    np.random.default_rng(rng_seed).shuffle(markers)  # Fisher-Yates
    return markers


def budget_split(budget: int, r, small_shape: NetShape, large_shape: NetShape,
                 reference: NetShape = DEFAULT_REFERENCE,
                 allow_unbalanced: bool = False) -> BudgetSpec:
    """Split a normalized budget: fraction `r` to the large net, the rest
    to the small net, each converted to simulation counts (floored)."""
    r = Fraction(r)
    if not 0 <= r <= 1:
        raise ValueError("r must be in [0, 1]")
    b_l = math.floor(r * budget / cost_of(large_shape, reference).units)
    b_s = math.floor((1 - r) * budget / cost_of(small_shape, reference).units)
    return BudgetSpec(b_s, b_l, allow_unbalanced=allow_unbalanced)


class DualSearch:
    """Paired trees plus the cross-tree state index, frontier and trace."""

    def __init__(self, position: Position, small_evaluator: Evaluator,
                 large_evaluator: Evaluator, weights: ShareWeights = ShareWeights(),
                 c_puct: float = 1.5, trace: bool = False, debug: bool = False):
        self.position = position
        self.weights = weights
        self.tree_s = SearchTree(position, small_evaluator, c_puct)
        self.tree_l = SearchTree(position, large_evaluator, c_puct)
        self.tree_s.score_override = self._small_scores
        self.tree_l.score_override = self._large_scores
        self.trace: list[str] | None = [] if trace else None
        self.debug = debug
        # Frontier of T_L: per-slot entries in a max-heap keyed by the
        # state's visit count in T_S.  N_S only grows, so a pop-time
        # refresh alone could leave a buried entry holding the true max;
        # instead every T_S visit of a frontier state pushes a fresh entry
        # (via visit_hook) and pops discard entries whose stored key is
        # stale.  `_slots` maps state key -> live slots for that lookup.
        self._heap: list[tuple] = []
        self._slots: dict[int, list[tuple]] = {}
        self._batch_seq = 0
        self.tree_s.visit_hook = self._on_small_visit
        # The empty-tree "frontier" is the root itself.
        self._add_slot(None, -1, position.key, batch=-1, move_index=-1)

    # ------------------------------------------------------------------
    # Shared value / prior mixing
    # ------------------------------------------------------------------

    def _n_s(self, key: int) -> int:
        node = self.tree_s.nodes_by_key.get(key)
        return node.n_total if node is not None else 0

    def _mixed_scores(self, tree: SearchTree, node: Node, other: SearchTree,
                      cur_is_small: bool) -> np.ndarray:
        alpha, beta = self.weights.alpha, self.weights.beta
        q = tree.own_q(node)
        other_index = other.nodes_by_key
        for i, k in enumerate(node.child_keys):
            nb = other_index.get(k)
            if nb is None or nb.n_total == 0:
                continue
            m_other = nb.w_total / nb.n_total
            if node.edge_n[i] > 0:
                m_cur = -q[i]
                m_s, m_l = (m_cur, m_other) if cur_is_small else (m_other, m_cur)
                mixed = alpha * m_s + (1.0 - alpha) * m_l
            else:
                mixed = m_other
            q[i] = -mixed
        p = node.priors
        onode = other_index.get(node.key)
        if onode is not None and onode.priors is not None:
            p_s, p_l = (p, onode.priors) if cur_is_small else (onode.priors, p)
            p = beta * p_s + (1.0 - beta) * p_l
        return tree.compose_scores(node, q, tree.apply_root_noise(node, p))

    def _small_scores(self, tree: SearchTree, node: Node) -> np.ndarray:
        return self._mixed_scores(tree, node, self.tree_l, cur_is_small=True)

    def _large_scores(self, tree: SearchTree, node: Node) -> np.ndarray:
        return self._mixed_scores(tree, node, self.tree_s, cur_is_small=False)

    def set_root_noise(self, alpha: float, weight: float, rng) -> None:
        """Exploration noise on the policy-source tree's root priors."""
        self.tree_s.set_root_noise(alpha, weight, rng)

    # ------------------------------------------------------------------
    # Frontier of T_L (lazy max-heap keyed by N_S)
    # ------------------------------------------------------------------

    def _add_slot(self, parent: Node | None, edge: int, key: int,
                  batch: int | None = None, move_index: int | None = None) -> None:
        if batch is None:
            batch = self._batch_seq
        if move_index is None:
            move_index = edge
        slot = (batch, move_index, parent, edge)
        self._slots.setdefault(key, []).append(slot)
        self._push_entry(key, slot)

    def _push_entry(self, key: int, slot: tuple, ns: int | None = None) -> None:
        batch, move_index, parent, edge = slot
        if ns is None:
            ns = self._n_s(key)
        heapq.heappush(self._heap, (-ns, batch, move_index, id(parent), parent, edge, key))

    def _on_small_visit(self, node: Node) -> None:
        """T_S backup hook: refresh heap entries of frontier states whose
        priority just changed."""
        slots = self._slots.get(node.key)
        if slots:
            ns = self._n_s(node.key)
            for slot in slots:
                self._push_entry(node.key, slot, ns=ns)

    def _remove_slot(self, key: int, slot: tuple) -> None:
        slots = self._slots.get(key)
        if slots is not None:
            try:
                slots.remove(slot)
            except ValueError:
                pass
            if not slots:
                del self._slots[key]

    def _push_children(self, node: Node) -> None:
        self._batch_seq += 1
        for i, key in enumerate(node.child_keys):
            self._add_slot(node, i, key)

    def _entry_valid(self, parent: Node | None, edge: int, key: int) -> bool:
        if parent is None:
            if self.tree_l.root is not None:
                return False
        elif parent.children[edge] is not None:
            return False
        return key not in self.tree_l.nodes_by_key

    def _frontier_scan_max(self) -> int:
        """Debug cross-check: max N_S over valid frontier slots by scan."""
        best = -1
        for key, slots in self._slots.items():
            for _, _, parent, edge in slots:
                if self._entry_valid(parent, edge, key):
                    best = max(best, self._n_s(key))
        return best

    def select_priority_leaf(self):
        """Pop the frontier state with maximal N_S (ties: earliest
        insertion, then lowest move index).

        Returns (parent, edge, key) for the winning entry, or None when
        every candidate has N_S = 0 (the caller should fall back to PUCT
        on T_L).  Raises SearchExhausted when the frontier is empty.
        """
        while True:
            if not self._heap:
                raise SearchExhausted("large-net frontier is empty")
            neg_ns, batch, move_index, _, parent, edge, key = heapq.heappop(self._heap)
            slot = (batch, move_index, parent, edge)
            if not self._entry_valid(parent, edge, key):
                self._remove_slot(key, slot)
                continue
            ns = self._n_s(key)
            if ns != -neg_ns:
                # Stale: a fresher entry for this slot is already queued.
                continue
            if parent is not None:
                child_pos = parent.position.play(parent.moves[edge])
                if child_pos.is_terminal() is not None:
                    # Terminal states are never evaluated; materialize the
                    # node so the slot stops re-entering the frontier.
                    self.tree_l._attach(parent, edge, child_pos)
                    self._remove_slot(key, slot)
                    continue
            if self.debug:
                assert ns >= self._frontier_scan_max(), \
                    "heap max diverged from frontier scan"
            if ns == 0:
                # All candidates unknown to T_S: signal PUCT fallback.
                self._push_entry(key, slot, ns=0)
                return None
            self._remove_slot(key, slot)
            return parent, edge, key

    # ------------------------------------------------------------------
    # Simulation slots
    # ------------------------------------------------------------------

    def _emit(self, slot: int, net: str, key: int, mode: str, value: float) -> None:
        if self.trace is not None:
            self.trace.append(f"{slot};net={net};leaf={key};mode={mode};value={value:.6g}")

    def _spend_small(self, slot: int) -> None:
        masked = False
        while True:
            if self.tree_s.root is not None and self.tree_s.root.exhausted:
                raise SearchExhausted("small tree has evaluated the entire game tree")
            res = self.tree_s.simulate(masked=masked)
            self._emit(slot, "S", res.node.key,
                       "puct" if res.consumed else "terminal", res.value)
            if res.consumed:
                return
            masked = True  # force the retry toward unevaluated states

    def _spend_large(self, slot: int) -> None:
        selected = self.select_priority_leaf()
        if selected is None:
            masked = False
            while True:
                if self.tree_l.root is not None and self.tree_l.root.exhausted:
                    raise SearchExhausted("large tree has evaluated the entire game tree")
                res = self.tree_l.simulate(masked=masked)
                self._emit(slot, "L", res.node.key,
                           "fallback" if res.consumed else "terminal", res.value)
                if res.consumed:
                    self._push_children(res.node)
                    return
                masked = True
        parent, edge, key = selected
        if parent is None:
            res = self.tree_l.simulate()  # evaluates the root
            assert res.consumed and res.node is self.tree_l.root
            node, value = res.node, res.value
        else:
            node = self.tree_l._attach(parent, edge,
                                       parent.position.play(parent.moves[edge]))
            value = self.tree_l._evaluate_node(node)
            self.tree_l._backup(node, value)
            self.tree_l.simulations += 1
        self._emit(slot, "L", node.key, "priority", value)
        self._push_children(node)

    def run(self, spec: BudgetSpec, rng_seed) -> bool:
        """Execute the full schedule; consumes exactly b_s small-net and
        b_l large-net forward passes.

        Near the end of a game the reachable tree can run out of
        unevaluated states before the budget is spent; the run then stops
        early (the subtree is fully enumerated) and returns False.
        Returns True when the full budget was consumed."""
        start_s = self.tree_s.fwd_passes
        start_l = self.tree_l.fwd_passes
        for slot, is_small in enumerate(make_schedule(spec, rng_seed), start=1):
            try:
                if is_small:
                    self._spend_small(slot)
                else:
                    self._spend_large(slot)
            except SearchExhausted:
                return False
        assert self.tree_s.fwd_passes - start_s == spec.b_s
        assert self.tree_l.fwd_passes - start_l == spec.b_l
        return True

    def policy(self, tau: float) -> tuple[tuple[int, ...], np.ndarray]:
        return mpv_policy(self, tau)


# ----------------------------------------------------------------------
# Spec-level operations
# ----------------------------------------------------------------------

def mpv_search(dual: DualSearch, spec: BudgetSpec,
               weights: ShareWeights | None = None, rng_seed=0) -> None:
    if weights is not None:
        dual.weights = weights
    dual.run(spec, rng_seed)


def mpv_policy(dual: DualSearch, tau: float) -> tuple[tuple[int, ...], np.ndarray]:
    """Move distribution from the small tree's root visit counts."""
    root = dual.tree_s.root
    if root is None or root.priors is None:
        raise ValueError("small tree root not evaluated")
    return root.moves, counts_to_policy(root.edge_n, tau)


def shared_value(dual: DualSearch, key: int,
                 weights: ShareWeights | None = None) -> float:
    """Mixed state value alpha * V_S + (1 - alpha) * V_L; the single
    available tree's value when the state is in only one tree."""
    w = weights if weights is not None else dual.weights
    node_s = dual.tree_s.nodes_by_key.get(key)
    node_l = dual.tree_l.nodes_by_key.get(key)
    v_s = node_s.mean_value if node_s is not None and node_s.n_total > 0 else None
    v_l = node_l.mean_value if node_l is not None and node_l.n_total > 0 else None
    if v_s is None and v_l is None:
        raise KeyError(f"state {key} has a value in neither tree")
    if v_s is None:
        return v_l
    if v_l is None:
        return v_s
    return w.alpha * v_s + (1.0 - w.alpha) * v_l


def shared_prior(dual: DualSearch, key: int, move: int,
                 weights: ShareWeights | None = None) -> float:
    """Mixed prior beta * p_S + (1 - beta) * p_L for `move` at the state;
    the single available prior when only one tree evaluated the state."""
    w = weights if weights is not None else dual.weights
    node_s = dual.tree_s.nodes_by_key.get(key)
    node_l = dual.tree_l.nodes_by_key.get(key)
    p_s = None
    if node_s is not None and node_s.priors is not None:
        p_s = float(node_s.priors[node_s.moves.index(move)])
    p_l = None
    if node_l is not None and node_l.priors is not None:
        p_l = float(node_l.priors[node_l.moves.index(move)])
    if p_s is None and p_l is None:
        raise KeyError(f"state {key} has a prior in neither tree")
    if p_s is None:
        return p_l
    if p_l is None:
        return p_s
    return w.beta * p_s + (1.0 - w.beta) * p_l
