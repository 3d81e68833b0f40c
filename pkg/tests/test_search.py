"""Single-tree PUCT search: selection arithmetic, backup perspective,
budget accounting, visit conservation and solved-position sanity."""

import numpy as np
import pytest

from nogozero.evaluators import Evaluator, PVOutput, UniformEvaluator
from nogozero.game import BLACK, WHITE, Position
from nogozero.search import (SearchTree, best_move, counts_to_policy,
                             policy_from_counts, puct_scores, run_search,
                             select_leaf)

from oracles import Solver, board_from_position


class ScriptedEvaluator(Evaluator):
    """Uniform priors; values looked up by position key (default 0)."""

    def __init__(self, values=None, policies=None):
        super().__init__()
        self.values = values or {}
        self.policies = policies or {}

    def _evaluate(self, position):
        moves = tuple(position.legal_moves())
        if position.key in self.policies:
            probs = np.asarray(self.policies[position.key], dtype=np.float64)
        else:
            probs = np.full(len(moves), 1.0 / len(moves))
        return PVOutput(moves, probs, self.values.get(position.key, 0.0))


class TestPuctFormula:
    def test_fresh_node_ties_break_lowest_index(self):
        scores = puct_scores(q=np.zeros(2), priors=np.array([0.5, 0.5]),
                             edge_n=np.zeros(2), n_total=1, c_puct=1.5)
        assert int(np.argmax(scores)) == 0

    def test_worked_example(self):
        scores = puct_scores(q=np.array([0.1, 0.5]), priors=np.array([0.8, 0.2]),
                             edge_n=np.array([3, 1]), n_total=4, c_puct=1.5)
        assert scores == pytest.approx([0.7, 0.8])
        assert int(np.argmax(scores)) == 1

    def test_c_zero_degenerates_to_greedy(self):
        q = np.array([0.3, -0.2, 0.0])
        scores = puct_scores(q, np.array([0.2, 0.5, 0.3]),
                             np.array([5, 2, 0]), 8, c_puct=0.0)
        assert np.array_equal(scores, q)

    def test_argmax_invariant_to_q_shift(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            k = int(rng.integers(2, 9))
            q = rng.uniform(-1, 1, k)
            p = rng.dirichlet(np.ones(k))
            n = rng.integers(0, 20, k)
            total = int(n.sum()) + 1
            base = puct_scores(q, p, n, total, 1.5)
            shifted = puct_scores(q + 0.37, p, n, total, 1.5)
            assert int(np.argmax(base)) == int(np.argmax(shifted))


class TestExpandAndBackup:
    def test_root_evaluation_only_with_budget_one(self):
        tree = SearchTree(Position(5), UniformEvaluator())
        spent = tree.run(1)
        assert spent == 1
        assert tree.root.n_total == 1
        assert all(c is None for c in tree.root.children)

    def test_uniform_evaluator_gives_equal_priors_summing_to_one(self):
        tree = SearchTree(Position(5), UniformEvaluator())
        tree.run(1)
        assert np.allclose(tree.root.priors, 1 / 25)
        assert tree.root.priors.sum() == pytest.approx(1.0)

    def test_terminal_child_backs_up_exact_loss_without_budget(self):
        # Black 3 corners on 2x2; white to play has no move.  Build one ply
        # earlier: black to play the third corner.
        pos = Position.from_stones(2, [0, 1], [], to_play=BLACK)
        tree = SearchTree(pos, ScriptedEvaluator())
        tree.run(1)
        spent = tree.run(1)  # second pass forced to look at children
        # Children of the root are terminal (white loses) or evaluated.
        sim = tree.simulate()
        assert tree.fwd_passes <= 3
        if sim.kind == "terminal":
            assert sim.value == -1.0
            assert sim.consumed is False

    def test_one_ply_backup_flips_perspective(self):
        values = {}
        pos = Position(3)
        # First child created by selection will be point 0 (tie break).
        child_key = pos.key_after(0)
        values[child_key] = 0.6
        tree = SearchTree(pos, ScriptedEvaluator(values=values))
        tree.run(2)
        assert tree.root.edge_n[0] == 1
        assert tree.root.edge_w[0] / tree.root.edge_n[0] == pytest.approx(-0.6)

    def test_opposite_backups_cancel(self):
        pos = Position(3)
        tree = SearchTree(pos, ScriptedEvaluator())
        tree.run(1)
        child = tree._attach(tree.root, 0, pos.play(tree.root.moves[0]))
        tree._backup(child, 1.0)
        tree._backup(child, -1.0)
        assert tree.root.edge_n[0] == 2
        assert tree.root.edge_w[0] == 0.0

    def test_double_evaluation_rejected(self):
        tree = SearchTree(Position(3), UniformEvaluator())
        tree.run(1)
        with pytest.raises(ValueError):
            tree.root.set_evaluation(UniformEvaluator().evaluate(Position(3)))

    def test_root_edge_visits_sum_to_sims_minus_one(self):
        tree = SearchTree(Position(5), UniformEvaluator())
        tree.run(40)
        # No terminal states reachable this early: sims == forward passes.
        assert tree.simulations == 40
        assert int(tree.root.edge_n.sum()) == 39
        assert tree.root.n_total == 40


class TestRunSearch:
    def test_exact_budget_consumption(self):
        tree = SearchTree(Position(5), UniformEvaluator())
        assert tree.run(57) == 57
        assert tree.fwd_passes == 57
        assert tree.evaluator.calls == 57

    def test_deterministic_tree_statistics(self):
        def stats(seed):
            tree = SearchTree(Position(4), UniformEvaluator())
            tree.run(120)
            return tree.root.edge_n.copy(), tree.root.edge_w.copy()
        n1, w1 = stats(0)
        n2, w2 = stats(1)
        assert np.array_equal(n1, n2)
        assert np.array_equal(w1, w2)

    def test_terminal_root_rejected(self):
        pos = Position.from_stones(2, [0, 1, 2], [], to_play=WHITE)
        with pytest.raises(ValueError):
            SearchTree(pos, UniformEvaluator())

    def test_exhaustion_stops_early(self):
        # 2x2: the whole game tree is tiny; the search must stop rather
        # than spin once every state is evaluated.
        tree = SearchTree(Position(2), UniformEvaluator())
        spent = tree.run(500)
        assert spent < 500
        assert tree.root.exhausted

    def test_visit_conservation_everywhere(self):
        tree = SearchTree(Position(4), UniformEvaluator())
        tree.run(300)
        stack = [tree.root]
        while stack:
            node = stack.pop()
            if node.terminal_value is not None:
                continue
            assert node.n_total == 1 + int(node.edge_n.sum())
            for child in node.children:
                if child is not None:
                    stack.append(child)

    def test_q_bounds(self):
        tree = SearchTree(Position(3), UniformEvaluator())
        tree.run(200)
        stack = [tree.root]
        while stack:
            node = stack.pop()
            if node.terminal_value is not None:
                continue
            visited = node.edge_n > 0
            q = node.edge_w[visited] / node.edge_n[visited]
            assert np.all(np.abs(q) <= 1 + 1e-12)
            stack.extend(c for c in node.children if c is not None)


class TestSelectLeaf:
    def test_path_starts_at_root_and_ends_unevaluated(self):
        tree = SearchTree(Position(5), UniformEvaluator())
        tree.run(10)
        path = select_leaf(tree)
        assert path[0][0] is tree.root
        node, action = path[-1]
        if action >= 0:
            child = node.children[action]
            assert child is None or child.terminal_value is not None

    def test_requires_evaluated_root(self):
        tree = SearchTree(Position(5), UniformEvaluator())
        with pytest.raises(ValueError):
            select_leaf(tree)


class TestPolicyFromCounts:
    def test_one_hot_when_single_move_visited(self):
        assert np.array_equal(counts_to_policy(np.array([800, 0, 0]), 1.0),
                              [1.0, 0.0, 0.0])

    def test_proportional_at_tau_one(self):
        assert counts_to_policy(np.array([600, 200]), 1.0) == pytest.approx([0.75, 0.25])

    def test_tau_to_zero_is_argmax(self):
        assert np.array_equal(counts_to_policy(np.array([600, 200]), 0.0), [1.0, 0.0])
        # tie break to lowest index
        assert np.array_equal(counts_to_policy(np.array([5, 5]), 0.0), [1.0, 0.0])

    def test_tree_level_interface(self):
        tree = SearchTree(Position(4), UniformEvaluator())
        tree.run(50)
        moves, probs = policy_from_counts(tree, 1.0)
        assert moves == tree.root.moves
        assert probs.sum() == pytest.approx(1.0)

    def test_intermediate_tau(self):
        probs = counts_to_policy(np.array([400, 100]), 0.5)
        assert probs == pytest.approx([16 / 17, 1 / 17])


class TestSearchFindsWins:
    def test_most_visited_move_is_optimal_on_solved_positions(self):
        # Small version of the 50-position acceptance suite.
        solver = Solver(3)
        rng = np.random.default_rng(77)
        tested = 0
        hits = 0
        for seed in range(60):
            pos = Position(3)
            for _ in range(int(rng.integers(2, 5))):
                if pos.is_terminal() is not None:
                    break
                pos = pos.play(int(rng.choice(pos.legal_moves())))
            if pos.is_terminal() is not None:
                continue
            board = board_from_position(pos)
            optimal = solver.optimal_moves(board, pos.to_play)
            if solver.solve(board, pos.to_play) != 1 or len(optimal) == len(pos.legal_moves()):
                continue  # want positions where the choice matters
            tree = SearchTree(pos, UniformEvaluator())
            tree.run_simulations(2000)
            if best_move(tree) in optimal:
                hits += 1
            tested += 1
            if tested == 10:
                break
        assert tested == 10
        assert hits >= 9
