"""Rules engine tests: legality, terminal detection, features, hashing,
coordinates and game records."""

import numpy as np
import pytest

from nogozero.game import (
    BLACK, WHITE, EMPTY, IllegalMoveError, Position, format_game_record,
    gtp_to_point, opponent, parse_game_record, point_to_gtp, replay_game_record,
    rc_to_point, zobrist_table,
)

from oracles import (Solver, board_from_position, enumerate_reachable,
                     oracle_is_legal, oracle_legal_moves)


def play_random_game(size: int, seed: int) -> tuple[Position, list[int]]:
    rng = np.random.default_rng(seed)
    pos = Position(size)
    moves = []
    while pos.is_terminal() is None:
        move = int(rng.choice(pos.legal_moves()))
        moves.append(move)
        pos = pos.play(move)
    return pos, moves


class TestLegality:
    def test_empty_board_all_legal(self):
        pos = Position(9)
        assert pos.legal_moves() == list(range(81))
        assert all(pos.is_legal(p) for p in range(81))

    def test_two_by_two_corner_is_suicide_and_capture(self):
        # Black holds three corners; the last point both captures and suicides.
        pos = Position.from_stones(2, black_points=[0, 1, 2], white_points=[],
                                   to_play=WHITE)
        assert not pos.is_legal(3)
        assert pos.legal_moves() == []

    def test_single_center_stone_all_replies_legal(self):
        pos = Position.from_stones(3, black_points=[4], white_points=[], to_play=WHITE)
        for p in range(9):
            assert pos.is_legal(p) == (p != 4)

    def test_out_of_bounds_raises(self):
        pos = Position(5)
        with pytest.raises(IllegalMoveError):
            pos.is_legal(25)
        with pytest.raises(IllegalMoveError):
            pos.is_legal(-1)

    def test_occupied_points_never_legal(self):
        pos, _ = play_random_game(5, seed=11)
        for p in range(25):
            if pos.stone_at(p) != EMPTY:
                assert not pos.is_legal(p, BLACK)
                assert not pos.is_legal(p, WHITE)

    def test_legal_moves_equals_pointwise_scan(self):
        pos = Position(5)
        rng = np.random.default_rng(3)
        for _ in range(12):
            if pos.is_terminal() is not None:
                break
            scan = [p for p in range(25) if pos.is_legal(p)]
            assert pos.legal_moves() == scan
            pos = pos.play(int(rng.choice(scan)))


class TestPlay:
    def test_play_center(self):
        pos = Position(9).play(rc_to_point(4, 4, 9))
        assert pos.stone_at(rc_to_point(4, 4, 9)) == BLACK
        assert pos.to_play == WHITE
        assert pos.move_count == 1

    def test_play_is_value_semantics(self):
        pos = Position(5)
        pos.play(12)
        assert pos.move_count == 0 and pos.stone_at(12) == EMPTY

    def test_illegal_move_error_reasons(self):
        pos = Position.from_stones(2, [0, 1, 2], [], to_play=WHITE)
        with pytest.raises(IllegalMoveError) as e:
            pos.play(0)
        assert e.value.reason == "occupied"
        with pytest.raises(IllegalMoveError) as e:
            pos.play(3)
        assert e.value.reason in ("suicide", "capture")
        # White group {1,3} hemmed in by black {2,4,6}: its only liberty is
        # the corner 0.  White filling it is suicide; black taking it is a
        # capture (checked first, though the black stone would also be dead).
        corner = Position.from_stones(3, [2, 4, 6], [1, 3], to_play=WHITE)
        with pytest.raises(IllegalMoveError) as e:
            corner.play(0)
        assert e.value.reason == "suicide"
        with pytest.raises(IllegalMoveError) as e:
            corner.play(0, color=BLACK)
        assert e.value.reason == "capture"

    def test_replay_reproduces_position(self):
        final, moves = play_random_game(5, seed=5)
        rebuilt = Position(5)
        for m in moves:
            rebuilt = rebuilt.play(m)
        assert rebuilt.key == final.key
        assert rebuilt.board_bytes() == final.board_bytes()
        assert rebuilt.move_count == final.move_count

    def test_incremental_state_matches_full_recompute(self):
        rng = np.random.default_rng(7)
        for seed in range(8):
            pos = Position(4)
            while pos.is_terminal() is None:
                pos = pos.play(int(rng.choice(pos.legal_moves())))
                pos.check_invariants()  # liberties >= 1, caches, key

    def test_game_length_bounded_by_area(self):
        for seed in range(5):
            pos, moves = play_random_game(4, seed)
            assert len(moves) <= 16
            assert pos.move_count == len(moves)


class TestTerminal:
    def test_empty_board_not_terminal(self):
        assert Position(9).is_terminal() is None

    def test_blocked_player_loses(self):
        pos = Position.from_stones(2, [0, 1, 2], [], to_play=WHITE)
        assert pos.is_terminal() == BLACK

    def test_one_by_one_black_loses_immediately(self):
        pos = Position(1)
        assert pos.legal_moves() == []  # the only point is suicide
        assert pos.is_terminal() == WHITE

    def test_terminal_matches_oracle_on_random_games(self):
        for seed in range(6):
            pos, _ = play_random_game(3, seed)
            board = board_from_position(pos)
            assert oracle_legal_moves(board, 3, pos.to_play) == []
            assert pos.is_terminal() == opponent(pos.to_play)


class TestFeatures:
    def test_empty_board_planes(self):
        f = Position(9).encode_features()
        assert f.shape == (4, 9, 9)
        assert not f[0].any() and not f[1].any()
        assert f[2].all() and f[3].all()

    def test_perspective_swap(self):
        pos = Position.from_stones(5, [12], [], to_play=WHITE)
        f = pos.encode_features()
        assert f[0].sum() == 0
        assert f[1].sum() == 1 and f[1][2][2] == 1

    def test_legal_planes_match_legal_moves(self):
        pos, _ = zip(*[play_random_game(5, 21)])
        pos = pos[0]
        # use a midgame state instead of terminal
        pos = Position(5)
        rng = np.random.default_rng(13)
        for _ in range(9):
            pos = pos.play(int(rng.choice(pos.legal_moves())))
        f = pos.encode_features()
        own = sorted(np.flatnonzero(f[2].reshape(-1)))
        opp = sorted(np.flatnonzero(f[3].reshape(-1)))
        assert own == pos.legal_moves(pos.to_play)
        assert opp == pos.legal_moves(opponent(pos.to_play))
        occupied = f[0] + f[1]
        assert not ((f[2] + f[3]) * occupied).any()
        assert not (f[0] * f[1]).any()
        assert set(np.unique(f)) <= {0.0, 1.0}


class TestPositionKey:
    def test_transposed_orders_same_key(self):
        a = Position(5).play(3).play(10).play(7)
        b = Position(5).play(7).play(10).play(3)
        assert a.key == b.key

    def test_key_matches_from_stones(self):
        pos, _ = play_random_game(5, seed=2)
        rebuilt = Position.from_stones(
            5, [p for p in range(25) if pos.stone_at(p) == BLACK],
            [p for p in range(25) if pos.stone_at(p) == WHITE], pos.to_play)
        assert rebuilt.key == pos.key

    def test_to_play_changes_key(self):
        a = Position.from_stones(5, [3], [7], to_play=BLACK)
        b = Position.from_stones(5, [3], [7], to_play=WHITE)
        assert a.key != b.key

    def test_key_after_matches_play(self):
        pos = Position(5)
        rng = np.random.default_rng(17)
        for _ in range(10):
            m = int(rng.choice(pos.legal_moves()))
            assert pos.key_after(m) == pos.play(m).key
            pos = pos.play(m)


class TestRulesOracle:
    def test_exhaustive_three_ply_equivalence(self):
        # Acceptance runs the full 6-ply set; this is the fast version.
        states = enumerate_reachable(3, max_plies=3)
        for board, to_play in states:
            pos = Position.from_stones(
                3, [p for p in range(9) if board[p] == BLACK],
                [p for p in range(9) if board[p] == WHITE], to_play)
            for p in range(9):
                assert pos.is_legal(p) == oracle_is_legal(board, 3, p, to_play)

    def test_solver_sanity(self):
        # 3x3 NoGo from the empty board is a first-player win.
        solver = Solver(3)
        assert solver.solve([EMPTY] * 9, BLACK) == 1


class TestCoordinates:
    def test_gtp_round_trip(self):
        for size in (3, 5, 9):
            for p in range(size * size):
                assert gtp_to_point(point_to_gtp(p, size), size) == p

    def test_letters_skip_i(self):
        assert point_to_gtp(80, 9) == "J9"
        assert gtp_to_point("J9", 9) == 80
        with pytest.raises(ValueError):
            gtp_to_point("I5", 9)

    def test_gtp_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            gtp_to_point("E6", 5)
        with pytest.raises(ValueError):
            gtp_to_point("Z1", 9)
        with pytest.raises(ValueError):
            gtp_to_point("5E", 9)


class TestGameRecords:
    def test_format_and_parse_round_trip(self):
        final, moves = play_random_game(5, seed=23)
        winner = final.is_terminal()
        line = format_game_record(5, moves, winner)
        assert line.startswith("5;B ") and line.endswith(f"result={'B' if winner == BLACK else 'W'}")
        size, parsed_moves, parsed_winner = parse_game_record(line)
        assert (size, parsed_moves, parsed_winner) == (5, moves, winner)
        assert replay_game_record(line).key == final.key

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError):
            parse_game_record("5;B E5;W D4")
        with pytest.raises(ValueError):
            parse_game_record("5;B E5;B D4;result=B")
        with pytest.raises(ValueError):
            parse_game_record("")


class TestZobristTable:
    def test_table_is_stable_and_distinct(self):
        bl, wh, side = zobrist_table(5)
        again = zobrist_table(5)
        assert (bl, wh, side) == (again[0], again[1], again[2])
        all_keys = list(bl) + list(wh) + [side]
        assert len(set(all_keys)) == len(all_keys)
