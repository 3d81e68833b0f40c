"""NoGo rules engine.

NoGo is played on a Go board with Go-style stone placement, except that
any move which would capture an opponent group or leave the placed
stone's own group without liberties is illegal.  Stones are never
removed, so groups only merge and positions never repeat.  The first
player without a legal move loses.

Boards are stored as integer bitmasks (bit ``row * size + col``), with
row 0 at the bottom so that GTP coordinate "A1" is point 0.  Group and
liberty structure plus per-color legality masks are maintained
incrementally on every move; `Position.check_invariants` recomputes
everything from scratch for cross-checking.
"""

from __future__ import annotations

import random
from functools import lru_cache

import numpy as np

EMPTY = 0
BLACK = 1
WHITE = 2

MIN_SIZE = 3
MAX_SIZE = 9

# GTP column letters skip 'I'.
_COL_LETTERS = "ABCDEFGHJ"

_ZOBRIST_SEED = 0x6E6F676F5A_01


class IllegalMoveError(ValueError):
    """Raised when a move violates the rules; `reason` is one of
    "out_of_bounds", "occupied", "suicide", "capture"."""

    def __init__(self, point, reason: str):
        self.point = point
        self.reason = reason
        super().__init__(f"illegal move {point}: {reason}")


def opponent(color: int) -> int:
    return BLACK + WHITE - color


@lru_cache(maxsize=None)
def _neighbor_masks(size: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Per-point neighbor lists and neighbor bitmasks."""
    nbrs = []
    masks = []
    for p in range(size * size):
        r, c = divmod(p, size)
        pts = []
        if r > 0:
            pts.append(p - size)
        if r < size - 1:
            pts.append(p + size)
        if c > 0:
            pts.append(p - 1)
        if c < size - 1:
            pts.append(p + 1)
        nbrs.append(tuple(pts))
        m = 0
        for q in pts:
            m |= 1 << q
        masks.append(m)
    return tuple(nbrs), tuple(masks)


def mix_seed(seed: int, salt: int) -> int:
    """Stable 64-bit mix of a base seed with a salt (splitmix-style)."""
    x = (seed * 0x9E3779B97F4A7C15 + salt) & 0xFFFFFFFFFFFFFFFF
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    return (x ^ (x >> 31)) & 0xFFFFFFFFFFFFFFFF


@lru_cache(maxsize=None)
def zobrist_table(size: int) -> tuple[tuple[int, ...], tuple[int, ...], int]:
    """Seeded 64-bit Zobrist keys: (black per point, white per point, side)."""
    rng = random.Random(mix_seed(_ZOBRIST_SEED, size))
    n = size * size
    black = tuple(rng.getrandbits(64) for _ in range(n))
    white = tuple(rng.getrandbits(64) for _ in range(n))
    side = rng.getrandbits(64)
    return black, white, side


def _bits(mask: int):
    """Iterate set bit indices of `mask`, lowest first."""
    while mask:
        lsb = mask & -mask
        yield lsb.bit_length() - 1
        mask ^= lsb


class Position:
    """Immutable-by-contract NoGo position.

    `play` returns a new position; in-place mutation (`_play_inplace`)
    is reserved for internal rollout scratch copies.  Safe to share
    across threads once constructed.
    """

    __slots__ = (
        "size", "to_play", "move_count",
        "_black", "_white", "_parent", "_libs",
        "_legal_black", "_legal_white", "_key",
    )

    def __init__(self, size: int = 9):
        # Playable sizes are MIN_SIZE..MAX_SIZE; degenerate boards down to
        # 1x1 are accepted for tests of rule edge cases.
        if not 1 <= size <= MAX_SIZE:
            raise ValueError(f"board size must be in [1, {MAX_SIZE}], got {size}")
        self.size = size
        self.to_play = BLACK
        self.move_count = 0
        self._black = 0
        self._white = 0
        self._parent: list[int] = list(range(size * size))
        self._libs: dict[int, int] = {}
        full = (1 << (size * size)) - 1
        # Every point with a neighbor is initially legal; on a degenerate
        # 1x1 board the lone point is immediate suicide.
        self._legal_black = full if size > 1 else 0
        self._legal_white = full if size > 1 else 0
        self._key = 0  # black to play contributes no side key

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def from_stones(cls, size: int, black_points, white_points, to_play: int = BLACK) -> "Position":
        """Build a position from explicit stone sets (order-independent).

        The resulting group/liberty structure is recomputed from scratch.
        Raises ValueError for overlapping stones or zero-liberty groups
        (unreachable in NoGo).
        """
        pos = cls(size)
        black_mask = 0
        for p in black_points:
            black_mask |= 1 << p
        white_mask = 0
        for p in white_points:
            white_mask |= 1 << p
        if black_mask & white_mask:
            raise ValueError("black and white stones overlap")
        pos._black = black_mask
        pos._white = white_mask
        pos.to_play = to_play
        pos.move_count = black_mask.bit_count() + white_mask.bit_count()
        pos._rebuild()
        return pos

    def copy(self) -> "Position":
        new = Position.__new__(Position)
        new.size = self.size
        new.to_play = self.to_play
        new.move_count = self.move_count
        new._black = self._black
        new._white = self._white
        new._parent = self._parent.copy()
        new._libs = self._libs.copy()
        new._legal_black = self._legal_black
        new._legal_white = self._legal_white
        new._key = self._key
        return new

    # ------------------------------------------------------------------
    # Basic queries
    # ------------------------------------------------------------------

    @property
    def full_mask(self) -> int:
        return (1 << (self.size * self.size)) - 1

    def stone_at(self, point: int) -> int:
        bit = 1 << point
        if self._black & bit:
            return BLACK
        if self._white & bit:
            return WHITE
        return EMPTY

    def stones(self, color: int) -> int:
        return self._black if color == BLACK else self._white

    def legal_mask(self, color: int | None = None) -> int:
        """Bitmask of legal points for `color` (default: player to move)."""
        if color is None:
            color = self.to_play
        return self._legal_black if color == BLACK else self._legal_white

    def is_legal(self, point: int, color: int | None = None) -> bool:
        if not 0 <= point < self.size * self.size:
            raise IllegalMoveError(point, "out_of_bounds")
        return bool(self.legal_mask(color) >> point & 1)

    def legal_moves(self, color: int | None = None) -> list[int]:
        """Sorted list of legal points for `color` (default: to_play)."""
        return list(_bits(self.legal_mask(color)))

    def legal_count(self, color: int | None = None) -> int:
        return self.legal_mask(color).bit_count()

    def is_terminal(self) -> int | None:
        """Winner color if the player to move has no legal move, else None."""
        if self.legal_mask(self.to_play) == 0:
            return opponent(self.to_play)
        return None

    @property
    def key(self) -> int:
        """64-bit Zobrist hash over (stones, to_play)."""
        return self._key

    def key_after(self, point: int) -> int:
        """Hash of the position reached by to_play playing `point`,
        without constructing it."""
        bl, wh, side = zobrist_table(self.size)
        stone_key = bl[point] if self.to_play == BLACK else wh[point]
        return self._key ^ stone_key ^ side

    def board_bytes(self) -> bytes:
        """Canonical (stones, to_play) encoding for full-equality checks."""
        n = (self.size * self.size + 7) // 8
        return (self._black.to_bytes(n, "little")
                + self._white.to_bytes(n, "little")
                + bytes([self.to_play]))

    # ------------------------------------------------------------------
    # Move application
    # ------------------------------------------------------------------

    def _illegal_reason(self, point: int, color: int) -> str:
        if self.stone_at(point) != EMPTY:
            return "occupied"
        nbrs, _ = _neighbor_masks(self.size)
        own = self.stones(color)
        opp = self.stones(opponent(color))
        occupied = own | opp
        libs = 0
        bit = 1 << point
        for q in nbrs[point]:
            qbit = 1 << q
            if not occupied & qbit:
                libs |= qbit
            elif own & qbit:
                libs |= self._libs[self._find(q)]
            elif self._libs[self._find(q)] == bit:
                return "capture"
        if libs & ~bit == 0:
            return "suicide"
        raise AssertionError("move is legal")  # pragma: no cover

    def play(self, point: int, color: int | None = None) -> "Position":
        """Return the position after `color` (default to_play) plays `point`."""
        new = self.copy()
        new._play_inplace(point, color)
        return new

    def _play_inplace(self, point: int, color: int | None = None) -> None:
        if color is None:
            color = self.to_play
        if not 0 <= point < self.size * self.size:
            raise IllegalMoveError(point, "out_of_bounds")
        if not self.legal_mask(color) >> point & 1:
            raise IllegalMoveError(point, self._illegal_reason(point, color))

        nbrs, nmasks = _neighbor_masks(self.size)
        bl, wh, side = zobrist_table(self.size)
        bit = 1 << point
        opp_color = opponent(color)
        own = self.stones(color)
        opp = self.stones(opp_color)
        occupied = own | opp

        # Merge the new stone with adjacent own groups.
        merged_libs = nmasks[point] & ~occupied
        own_roots = set()
        opp_roots = set()
        for q in nbrs[point]:
            qbit = 1 << q
            if own & qbit:
                own_roots.add(self._find(q))
            elif opp & qbit:
                opp_roots.add(self._find(q))
        for r in own_roots:
            merged_libs |= self._libs.pop(r)
        merged_libs &= ~bit

        new_root = point
        self._parent[point] = new_root
        for r in own_roots:
            self._parent[r] = new_root
        self._libs[new_root] = merged_libs

        recheck = merged_libs | bit | (nmasks[point] & ~occupied)
        for r in opp_roots:
            libs = self._libs[r] & ~bit
            self._libs[r] = libs
            recheck |= libs

        if color == BLACK:
            self._black |= bit
            self._key ^= bl[point]
        else:
            self._white |= bit
            self._key ^= wh[point]
        self._key ^= side
        self.to_play = opponent(self.to_play)
        self.move_count += 1

        self._legal_black &= ~bit
        self._legal_white &= ~bit
        recheck &= ~(self._black | self._white)
        for q in _bits(recheck):
            self._refresh_legality(q)

    def _find(self, p: int) -> int:
        parent = self._parent
        root = p
        while parent[root] != root:
            root = parent[root]
        while parent[p] != root:
            parent[p], p = root, parent[p]
        return root

    def _refresh_legality(self, point: int) -> None:
        """Recompute both colors' legality at an empty `point` from the
        current group structure."""
        nbrs, nmasks = _neighbor_masks(self.size)
        bit = 1 << point
        occupied = self._black | self._white
        empty_nbrs = nmasks[point] & ~occupied
        for color, attr in ((BLACK, "_legal_black"), (WHITE, "_legal_white")):
            own = self.stones(color)
            legal = True
            libs = empty_nbrs
            for q in nbrs[point]:
                qbit = 1 << q
                if not occupied & qbit:
                    continue
                root = self._find(q)
                if own & qbit:
                    libs |= self._libs[root]
                elif self._libs[root] == bit:
                    legal = False  # adjacent opponent group would be captured
                    break
            if legal and libs & ~bit == 0:
                legal = False  # own group would have no liberties
            mask = getattr(self, attr)
            setattr(self, attr, mask | bit if legal else mask & ~bit)

    # ------------------------------------------------------------------
    # Feature encoding
    # ------------------------------------------------------------------

    def encode_features(self) -> np.ndarray:
        """Four binary planes, shape (4, size, size), from to_play's view:
        own stones, opponent stones, own legal moves, opponent legal moves."""
        own = self.stones(self.to_play)
        opp = self.stones(opponent(self.to_play))
        own_legal = self.legal_mask(self.to_play)
        opp_legal = self.legal_mask(opponent(self.to_play))
        return np.stack([self._mask_plane(m) for m in (own, opp, own_legal, opp_legal)])

    def _mask_plane(self, mask: int) -> np.ndarray:
        n = self.size * self.size
        raw = np.frombuffer(mask.to_bytes((n + 7) // 8, "little"), dtype=np.uint8)
        bits = np.unpackbits(raw, bitorder="little")[:n]
        return bits.reshape(self.size, self.size).astype(np.float32)

    def board_array(self) -> np.ndarray:
        """Flat int8 board: 0 empty, 1 black, 2 white."""
        n = self.size * self.size
        black = np.unpackbits(np.frombuffer(
            self._black.to_bytes((n + 7) // 8, "little"), dtype=np.uint8),
            bitorder="little")[:n]
        white = np.unpackbits(np.frombuffer(
            self._white.to_bytes((n + 7) // 8, "little"), dtype=np.uint8),
            bitorder="little")[:n]
        return (black + 2 * white).astype(np.int8)

    # ------------------------------------------------------------------
    # Debug / validation
    # ------------------------------------------------------------------

    def _rebuild(self) -> None:
        """Recompute groups, liberties and legality masks from the stone
        masks alone (full-recompute mode)."""
        size = self.size
        n = size * size
        nbrs, nmasks = _neighbor_masks(size)
        bl, wh, side = zobrist_table(size)
        occupied = self._black | self._white
        self._parent = list(range(n))
        self._libs = {}
        seen = 0
        for p in range(n):
            bit = 1 << p
            if not occupied & bit or seen & bit:
                continue
            color_mask = self._black if self._black & bit else self._white
            group = 0
            libs = 0
            stack = [p]
            while stack:
                q = stack.pop()
                qbit = 1 << q
                if group & qbit:
                    continue
                group |= qbit
                libs |= nmasks[q] & ~occupied
                stack.extend(t for t in nbrs[q] if color_mask & (1 << t) and not group & (1 << t))
            if libs == 0:
                raise ValueError(f"group at point {p} has no liberties")
            seen |= group
            for q in _bits(group):
                self._parent[q] = p
            self._libs[p] = libs
        self._legal_black = 0
        self._legal_white = 0
        for p in _bits(self.full_mask & ~occupied):
            self._legal_black |= 1 << p
            self._legal_white |= 1 << p
            self._refresh_legality(p)
        key = 0
        for p in _bits(self._black):
            key ^= bl[p]
        for p in _bits(self._white):
            key ^= wh[p]
        if self.to_play == WHITE:
            key ^= side
        self._key = key

    def check_invariants(self) -> None:
        """Cross-check incremental state against a full recompute."""
        ref = Position.from_stones(
            self.size, _bits(self._black), _bits(self._white), self.to_play)
        assert self.move_count == self._black.bit_count() + self._white.bit_count()
        assert self._legal_black == ref._legal_black, "black legality cache diverged"
        assert self._legal_white == ref._legal_white, "white legality cache diverged"
        assert self._key == ref._key, "zobrist key diverged"
        groups = {self._find(p) for p in _bits(self._black | self._white)}
        ref_groups = {ref._find(p) for p in _bits(ref._black | ref._white)}
        assert len(groups) == len(ref_groups)
        for p in _bits(self._black | self._white):
            assert self._libs[self._find(p)] == ref._libs[ref._find(p)]
            assert self._libs[self._find(p)] != 0, "group without liberties"

    def __repr__(self) -> str:
        return f"Position(size={self.size}, to_play={'B' if self.to_play == BLACK else 'W'}, moves={self.move_count})"

    def __str__(self) -> str:
        rows = []
        for r in range(self.size - 1, -1, -1):
            cells = []
            for c in range(self.size):
                s = self.stone_at(r * self.size + c)
                cells.append({EMPTY: ".", BLACK: "X", WHITE: "O"}[s])
            rows.append(f"{r + 1:2} " + " ".join(cells))
        rows.append("   " + " ".join(_COL_LETTERS[: self.size]))
        return "\n".join(rows)


# ----------------------------------------------------------------------
# Spec-level operation aliases
# ----------------------------------------------------------------------

def is_legal(p: Position, point: int, color: int | None = None) -> bool:
    return p.is_legal(point, color)


def legal_moves(p: Position) -> list[int]:
    return p.legal_moves()


def play(p: Position, point: int) -> Position:
    return p.play(point)


def is_terminal(p: Position) -> int | None:
    return p.is_terminal()


def encode_features(p: Position) -> np.ndarray:
    return p.encode_features()


def position_key(p: Position) -> int:
    return p.key


# ----------------------------------------------------------------------
# Coordinates and game records
# ----------------------------------------------------------------------

def point_to_rc(point: int, size: int) -> tuple[int, int]:
    return divmod(point, size)


def rc_to_point(row: int, col: int, size: int) -> int:
    if not (0 <= row < size and 0 <= col < size):
        raise ValueError(f"({row}, {col}) out of bounds for size {size}")
    return row * size + col


def point_to_gtp(point: int, size: int) -> str:
    """GTP vertex, e.g. point 0 -> "A1" (letters skip 'I')."""
    row, col = divmod(point, size)
    return f"{_COL_LETTERS[col]}{row + 1}"


def gtp_to_point(vertex: str, size: int) -> int:
    v = vertex.strip().upper()
    if len(v) < 2 or not v[0].isalpha():
        raise ValueError(f"bad vertex {vertex!r}")
    col = _COL_LETTERS.find(v[0])
    if col < 0 or col >= size:
        raise ValueError(f"bad vertex {vertex!r}")
    try:
        row = int(v[1:]) - 1
    except ValueError:
        raise ValueError(f"bad vertex {vertex!r}") from None
    if not 0 <= row < size:
        raise ValueError(f"bad vertex {vertex!r}")
    return row * size + col


def color_name(color: int) -> str:
    return "B" if color == BLACK else "W"


def format_game_record(size: int, moves: list[int], winner: int) -> str:
    """One-line ASCII record: `size;B E5;W D4;...;result=B`."""
    parts = [str(size)]
    color = BLACK
    for m in moves:
        parts.append(f"{color_name(color)} {point_to_gtp(m, size)}")
        color = opponent(color)
    parts.append(f"result={color_name(winner)}")
    return ";".join(parts)


def parse_game_record(line: str) -> tuple[int, list[int], int]:
    """Inverse of `format_game_record`; returns (size, moves, winner)."""
    parts = line.strip().split(";")
    if len(parts) < 2 or not parts[-1].startswith("result="):
        raise ValueError(f"bad game record: {line!r}")
    size = int(parts[0])
    winner_s = parts[-1].split("=", 1)[1]
    if winner_s not in ("B", "W"):
        raise ValueError(f"bad result in record: {line!r}")
    winner = BLACK if winner_s == "B" else WHITE
    moves = []
    expect = BLACK
    for field in parts[1:-1]:
        try:
            color_s, vertex = field.split()
        except ValueError:
            raise ValueError(f"bad move field {field!r}") from None
        color = BLACK if color_s == "B" else WHITE
        if color != expect:
            raise ValueError(f"out-of-turn move in record: {field!r}")
        moves.append(gtp_to_point(vertex, size))
        expect = opponent(expect)
    return size, moves, winner


def replay_game_record(line: str) -> Position:
    """Replay a record and return the final position (validates legality)."""
    size, moves, _ = parse_game_record(line)
    pos = Position(size)
    for m in moves:
        pos = pos.play(m)
    return pos
