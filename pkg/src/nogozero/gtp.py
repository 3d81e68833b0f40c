"""Minimal GTP (Go Text Protocol) session for engine interoperability.

Supports: protocol_version, name, version, boardsize, clear_board, play,
genmove, quit, plus the extension command `legal_moves`.  Responses use
the standard framing (`= result` / `? error`, blank-line terminated,
optional command ids).  Sessions are single-threaded request-response.

`genmove` runs the configured search for the requested color and answers
in coordinate form ("resign" when the mover has no legal move, which in
NoGo means the game is lost).
"""

from __future__ import annotations

import numpy as np

from . import __version__
from .arena import Agent, AgentSpec
from .game import (BLACK, WHITE, MIN_SIZE, MAX_SIZE, Position, gtp_to_point,
                   point_to_gtp)


def _parse_color(token: str) -> int | None:
    t = token.lower()
    if t in ("b", "black"):
        return BLACK
    if t in ("w", "white"):
        return WHITE
    return None


class GTPSession:
    def __init__(self, agent_spec: AgentSpec, board_size: int = 9, seed: int = 0):
        self.spec = agent_spec
        self.size = board_size
        self.seed = seed
        self.pos = Position(board_size)
        self._moves_played = 0
        self._rng = np.random.default_rng(seed)
        self._commands = {
            "protocol_version": lambda args: "2",
            "name": lambda args: "nogozero",
            "version": lambda args: __version__,
            "boardsize": self._cmd_boardsize,
            "clear_board": self._cmd_clear,
            "play": self._cmd_play,
            "genmove": self._cmd_genmove,
            "legal_moves": self._cmd_legal_moves,
            "list_commands": lambda args: "\n".join(sorted(self._commands)),
            "quit": lambda args: "",
        }

    # -- commands ---------------------------------------------------------

    def _cmd_boardsize(self, args):
        try:
            size = int(args[0])
        except (IndexError, ValueError):
            raise ValueError("boardsize requires an integer")
        if not MIN_SIZE <= size <= MAX_SIZE:
            raise ValueError("unacceptable size")
        self.size = size
        return self._cmd_clear(())

    def _cmd_clear(self, args):
        self.pos = Position(self.size)
        self._moves_played = 0
        return ""

    def _with_to_play(self, color: int) -> Position:
        if self.pos.to_play == color:
            return self.pos
        black = [p for p in range(self.size ** 2) if self.pos.stone_at(p) == BLACK]
        white = [p for p in range(self.size ** 2) if self.pos.stone_at(p) == WHITE]
        return Position.from_stones(self.size, black, white, to_play=color)

    def _cmd_play(self, args):
        if len(args) != 2 or (color := _parse_color(args[0])) is None:
            raise ValueError("syntax: play <color> <vertex>")
        point = gtp_to_point(args[1], self.size)  # raises on bad vertex
        pos = self._with_to_play(color)
        if not pos.is_legal(point):
            raise ValueError("illegal move")
        self.pos = pos.play(point)
        self._moves_played += 1
        return ""

    def _cmd_genmove(self, args):
        if len(args) != 1 or (color := _parse_color(args[0])) is None:
            raise ValueError("syntax: genmove <color>")
        pos = self._with_to_play(color)
        if pos.is_terminal() is not None:
            return "resign"
        agent = Agent(self.spec, seed=self.seed + self._moves_played)
        sched_seed = np.random.SeedSequence([self.seed, self._moves_played])
        move = agent.select_move(pos, self._moves_played, self._rng, sched_seed)
        self.pos = pos.play(move)
        self._moves_played += 1
        return point_to_gtp(move, self.size)

    def _cmd_legal_moves(self, args):
        color = self.pos.to_play
        if args:
            color = _parse_color(args[0])
            if color is None:
                raise ValueError("syntax: legal_moves [<color>]")
        moves = self.pos.legal_moves(color)
        return " ".join(point_to_gtp(m, self.size) for m in moves)

    # -- protocol loop ------------------------------------------------------

    def handle(self, line: str) -> tuple[str, bool]:
        """Process one command line; returns (response, should_quit)."""
        line = line.split("#", 1)[0].strip()
        if not line:
            return "", False
        tokens = line.split()
        cmd_id = ""
        if tokens[0].isdigit():
            cmd_id = tokens[0]
            tokens = tokens[1:]
        if not tokens:
            return "", False
        name, args = tokens[0].lower(), tokens[1:]
        handler = self._commands.get(name)
        if handler is None:
            return f"?{cmd_id} unknown command\n\n", False
        try:
            result = handler(args)
        except ValueError as e:
            return f"?{cmd_id} {e}\n\n", False
        return f"={cmd_id} {result}\n\n", name == "quit"

    def serve(self, stream_in, stream_out) -> None:
        for line in stream_in:
            response, should_quit = self.handle(line)
            if response:
                stream_out.write(response)
                stream_out.flush()
            if should_quit:
                return
