"""Self-play generation, replay buffer, and the training loop.

Self-play plays both sides with the same search configuration; at every
turn a fresh search runs from scratch, the visit-count distribution over
root moves is recorded as the policy target, the move is sampled with
temperature 1 for the first `tau_moves` moves and greedily afterwards,
and once the game ends every stored position is labeled z = +1 if the
player to move there won the game and -1 otherwise.  Records are
format-identical between single-tree and dual-tree generation, so the
buffer and trainer never care which search produced them.

The loop alternates phases: generate `games_per_phase` games (optionally
across worker processes; results are deterministic per game seed), then
run `steps_per_phase` SGD steps on batches sampled uniformly with
replacement.  In dual mode both networks train on the same batches.
Progress is counted in normalized games: one unit is the cost of one
self-play game at 200 reference-net forward passes per move, so runs
with different nets and budgets are comparable.  Checkpoints land in
``ckpt_<normalized_games>/`` as ``fS.mpvn``/``fL.mpvn`` plus a ``meta``
key-value file.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import nn
from .evaluators import NetShape, cost_of, DEFAULT_REFERENCE
from .game import Position, format_game_record
from .mpv import BudgetSpec, DualSearch, ShareWeights
from .nn import NetEvaluator, NetworkConfig, TrainingBatch
from .search import SearchTree, counts_to_policy

REPLAY_MAGIC = b"MPVR"
REPLAY_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class ReplayFileError(ValueError):
    pass


@dataclass
class ReplayRecord:
    """(state features, visit-count policy, outcome) training triple."""

    planes: np.ndarray  # (4, size, size) uint8
    pi: np.ndarray      # (size*size,) float32, support on legal moves
    z: int              # +1 if the player to move here won, else -1


class ReplayBuffer:
    """Fixed-size FIFO queue of replay records (capacity in positions)."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._queue: deque[ReplayRecord] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._queue)

    def append(self, record: ReplayRecord) -> None:
        self._queue.append(record)

    def extend(self, records) -> None:
        self._queue.extend(records)

    def records(self) -> list[ReplayRecord]:
        return list(self._queue)

    def sample(self, batch_size: int, rng) -> TrainingBatch:
        """Uniform sampling with replacement (batch may exceed buffer size)."""
        if not self._queue:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._queue), size=batch_size)
        records = [self._queue[i] for i in idx]
        planes = np.stack([r.planes for r in records]).astype(np.float32)
        pi = np.stack([r.pi for r in records]).astype(np.float32)
        z = np.array([r.z for r in records], dtype=np.float32)
        return TrainingBatch(planes, pi, z)


def save_replay(path, board_size: int, records) -> None:
    """Binary replay file: magic, version, board size, then per record the
    packed feature bits, the dense float32 policy, and an int8 outcome."""
    n = board_size * board_size
    with open(path, "wb") as f:
        f.write(REPLAY_MAGIC)
        f.write(struct.pack("<2I", REPLAY_VERSION, board_size))
        for r in records:
            bits = np.packbits(r.planes.astype(np.uint8).reshape(-1), bitorder="little")
            f.write(bits.tobytes())
            f.write(np.ascontiguousarray(r.pi, dtype="<f4").tobytes())
            f.write(struct.pack("<b", r.z))
            assert r.pi.shape == (n,)


def load_replay(path) -> tuple[int, list[ReplayRecord]]:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != REPLAY_MAGIC:
        raise ReplayFileError(f"{path}: not a replay file (bad magic)")
    if len(blob) < 12:
        raise ReplayFileError(f"{path}: truncated header")
    version, board_size = struct.unpack("<2I", blob[4:12])
    if version != REPLAY_VERSION:
        raise ReplayFileError(f"{path}: unsupported version {version}")
    n = board_size * board_size
    planes_bytes = (4 * n + 7) // 8
    rec_bytes = planes_bytes + 4 * n + 1
    body = blob[12:]
    if len(body) % rec_bytes:
        raise ReplayFileError(f"{path}: truncated record at offset {12 + len(body) - len(body) % rec_bytes}")
    records = []
    for off in range(0, len(body), rec_bytes):
        chunk = body[off:off + rec_bytes]
        bits = np.unpackbits(np.frombuffer(chunk[:planes_bytes], dtype=np.uint8),
                             bitorder="little")[: 4 * n]
        planes = bits.reshape(4, board_size, board_size).astype(np.uint8)
        pi = np.frombuffer(chunk[planes_bytes:planes_bytes + 4 * n], dtype="<f4").copy()
        (z,) = struct.unpack("<b", chunk[-1:])
        records.append(ReplayRecord(planes, pi, int(z)))
    return board_size, records


# ----------------------------------------------------------------------
# Self-play
# ----------------------------------------------------------------------

@dataclass
class SelfPlayConfig:
    board_size: int = 9
    mode: str = "pv"                      # "pv" or "mpv"
    sims: int = 800                       # pv-mode forward passes per move
    budgets: BudgetSpec = field(default_factory=lambda: BudgetSpec(800, 100))
    weights: ShareWeights = field(default_factory=ShareWeights)
    c_puct: float = 1.5
    tau_moves: int | None = None          # default: ceil(0.3 * size^2)
    dirichlet_alpha: float = 0.3
    dirichlet_weight: float = 0.25        # 0 disables root noise

    def __post_init__(self):
        if self.mode not in ("pv", "mpv"):
            raise ValueError(f"unknown self-play mode {self.mode!r}")
        if self.tau_moves is None:
            self.tau_moves = math.ceil(0.3 * self.board_size ** 2)


def selfplay_game(config: SelfPlayConfig, evaluators, seed: int):
    """Play one complete self-play game.

    `evaluators` is (evaluator,) in pv mode or (small, large) in mpv
    mode.  Returns (game record line, list of ReplayRecord).
    Deterministic given config, evaluators and seed.
    """
    rng = np.random.default_rng(seed)
    pos = Position(config.board_size)
    pending: list[tuple[np.ndarray, np.ndarray, int]] = []
    moves: list[int] = []
    n = config.board_size ** 2
    while (winner := pos.is_terminal()) is None:
        move_index = len(moves)
        if config.mode == "pv":
            searcher = SearchTree(pos, evaluators[0], config.c_puct)
            if config.dirichlet_weight > 0:
                searcher.set_root_noise(config.dirichlet_alpha, config.dirichlet_weight, rng)
            searcher.run(config.sims)
            root = searcher.root
        else:
            dual = DualSearch(pos, evaluators[0], evaluators[1],
                              weights=config.weights, c_puct=config.c_puct)
            if config.dirichlet_weight > 0:
                dual.set_root_noise(config.dirichlet_alpha, config.dirichlet_weight, rng)
            dual.run(config.budgets, np.random.SeedSequence([seed, move_index]))
            root = dual.tree_s.root
            if root is None or int(root.edge_n.sum()) == 0:
                # Endgame schedules can exhaust the large tree before any
                # small slot ran; the policy source still needs visits.
                dual.tree_s.run(2)
                root = dual.tree_s.root
        pi = counts_to_policy(root.edge_n, 1.0)
        dense = np.zeros(n, dtype=np.float32)
        dense[list(root.moves)] = pi
        pending.append((pos.encode_features().astype(np.uint8), dense, pos.to_play))
        tau = 1.0 if move_index < config.tau_moves else 0.0
        play_probs = pi if tau == 1.0 else counts_to_policy(root.edge_n, 0.0)
        move = int(rng.choice(root.moves, p=play_probs))
        moves.append(move)
        pos = pos.play(move)
    records = [ReplayRecord(planes, pi, 1 if mover == winner else -1)
               for planes, pi, mover in pending]
    return format_game_record(config.board_size, moves, winner), records


def mpv_selfplay_game(config: SelfPlayConfig, small_evaluator, large_evaluator, seed: int):
    if config.mode != "mpv":
        config = replace(config, mode="mpv")
    return selfplay_game(config, (small_evaluator, large_evaluator), seed)


def normalized_game_cost(per_net_sims: list[tuple[int, NetShape]],
                         reference: NetShape = DEFAULT_REFERENCE,
                         reference_sims: int = 200) -> Fraction:
    """Normalized generated games per actual self-play game: the per-move
    evaluation cost divided by `reference_sims` reference-net passes."""
    per_move = sum((Fraction(sims) * cost_of(shape, reference).units
                    for sims, shape in per_net_sims), start=Fraction(0))
    return per_move / reference_sims


# ----------------------------------------------------------------------
# Training loop
# ----------------------------------------------------------------------

@dataclass
class TrainConfig:
    mode: str = "mpv"                     # "pv" trains only the fl slot
    board_size: int = 5
    fs: NetShape = field(default_factory=lambda: NetShape(16, 1))
    fl: NetShape = field(default_factory=lambda: NetShape(32, 2))
    reference: NetShape = DEFAULT_REFERENCE
    value_hidden: int = 32
    l2: float = 1e-4
    sims: int = 800
    budgets: BudgetSpec = field(default_factory=lambda: BudgetSpec(800, 100))
    weights: ShareWeights = field(default_factory=ShareWeights)
    c_puct: float = 1.5
    tau_moves: int | None = None
    dirichlet_alpha: float = 0.3
    dirichlet_weight: float = 0.25
    buffer_capacity: int = 100_000
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    lr_milestones: tuple[int, ...] = ()
    games_per_phase: int = 50
    steps_per_phase: int = 100
    total_normalized_games: float = 2000.0
    checkpoint_every: float = 250.0
    holdout_games: int = 0
    workers: int = 0
    seed: int = 0
    out_dir: str = "train_out"

    def selfplay_config(self) -> SelfPlayConfig:
        return SelfPlayConfig(
            board_size=self.board_size, mode=self.mode, sims=self.sims,
            budgets=self.budgets, weights=self.weights, c_puct=self.c_puct,
            tau_moves=self.tau_moves, dirichlet_alpha=self.dirichlet_alpha,
            dirichlet_weight=self.dirichlet_weight)

    def game_cost(self) -> Fraction:
        if self.mode == "mpv":
            return normalized_game_cost(
                [(self.budgets.b_s, self.fs), (self.budgets.b_l, self.fl)], self.reference)
        return normalized_game_cost([(self.sims, self.fl)], self.reference)

    def config_hash(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


def _net_config(cfg: TrainConfig, shape: NetShape) -> NetworkConfig:
    return NetworkConfig(cfg.board_size, shape.filters, shape.blocks,
                         l2=cfg.l2, value_hidden=cfg.value_hidden)


def _game_seed(seed: int, phase: int, index: int) -> int:
    return (seed * 1_000_003 + phase) * 1_000_003 + index


def _play_training_game(args):
    """Worker entry: play one self-play game from a parameter snapshot."""
    index, sp_config, payload, seed = args
    if sp_config.mode == "mpv":
        (cfg_s, params_s), (cfg_l, params_l), reference = payload
        evaluators = (NetEvaluator(cfg_s, params_s, reference),
                      NetEvaluator(cfg_l, params_l, reference))
    else:
        (cfg_l, params_l), reference = payload
        evaluators = (NetEvaluator(cfg_l, params_l, reference),)
    line, records = selfplay_game(sp_config, evaluators, seed)
    return index, line, records


def generate_games(sp_config: SelfPlayConfig, payload, seeds, workers: int = 0):
    """Play one game per seed; returns (lines, records per game), ordered by
    seed index, identical whether run serially or across processes."""
    tasks = [(i, sp_config, payload, s) for i, s in enumerate(seeds)]
    results = {}
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, line, records in pool.map(_play_training_game, tasks, chunksize=1):
                results[index] = (line, records)
    else:
        for task in tasks:
            index, line, records = _play_training_game(task)
            results[index] = (line, records)
    ordered = [results[i] for i in range(len(tasks))]
    return [r[0] for r in ordered], [r[1] for r in ordered]


def _write_meta(path: Path, entries: dict) -> None:
    with open(path, "w") as f:
        for k, v in entries.items():
            f.write(f"{k}={v}\n")


def read_meta(path) -> dict[str, str]:
    out = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def _format_norm(x: Fraction) -> str:
    return str(int(x)) if x.denominator == 1 else f"{float(x):g}"


class TrainLoop:
    """Synchronous generate/train alternation with checkpointing."""

    def __init__(self, config: TrainConfig, log=None):
        self.config = config
        self.log = log or (lambda msg: None)
        self.cfg_s = _net_config(config, config.fs)
        self.cfg_l = _net_config(config, config.fl)
        self.params_s = nn.init_params(self.cfg_s, seed=config.seed)
        self.params_l = nn.init_params(self.cfg_l, seed=config.seed + 1)
        self.opt_s = nn.MomentumSGD(config.lr, config.momentum, config.lr_milestones)
        self.opt_l = nn.MomentumSGD(config.lr, config.momentum, config.lr_milestones)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.games_played = 0
        self.normalized_games = Fraction(0)
        self.steps = 0
        self.phase = 0
        self.history: list[dict] = []
        self.checkpoints: list[Path] = []
        self._rng_train = np.random.default_rng(config.seed + 0xA5)
        self._holdout: list[ReplayRecord] = []
        self._next_checkpoint = Fraction(config.checkpoint_every).limit_denominator(10**6)

    # -- persistence ----------------------------------------------------

    def save_checkpoint(self) -> Path:
        tag = _format_norm(self.normalized_games)
        path = Path(self.config.out_dir) / f"ckpt_{tag}"
        path.mkdir(parents=True, exist_ok=True)
        if self.config.mode == "mpv":
            nn.save_params(path / "fS.mpvn", self.cfg_s, self.params_s)
        nn.save_params(path / "fL.mpvn", self.cfg_l, self.params_l)
        _write_meta(path / "meta", {
            "mode": self.config.mode,
            "board_size": self.config.board_size,
            "games_played": self.games_played,
            "normalized_games": float(self.normalized_games),
            "steps": self.steps,
            "phase": self.phase,
            "seed": self.config.seed,
            "config_hash": self.config.config_hash(),
        })
        self.checkpoints.append(path)
        return path

    def resume(self, ckpt_dir) -> None:
        ckpt_dir = Path(ckpt_dir)
        meta = read_meta(ckpt_dir / "meta")
        if meta.get("config_hash") != self.config.config_hash():
            self.log("warning: resuming with a different configuration")
        if self.config.mode == "mpv":
            _, self.params_s = nn.load_params(ckpt_dir / "fS.mpvn")
            self.params_s = {k: v for k, v in self.params_s.items()}
        _, self.params_l = nn.load_params(ckpt_dir / "fL.mpvn")
        self.games_played = int(meta["games_played"])
        self.normalized_games = Fraction(meta["normalized_games"]).limit_denominator(10**6)
        self.steps = int(meta["steps"])
        self.phase = int(meta["phase"])
        self._next_checkpoint = self.normalized_games + Fraction(
            self.config.checkpoint_every).limit_denominator(10**6)

    # -- phases ----------------------------------------------------------

    def _payload(self):
        if self.config.mode == "mpv":
            return ((self.cfg_s, self.params_s), (self.cfg_l, self.params_l),
                    self.config.reference)
        return (self.cfg_l, self.params_l), self.config.reference

    def _generate_phase(self) -> None:
        cfg = self.config
        seeds = [_game_seed(cfg.seed, self.phase, i) for i in range(cfg.games_per_phase)]
        _, per_game = generate_games(cfg.selfplay_config(), self._payload(), seeds,
                                     workers=cfg.workers)
        for records in per_game:
            self.buffer.extend(records)
        self.games_played += len(per_game)
        self.normalized_games += cfg.game_cost() * len(per_game)

    def _train_phase(self) -> dict:
        cfg = self.config
        losses_s, losses_l = [], []
        for _ in range(cfg.steps_per_phase):
            batch = self.buffer.sample(cfg.batch_size, self._rng_train)
            if cfg.mode == "mpv":
                loss_s, grads = nn.loss_and_grads(self.cfg_s, self.params_s, batch)
                self._check_finite(loss_s)
                self.params_s = self.opt_s.step(self.params_s, grads)
                losses_s.append(loss_s)
            loss_l, grads = nn.loss_and_grads(self.cfg_l, self.params_l, batch)
            self._check_finite(loss_l)
            self.params_l = self.opt_l.step(self.params_l, grads)
            losses_l.append(loss_l)
            self.steps += 1
        return {
            "loss_fs": float(np.mean(losses_s)) if losses_s else float("nan"),
            "loss_fl": float(np.mean(losses_l)),
        }

    def _check_finite(self, loss: float) -> None:
        if not math.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {self.steps}")

    def holdout_loss(self) -> float | None:
        if not self._holdout:
            return None
        planes = np.stack([r.planes for r in self._holdout]).astype(np.float32)
        pi = np.stack([r.pi for r in self._holdout]).astype(np.float32)
        z = np.array([r.z for r in self._holdout], dtype=np.float32)
        return nn.loss(self.cfg_l, self.params_l, TrainingBatch(planes, pi, z))

    def run(self) -> list[Path]:
        cfg = self.config
        if cfg.holdout_games and not self._holdout:
            seeds = [_game_seed(cfg.seed, -1, i) for i in range(cfg.holdout_games)]
            _, per_game = generate_games(cfg.selfplay_config(), self._payload(), seeds,
                                         workers=cfg.workers)
            for records in per_game:
                self._holdout.extend(records)
        total = Fraction(cfg.total_normalized_games).limit_denominator(10**6)
        while self.normalized_games < total:
            self.phase += 1
            self._generate_phase()
            losses = self._train_phase() if len(self.buffer) >= cfg.batch_size else {}
            entry = {
                "phase": self.phase,
                "games": self.games_played,
                "normalized_games": float(self.normalized_games),
                "steps": self.steps,
                **losses,
            }
            hl = self.holdout_loss()
            if hl is not None:
                entry["holdout_loss"] = hl
            self.history.append(entry)
            self.log("phase=%d games=%d normalized=%s step=%d loss_fs=%s loss_fl=%s" % (
                self.phase, self.games_played, _format_norm(self.normalized_games),
                self.steps, losses.get("loss_fs", "-"), losses.get("loss_fl", "-")))
            if self.normalized_games >= self._next_checkpoint:
                self.save_checkpoint()
                while self._next_checkpoint <= self.normalized_games:
                    self._next_checkpoint += Fraction(cfg.checkpoint_every).limit_denominator(10**6)
        if not self.checkpoints or self.checkpoints[-1].name != f"ckpt_{_format_norm(self.normalized_games)}":
            self.save_checkpoint()
        return self.checkpoints


def train_loop(config: TrainConfig, resume_from=None, log=None) -> TrainLoop:
    """Run training to completion; returns the loop with history and
    checkpoint paths."""
    loop = TrainLoop(config, log=log)
    if resume_from is not None:
        loop.resume(resume_from)
    loop.run()
    return loop
