"""Command-line entry point.

Subcommands:

  selfplay   generate self-play game records and a replay file
  train      run the training loop (PV or MPV mode), with checkpoints
  match      play a head-to-head match between two agent specs
  sweep      budget-allocation sweep against a fixed opponent
  analyze    print search statistics for a position
  gtp        serve the GTP text protocol on stdin/stdout

Configuration comes from an optional `--config FILE` of `key = value`
lines; repeated `-o key=value` flags override file values.  Exit codes:
0 success, 1 usage/configuration error, 2 runtime abort.

Agent specs (match/sweep/analyze/gtp) use a compact grammar:

  uct:SIMS                        rollout-backed UCT baseline
  pv:EVAL:SIMS                    single-tree agent
  mpv:EVAL,EVAL:BS,BL             dual-tree agent (small first)

where EVAL is one of `uniform`, `mobility`, `rollout[N]`,
`noisy[SIGMA,COST]` (mobility base; COST like 1/8), or a `.mpvn` model
path.  Example: `mpv:noisy[0.3,1/8],noisy[0.05,1]:1600,200`.
"""

from __future__ import annotations

import argparse
import csv
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import arena, nn, plots, train
from .arena import AgentSpec, EvaluatorSpec
from .config import Config, ConfigError, load_config
from .evaluators import NetShape
from .game import BLACK, Position, parse_game_record, point_to_gtp
from .gtp import GTPSession
from .mpv import BudgetSpec, DualSearch, ShareWeights
from .nn import NetEvaluator
from .search import SearchTree
from .train import SelfPlayConfig, TrainConfig, TrainLoop


class UsageError(ValueError):
    pass


def _reference(cfg: Config) -> NetShape:
    return NetShape(cfg.reference_filters, cfg.reference_blocks)


def parse_evaluator_spec(text: str, cfg: Config) -> EvaluatorSpec:
    text = text.strip()
    if text == "uniform":
        return EvaluatorSpec("uniform")
    if text == "mobility":
        return EvaluatorSpec("mobility")
    if text.startswith("rollout"):
        playouts = 1
        if "[" in text:
            playouts = int(text[text.index("[") + 1:text.rindex("]")])
        return EvaluatorSpec("rollout", playouts=playouts)
    if text.startswith("noisy"):
        inner = text[text.index("[") + 1:text.rindex("]")]
        sigma_s, cost_s = inner.split(",")
        return EvaluatorSpec("noisy", sigma=float(sigma_s), cost=Fraction(cost_s))
    if text.endswith(".mpvn"):
        return EvaluatorSpec("net", model_path=text, reference=_reference(cfg))
    raise UsageError(f"cannot parse evaluator spec {text!r}")


def parse_agent_spec(text: str, cfg: Config) -> AgentSpec:
    parts = text.split(":")
    kind = parts[0]
    if kind == "uct":
        sims = int(parts[1]) if len(parts) > 1 else cfg.sims
        return arena.uct_rollout_baseline(sims, cfg.c_puct)
    if kind == "pv":
        if len(parts) < 2:
            raise UsageError("pv agent needs an evaluator: pv:EVAL[:SIMS]")
        ev = parse_evaluator_spec(parts[1], cfg)
        sims = int(parts[2]) if len(parts) > 2 else cfg.sims
        return AgentSpec(name=text, kind="pv", evaluator=ev, sims=sims, c_puct=cfg.c_puct)
    if kind == "mpv":
        if len(parts) < 2 or "," not in parts[1]:
            raise UsageError("mpv agent needs two evaluators: mpv:EVAL,EVAL[:BS,BL]")
        small_s, large_s = parts[1].split(",", 1)
        small = parse_evaluator_spec(small_s, cfg)
        large = parse_evaluator_spec(large_s, cfg)
        if len(parts) > 2:
            bs_s, bl_s = parts[2].split(",")
            budgets = BudgetSpec(int(bs_s), int(bl_s))
        else:
            budgets = BudgetSpec(cfg.b_s, cfg.b_l)
        return AgentSpec(name=text, kind="mpv", small=small, large=large,
                         budgets=budgets, weights=ShareWeights(cfg.alpha, cfg.beta),
                         c_puct=cfg.c_puct)
    raise UsageError(f"unknown agent kind {kind!r} (want uct/pv/mpv)")


def _selfplay_evaluators(cfg: Config):
    """Evaluators for record generation: trained nets when model paths are
    configured, otherwise seeded random-init nets."""
    reference = _reference(cfg)

    def net(path: str, shape: NetShape, seed: int) -> NetEvaluator:
        if path:
            net_cfg, params = nn.load_params(path)
            return NetEvaluator(net_cfg, params, reference)
        net_cfg = nn.NetworkConfig(cfg.board_size, shape.filters, shape.blocks,
                                   l2=cfg.l2, value_hidden=cfg.value_hidden)
        return NetEvaluator(net_cfg, nn.init_params(net_cfg, seed=seed), reference)

    large = net(cfg.model_fl, NetShape(cfg.fl_filters, cfg.fl_blocks), cfg.seed + 1)
    if cfg.mode == "pv":
        return (large,)
    small = net(cfg.model_fs, NetShape(cfg.fs_filters, cfg.fs_blocks), cfg.seed)
    return (small, large)


def _selfplay_config(cfg: Config) -> SelfPlayConfig:
    return SelfPlayConfig(
        board_size=cfg.board_size, mode=cfg.mode, sims=cfg.sims,
        budgets=BudgetSpec(cfg.b_s, cfg.b_l),
        weights=ShareWeights(cfg.alpha, cfg.beta), c_puct=cfg.c_puct,
        tau_moves=cfg.tau_moves or None, dirichlet_alpha=cfg.dirichlet_alpha,
        dirichlet_weight=cfg.dirichlet_weight)


def cmd_selfplay(cfg: Config, args) -> int:
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sp = _selfplay_config(cfg)
    evaluators = _selfplay_evaluators(cfg)
    lines = []
    all_records = []
    for i in range(args.games or cfg.games):
        line, records = train.selfplay_game(sp, evaluators, train._game_seed(cfg.seed, 0, i))
        lines.append(line)
        all_records.extend(records)
    (out_dir / "games.txt").write_text("".join(l + "\n" for l in lines))
    train.save_replay(out_dir / "replay.mpvr", cfg.board_size, all_records)
    print(f"wrote {len(lines)} games ({len(all_records)} positions) to {out_dir}")
    return 0


def cmd_train(cfg: Config, args) -> int:
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = TrainConfig(
        mode=cfg.mode, board_size=cfg.board_size,
        fs=NetShape(cfg.fs_filters, cfg.fs_blocks),
        fl=NetShape(cfg.fl_filters, cfg.fl_blocks),
        reference=_reference(cfg), value_hidden=cfg.value_hidden, l2=cfg.l2,
        sims=cfg.sims, budgets=BudgetSpec(cfg.b_s, cfg.b_l),
        weights=ShareWeights(cfg.alpha, cfg.beta), c_puct=cfg.c_puct,
        tau_moves=cfg.tau_moves or None, dirichlet_alpha=cfg.dirichlet_alpha,
        dirichlet_weight=cfg.dirichlet_weight, buffer_capacity=cfg.buffer_capacity,
        batch_size=cfg.batch_size, lr=cfg.lr, momentum=cfg.momentum,
        lr_milestones=cfg.lr_milestones, games_per_phase=cfg.games_per_phase,
        steps_per_phase=cfg.steps_per_phase,
        total_normalized_games=cfg.total_normalized_games,
        checkpoint_every=cfg.checkpoint_every, holdout_games=cfg.holdout_games,
        workers=cfg.workers, seed=cfg.seed, out_dir=str(out_dir))
    loop = TrainLoop(tc, log=lambda msg: print(msg, flush=True))
    if args.resume:
        loop.resume(args.resume)
    loop.run()
    with open(out_dir / "history.csv", "w", newline="") as f:
        keys = sorted({k for h in loop.history for k in h})
        writer = csv.DictWriter(f, fieldnames=keys, delimiter=";")
        writer.writeheader()
        writer.writerows(loop.history)
    if loop.history:
        plots.save_training_figure(loop.history, out_dir / "training.png")
    print(f"checkpoints: {', '.join(str(p) for p in loop.checkpoints)}")
    return 0


def cmd_match(cfg: Config, args) -> int:
    agent_a = parse_agent_spec(args.agent_a, cfg)
    agent_b = parse_agent_spec(args.agent_b, cfg)
    n = args.games or cfg.n_games
    result = arena.play_match(agent_a, agent_b, n, cfg.board_size,
                              seed=cfg.seed, workers=cfg.workers)
    pairing = f"{agent_a.name}-vs-{agent_b.name}"
    print(arena.format_match_report([(pairing, result)]))
    print(arena.match_machine_line(pairing, result))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "match.txt").write_text(
            arena.format_match_report([(pairing, result)]) + "\n"
            + arena.match_machine_line(pairing, result) + "\n")
        plots.save_match_figure([(pairing, result)], out_dir / "match.png")
    return 0


def cmd_sweep(cfg: Config, args) -> int:
    small = parse_evaluator_spec(args.small, cfg)
    large = parse_evaluator_spec(args.large, cfg)
    opponent = parse_agent_spec(args.opponent, cfg)
    budgets = [int(b) for b in args.budgets.split(",")]
    ratios = [Fraction(r) for r in args.ratios.split(",")]
    rows = arena.budget_sweep(budgets, ratios, small, large, opponent,
                              args.games or cfg.n_games, cfg.board_size,
                              seed=cfg.seed, workers=cfg.workers,
                              weights=ShareWeights(cfg.alpha, cfg.beta),
                              c_puct=cfg.c_puct)
    out_dir = Path(args.out or cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = arena.sweep_machine_lines(rows)
    (out_dir / "sweep.txt").write_text("".join(l + "\n" for l in lines))
    plots.save_sweep_figure(rows, out_dir / "sweep.png")
    for line in lines:
        print(line)
    print(f"wrote {out_dir / 'sweep.txt'} and {out_dir / 'sweep.png'}")
    return 0


def cmd_analyze(cfg: Config, args) -> int:
    agent = parse_agent_spec(args.agent, cfg)
    if args.record:
        size, moves, _ = parse_game_record(args.record)
        pos = Position(size)
        for m in moves[: args.ply if args.ply is not None else len(moves)]:
            pos = pos.play(m)
    else:
        pos = Position(cfg.board_size)
    if pos.is_terminal() is not None:
        print("position is terminal")
        return 0
    runtime = arena.Agent(agent, seed=cfg.seed)
    if agent.kind == "pv":
        tree = SearchTree(pos, runtime.evaluators[0], agent.c_puct)
        tree.run(agent.sims)
        root = tree.root
    else:
        dual = DualSearch(pos, runtime.evaluators[0], runtime.evaluators[1],
                          weights=agent.weights, c_puct=agent.c_puct)
        dual.run(agent.budgets, np.random.SeedSequence([cfg.seed]))
        root = dual.tree_s.root
    print(pos)
    order = np.argsort(-root.edge_n)
    print(f"{'move':>6} {'visits':>8} {'Q':>8} {'prior':>8}")
    for i in order[:10]:
        q = root.edge_w[i] / root.edge_n[i] if root.edge_n[i] else 0.0
        print(f"{point_to_gtp(root.moves[i], pos.size):>6} {int(root.edge_n[i]):>8} "
              f"{q:>8.3f} {root.priors[i]:>8.3f}")
    return 0


def cmd_gtp(cfg: Config, args) -> int:
    agent = parse_agent_spec(args.agent, cfg)
    session = GTPSession(agent, board_size=cfg.board_size, seed=cfg.seed)
    session.serve(sys.stdin, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nogozero", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("-o", "--override", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config value")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selfplay", help="generate self-play records")
    p.add_argument("--games", type=int, default=0)
    p.add_argument("--out", default="")

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--out", default="")
    p.add_argument("--resume", default="", help="checkpoint directory to resume from")

    p = sub.add_parser("match", help="head-to-head match")
    p.add_argument("agent_a")
    p.add_argument("agent_b")
    p.add_argument("--games", type=int, default=0)
    p.add_argument("--out", default="")

    p = sub.add_parser("sweep", help="budget allocation sweep")
    p.add_argument("--small", required=True, help="small evaluator spec")
    p.add_argument("--large", required=True, help="large evaluator spec")
    p.add_argument("--opponent", required=True, help="opponent agent spec")
    p.add_argument("--budgets", required=True, help="comma-separated budgets")
    p.add_argument("--ratios", default="0,1/4,2/4,3/4,1")
    p.add_argument("--games", type=int, default=0)
    p.add_argument("--out", default="")

    p = sub.add_parser("analyze", help="print search statistics for a position")
    p.add_argument("agent")
    p.add_argument("--record", default="", help="game record line to replay")
    p.add_argument("--ply", type=int, default=None, help="stop after this many moves")

    p = sub.add_parser("gtp", help="GTP protocol session on stdin/stdout")
    p.add_argument("agent")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.override)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    handlers = {
        "selfplay": cmd_selfplay,
        "train": cmd_train,
        "match": cmd_match,
        "sweep": cmd_sweep,
        "analyze": cmd_analyze,
        "gtp": cmd_gtp,
    }
    try:
        return handlers[args.command](cfg, args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime abort
        print(f"abort: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
