"""Command-line interface: gen, solve, train, audit, bench.

Exit codes: 0 success, 1 usage or input error, 2 numerical/solver failure
(including a failed acceptance criterion under ``bench``).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .explore import write_trajectories
from .game import GameError, MarkovGame, exact_nash
from .harness import (ALGORITHMS, ExperimentConfig, RunAborted, gen_random_game, gen_turn_based,
                      run_experiment, write_policy)
from .matrix import MatrixGameError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str):
    parts = [int(x) for x in text.split(",")]
    return parts[0] if len(parts) == 1 else parts


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mgx", description="Self-play learning in finite-horizon zero-sum Markov games.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("gen", help="write a random game as JSON")
    g.add_argument("--kind", choices=("random", "turn-based"), default="random")
    g.add_argument("--horizon", type=int, required=True)
    g.add_argument("--states", type=_int_list, default=2, help="int, or comma list of H+1 sizes")
    g.add_argument("--a", type=int, default=2, help="max-player actions")
    g.add_argument("--b", type=int, default=2, help="min-player actions")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--alpha", type=float, default=1.0, help="Dirichlet concentration")
    g.add_argument("--no-alternate", action="store_true", help="turn-based: random stage split")
    g.add_argument("-o", "--output", required=True)

    s = sub.add_parser("solve", help="exact Nash value per initial state")
    s.add_argument("game")
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--policy-out")
    s.add_argument("-o", "--output", help="also write the printed values to this file")

    t = sub.add_parser("train", help="run a learner and write the regret log")
    t.add_argument("game")
    _train_args(t)
    t.add_argument("--algo", choices=ALGORITHMS, default="vi-ulcb")

    a = sub.add_parser("audit", help="vi-ulcb run with the confidence-bound audit enabled")
    a.add_argument("game")
    _train_args(a)

    b = sub.add_parser("bench", help="run the acceptance configurations")
    b.add_argument("--only", type=lambda x: [int(i) for i in x.split(",")], help="comma list of criteria")
    return p


def _train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c", type=float, default=2.0, help="bonus constant")
    p.add_argument("--p", type=float, default=0.1, help="failure probability in the log factor")
    p.add_argument("--n0", type=int, default=50, help="vi-explore: episodes per reachability target")
    p.add_argument("--n-collect", type=int, default=1000, help="vi-explore: data-collection episodes")
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("-o", "--output", help="run CSV path")
    p.add_argument("--policy-out", help="final policy JSON path")
    p.add_argument("--trajectories-out", help="vi-explore: exploration data as JSON lines")
    p.add_argument("--snapshot-out", help="vi-ulcb: final learner state as JSON")


def _load(path: str) -> MarkovGame:
    try:
        return MarkovGame.load(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load game {path}: {exc}") from exc


def cmd_gen(args) -> int:
    if args.kind == "random":
        game = gen_random_game(args.horizon, args.states, args.a, args.b, args.seed, alpha=args.alpha)
    else:
        game = gen_turn_based(args.horizon, args.states, args.a, args.b, args.seed,
                              alternating=not args.no_alternate)
    game.save(args.output)
    return EXIT_OK


def cmd_solve(args) -> int:
    game = _load(args.game)
    pair, values = exact_nash(game, tol=args.tol)
    lines = [f"s1={s} value={float(v)!r}" for s, v in enumerate(values.V[0])]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    if args.policy_out:
        write_policy(args.policy_out, pair)
    return EXIT_OK


def _config(args, algorithm: str, audit: bool = False) -> ExperimentConfig:
    return ExperimentConfig(algorithm=algorithm, episodes=args.episodes, seed=args.seed, c=args.c,
                            failure_prob=args.p, n0=args.n0, n_collect=args.n_collect,
                            eval_every=args.eval_every, audit=audit)


def _run(args, cfg: ExperimentConfig, game: MarkovGame):
    try:
        cfg.validate(game)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        log = run_experiment(cfg, game)
    except RunAborted as exc:
        if args.output:
            exc.partial.write_csv(args.output)
        raise
    if args.output:
        log.write_csv(args.output)
    if args.policy_out and log.final_policies is not None:
        write_policy(args.policy_out, log.final_policies)
    if args.trajectories_out and log.dataset is not None:
        write_trajectories(args.trajectories_out, log.dataset)
    if args.snapshot_out and log.snapshot is not None:
        Path(args.snapshot_out).write_text(json.dumps(log.snapshot) + "\n", encoding="utf-8")
    return log


def cmd_train(args) -> int:
    game = _load(args.game)
    log = _run(args, _config(args, args.algo), game)
    print(f"episodes={len(log.records)} cumulative_regret={log.cumulative_regret!r}")
    return EXIT_OK


def cmd_audit(args) -> int:
    game = _load(args.game)
    log = _run(args, _config(args, "vi-ulcb", audit=True), game)
    fractions = np.array([r.audit_fraction for r in log.records])
    print(f"episodes={len(fractions)} mean_audit_fraction={fractions.mean():.6f} "
          f"min_audit_fraction={fractions.min():.6f} cumulative_regret={log.cumulative_regret!r}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_all

    results = run_all(args.only)
    for c in results:
        print(c.line(), flush=True)
    return EXIT_OK if all(c.passed for c in results) else EXIT_NUMERIC


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "train": cmd_train, "audit": cmd_audit, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, GameError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MatrixGameError, RunAborted, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
