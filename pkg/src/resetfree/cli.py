"""Command line entry point: ``resetfree {train,evaluate,export-curriculum,oracle-map}``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .discriminator import GateThresholds
from .evaluation import evaluate, export_curriculum, monte_carlo_success_map, spearman
from .orchestrator import ALGORITHMS, RunConfig, config_from_mapping, parse_config_text, train


def _cmd_train(args) -> int:
    values = parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.algo:
        values["algorithm"] = args.algo
    if args.seed is not None:
        values["seed"] = str(args.seed)
    for item in args.set or []:
        key, _, value = item.partition("=")
        values[key.strip()] = value.strip()
    config = config_from_mapping(values)
    metrics, trainer = train(config, args.out)
    row = metrics.rows[-1]
    print(json.dumps({"env_steps": row["env_steps"], "episodes": row["episodes"],
                      "manual_resets": row["manual_resets"],
                      "success_rate": row["success_rate"],
                      "average_steps": row["average_steps"],
                      "manual_resets_at_convergence": metrics.manual_resets_at_convergence()}))
    return 0


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    report = evaluate(ckpt.forward_agent, ckpt.spec, args.episodes, rng, ckpt.config.t_forward)
    print(json.dumps({"episodes": report.n_episodes, "success_rate": report.success_rate,
                      "average_steps": report.average_steps}))
    return 0


def _cmd_export(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.disc is None or ckpt.reset_agent is None:
        print("checkpoint has no discriminator / reset policy (algorithm 'ours' only)",
              file=sys.stderr)
        return 2
    cfg = ckpt.config
    prior = None
    if cfg.prior_correction:
        fwd = ckpt.manifest["buffers"]["forward"]
        prior = (fwd["positives"], fwd["negatives"])
    snap = export_curriculum(ckpt.disc, ckpt.reset_agent, ckpt.spec, args.samples,
                             np.random.default_rng(args.seed), ckpt.manifest["env_steps"],
                             GateThresholds(cfg.lambda_low, cfg.lambda_high), prior=prior)
    snap.write(args.out)
    print(json.dumps({"rows": len(snap.probabilities), "allowed": int(snap.allowed.sum())}))
    return 0


def _cmd_oracle(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    omap = monte_carlo_success_map(ckpt.forward_agent, ckpt.spec, args.grid, args.rollouts,
                                   np.random.default_rng(args.seed), ckpt.config.t_forward,
                                   ckpt.disc, ckpt.reset_agent)
    omap.write(args.out)
    summary = {"points": len(omap.fractions), "mean_success": float(omap.fractions.mean())}
    if omap.estimates is not None:
        rho = spearman(omap.estimates, omap.fractions)
        summary["spearman"] = None if math.isnan(rho) else rho
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resetfree", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="success rate / average steps of a saved forward policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("export-curriculum", help="write a curriculum snapshot CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("oracle-map", help="Monte Carlo success map of a saved forward policy")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", type=int, default=20)
    p.add_argument("--rollouts", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
