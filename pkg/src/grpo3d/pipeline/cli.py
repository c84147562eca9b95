"""Command-line entry point: ``grpo3d <command> [--config C] [--seed S] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..cot_filter import OracleError
from ..grpo import NonFiniteUpdate
from . import runner
from .config import ORACLES, VIEW_STRATEGIES, RunConfig

log = logging.getLogger("grpo3d")

EXIT_INPUT = 2  # missing or invalid inputs / config
EXIT_QUARANTINE = 3  # filter ran but some records could not be checked
EXIT_NUMERIC = 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with RunConfig fields")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="run directory (default from config)")
    common.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="grpo3d", description="Synthetic 3D-QA data, CoT filtering, SFT + GRPO training.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate scenes, questions and raw CoT records")

    f = sub.add_parser("filter", parents=[common], help="filter raw CoT records")
    f.add_argument("--oracle", choices=ORACLES, help="answer oracle (default: echo)")
    f.add_argument("--endpoint", help="remote oracle base URL")
    f.add_argument("--workers", type=int, help="concurrent remote oracle requests")

    sv = sub.add_parser("select-views", parents=[common], help="fit fusion weights and pick views per question")
    sv.add_argument("--strategy", choices=VIEW_STRATEGIES)

    sub.add_parser("train-sft", parents=[common], help="cold-start SFT on accepted CoT records")
    rl = sub.add_parser("train-rl", parents=[common], help="GRPO training from an SFT checkpoint")
    rl.add_argument("--checkpoint", type=Path, help="SFT checkpoint (default: <out>/sft_policy.json)")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a policy on the held-out split")
    ev.add_argument("--checkpoint", type=Path, help="policy checkpoint (default: RL, else SFT)")

    a = sub.add_parser("run-all", parents=[common], help="every stage in order")
    a.add_argument("--oracle", choices=ORACLES)
    a.add_argument("--endpoint")

    ab = sub.add_parser("ablate", parents=[common], help="reward or view-strategy ablation over seeds")
    ab.add_argument("kind", choices=("rewards", "views"))
    ab.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    ab.add_argument("--layout", choices=("free", "floor"))
    return p


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = str(args.out)
    if args.no_figures:
        changes["figures"] = False
    for name, field in (("oracle", "oracle"), ("endpoint", "endpoint"), ("workers", "oracle_workers"),
                        ("strategy", "view_strategy"), ("layout", "layout")):
        value = getattr(args, name, None)
        if value is not None:
            changes[field] = value
    return cfg.replace(**changes)


def _run(args: argparse.Namespace, cfg: RunConfig) -> int:
    cmd = args.command
    if cmd == "gen-data":
        data = runner.gen_data(cfg)
        print(f"scenes={len(data.scenes)} questions={len(data.qa)} cot={len(data.cot)} out={cfg.out_dir}")
    elif cmd in ("filter", "run-all"):
        if cmd == "run-all":
            runner.gen_data(cfg)
        result = runner.run_filter(cfg)
        r = result.report
        print(f"total={r.total} accepted={r.accepted} rejected={r.rejected} malformed={r.malformed} "
              f"quarantined={r.quarantined} perRule={json.dumps(r.per_rule, sort_keys=True)}")
        if result.quarantine:
            print(f"error: {r.quarantined} records quarantined (oracle failures), see "
                  f"{cfg.out_dir / runner.COT_QUARANTINE}", file=sys.stderr)
            return EXIT_QUARANTINE
        if cmd == "run-all":
            runner.select_views(cfg)
            runner.train_sft_stage(cfg)
            runner.train_rl_stage(cfg)
            _print_metrics(runner.eval_stage(cfg))
    elif cmd == "select-views":
        task = runner.select_views(cfg)
        w = task.weights
        print(f"strategy={cfg.view_strategy} w_text={w.w_text:.4f} w_coverage={w.w_coverage:.4f} "
              f"w_joint={w.w_joint:.4f} out={cfg.out_dir / runner.VIEWS_FILE}")
    elif cmd == "train-sft":
        runner.train_sft_stage(cfg)
        print(f"checkpoint={cfg.out_dir / runner.SFT_CKPT}")
    elif cmd == "train-rl":
        runner.train_rl_stage(cfg, args.checkpoint)
        print(f"checkpoint={cfg.out_dir / runner.RL_CKPT} log={cfg.out_dir / runner.RL_LOG}")
    elif cmd == "eval":
        _print_metrics(runner.eval_stage(cfg, args.checkpoint))
    elif cmd == "ablate":
        seeds = list(range(cfg.seed, cfg.seed + args.seeds))
        results = runner.ablate(cfg, args.kind, seeds)
        print("config,median," + ",".join(f"seed{s}" for s in seeds))
        for name, vals in results.items():
            vals_s = ",".join(f"{v:.4f}" for v in vals)
            print(f"{name},{sorted(vals)[len(vals) // 2]:.4f},{vals_s}")
    return 0


def _print_metrics(m: dict) -> None:
    print(f"answerExactMatchRate={m['answerExactMatchRate']:.4f} meanIoU={m['meanIoU']:.4f} "
          f"meanReward={m['meanReward']:.4f} contexts={m['nContexts']}")


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return _run(args, cfg)
    except (runner.StageError, FileNotFoundError, ValueError, OracleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NonFiniteUpdate as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
