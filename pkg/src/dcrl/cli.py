"""Command-line entry point.

Subcommands share ``--config PATH``, ``--out DIR``, ``--seed N`` and
``--slots N``. Every run writes the effective config to ``DIR/config.txt``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .cmab import CmabState, pretrain
from .config import ConfigError, RunConfig, dump_config, parse_config, validate
from .ddqn import Learner, QNetwork
from .orchestrator import (POLICY_NAMES, CompareSettings, Policy, compare,
                           run_dcrl_training, run_episode, write_slot_log)
from .rng import Stream, derive_seed
from .scene_trace import (generate_bandwidth_trace, generate_scene_trace, read_trace,
                          split_trace, write_trace)

log = logging.getLogger("dcrl")

TRACE_FILE = "trace.csv"
PRETRAINED_CMAB = "cmab_pretrained.json"
DDQN_CHECKPOINT = "ddqn.json"
CMAB_CHECKPOINT = "cmab.json"


class CliError(Exception):
    pass


def _effective(args) -> RunConfig:
    cfg = parse_config(args.config)
    run = cfg.run
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.slots is not None:
        run = replace(run, slots=args.slots)
    if args.out is not None:
        run = replace(run, out=args.out)
    cfg = replace(cfg, run=run)
    validate(cfg)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    return out


def _require(*paths: Path) -> None:
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise CliError("missing input: " + ", ".join(missing))


def build_trace(cfg: RunConfig):
    seed = cfg.run.seed
    scene = generate_scene_trace(cfg.scene, seed, cfg.run.slots)
    bw = cfg.bandwidth
    bandwidth = generate_bandwidth_trace(bw.rho, bw.sigma, bw.b_min,
                                         derive_seed(seed, "bandwidth"), cfg.run.slots)
    return scene, bandwidth


def _trace_path(args, cfg) -> Path:
    return Path(args.trace) if getattr(args, "trace", None) else Path(cfg.run.out) / TRACE_FILE


def cmd_gen_trace(args, cfg):
    out = _out_dir(cfg)
    scene, bandwidth = build_trace(cfg)
    write_trace(scene, bandwidth, out / TRACE_FILE)
    log.info("wrote %d slots to %s", len(scene), out / TRACE_FILE)


def cmd_pretrain_cmab(args, cfg):
    trace = _trace_path(args, cfg)
    _require(trace)
    out = _out_dir(cfg)
    (train_scene, train_bw), _ = split_trace(*read_trace(trace), cfg.run.train_fraction)
    state = pretrain(train_scene, train_bw, cfg.env, cfg.cmab.pretrain_slots,
                     derive_seed(cfg.run.seed, "pretrain"), cfg.cmab.initial_state(cfg.bandwidth.rho))
    state.save(out / PRETRAINED_CMAB)
    log.info("pretrained CMAB over %d slots -> %s", cfg.cmab.pretrain_slots, out / PRETRAINED_CMAB)


def cmd_train(args, cfg):
    trace = _trace_path(args, cfg)
    cmab_path = Path(cfg.run.out) / PRETRAINED_CMAB
    _require(trace, cmab_path)
    out = _out_dir(cfg)
    (train_scene, train_bw), _ = split_trace(*read_trace(trace), cfg.run.train_fraction)
    learner, cmab, training = run_dcrl_training(
        train_scene, train_bw, cfg.env, cfg.ddqn_hyper(), CmabState.load(cmab_path),
        cfg.run.loop, cfg.run.seed)
    learner.net.save(out / DDQN_CHECKPOINT)
    cmab.save(out / CMAB_CHECKPOINT)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pass", "cum_reward", "processing_rate", "mean_loss"])
    for k, (r, q, l) in enumerate(zip(training.pass_rewards, training.pass_processing_rates,
                                       training.pass_mean_losses)):
        w.writerow([k, repr(r), repr(q), repr(l)])
    (out / "training_log.csv").write_text(buf.getvalue())
    log.info("trained %d passes -> %s, %s", cfg.run.loop, out / DDQN_CHECKPOINT, out / CMAB_CHECKPOINT)


def cmd_eval(args, cfg):
    trace = _trace_path(args, cfg)
    ddqn_path = Path(cfg.run.out) / DDQN_CHECKPOINT
    cmab_path = Path(cfg.run.out) / CMAB_CHECKPOINT
    _require(trace, ddqn_path, cmab_path)
    out = _out_dir(cfg)
    _, (test_scene, test_bw) = split_trace(*read_trace(trace), cfg.run.train_fraction)
    hyper = cfg.ddqn_hyper()
    learner = Learner(4, 5, hyper, Stream(0))
    learner.net = QNetwork.load(ddqn_path)
    policy = Policy("DCRL", "ddqn", "cmab", learner=learner, cmab=CmabState.load(cmab_path))
    metrics = run_episode(policy, test_scene, test_bw, cfg.env, cfg.run.seed, hyper)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "seed", "cum_reward", "processing_rate", "mean_accuracy_proxy",
                "mean_latency", "utility"])
    w.writerow(["DCRL", cfg.run.seed, repr(metrics.cumulative_reward), repr(metrics.processing_rate),
                repr(metrics.mean_accuracy), repr(metrics.mean_latency), repr(metrics.utility)])
    (out / "eval.csv").write_text(buf.getvalue())
    write_slot_log(metrics.log, out / "eval_slots.csv")
    log.info("processing rate %.3f, mean accuracy (mAP proxy) %.3f, mean latency %.3f s",
             metrics.processing_rate, metrics.mean_accuracy, metrics.mean_latency)


def cmd_compare(args, cfg):
    trace = Path(args.trace) if args.trace else None
    if trace is not None:
        _require(trace)
    out = _out_dir(cfg)
    scene, bandwidth = read_trace(trace) if trace else build_trace(cfg)
    train, test = split_trace(scene, bandwidth, cfg.run.train_fraction)
    policies = args.policies.split(",") if args.policies else list(POLICY_NAMES)
    settings = CompareSettings(loop=cfg.run.loop, pretrain_slots=cfg.cmab.pretrain_slots,
                               workers=cfg.run.workers)
    table = compare(policies, train, test, cfg.env, cfg.ddqn_hyper(), cfg.run.seeds, settings,
                    cfg.cmab.initial_state(cfg.bandwidth.rho))
    table.write_csv(out / "comparison.csv")
    agg = table.aggregate()
    for name in table.policies():
        m = agg[name]
        log.info("%-5s reward %.2f  rate %.3f  acc(mAP proxy) %.3f  latency %.4f s  utility %.3f",
                 name, m["cumulative_reward"][0], m["processing_rate"][0], m["mean_accuracy"][0],
                 m["mean_latency"][0], m["utility"][0])


def cmd_dump_config(args, cfg):
    text = dump_config(cfg)
    sys.stdout.write(text)
    if args.out is not None:
        _out_dir(cfg)


COMMANDS = {
    "gen-trace": (cmd_gen_trace, "generate a scene+bandwidth trace CSV"),
    "pretrain-cmab": (cmd_pretrain_cmab, "pretrain the configuration bandits (Offload-ROI only)"),
    "train": (cmd_train, "joint DDQN/CMAB training on the train split"),
    "eval": (cmd_eval, "evaluate trained agents on the test split"),
    "compare": (cmd_compare, "train and evaluate DCRL and the four baselines over seeds"),
    "dump-config": (cmd_dump_config, "print the effective configuration"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory (default: run.out)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--slots", type=int, help="override run.slots (trace length)")
        if name in ("pretrain-cmab", "train", "eval", "compare"):
            p.add_argument("--trace", help="trace CSV (default: OUT/trace.csv; compare generates one)")
        if name == "compare":
            p.add_argument("--policies", help=f"comma list, default {','.join(POLICY_NAMES)}")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(message)s")
    handler, _ = COMMANDS[args.command]
    try:
        cfg = _effective(args)
        handler(args, cfg)
    except (CliError, ConfigError, ValueError, OSError) as exc:
        print(f"dcrl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
