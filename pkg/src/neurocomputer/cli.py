"""Command-line harness: training runs, evaluations, transfers, ablations.

Every command is reproducible from its config and seed alone; per-iteration
logs are bit-deterministic (wall-clock timings live only in summary.json).

Run artifacts inside --out:
    run.jsonl / run.csv   one record per training iteration
    events.jsonl          level-solved / restart / budget events
    genome_levelK.bin     genome checkpoint (JSON payload) per solved level
    genome_final.bin      genome at the end of the run
    summary.json          effective config, its hash, outcomes, timings
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .data_modules import oracle_modules
from .domains import (
    TaskInstance,
    deepest_task,
    feasible_levels,
    make_domain,
    oracle_trace,
    sample_task,
    task_with_explore_steps,
    trace_tree_dot,
)
from .engine import (
    ComputerEngine,
    EngineConfig,
    GenomePolicy,
    ReferenceProgram,
    records_to_jsonl,
)
from .evolution import MAX_FITNESS, NesConfig, train_run
from .module_training import MODULE_IDS, train_data_module
from .nets import save_net

REMAP_WALL_AGENT = (0, 3, 2, 1)  # the agent glyph now encodes a wall

TRANSFER_TARGETS = {
    "remap": dict(domain="sokoban", size=6, perm=REMAP_WALL_AGENT),
    "puzzle": dict(domain="puzzle"),
    "manipulation": dict(domain="manipulation"),
    "sokoban8": dict(domain="sokoban", size=8),
}


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_preset(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def build_domain(args_domain: str, size: int | None, perm) -> object:
    return make_domain(args_domain, size=size, perm=tuple(perm) if perm else None)


def engine_config_from(cfg: dict) -> EngineConfig:
    return EngineConfig(
        constrained_head=cfg.get("constrained_head", True),
        usage_linkage=cfg.get("usage_linkage", True),
        hard_attention=cfg.get("hard_attention", True),
        extra_free_head=cfg.get("extra_free_head", False),
        max_steps=cfg.get("max_steps", 20_000),
    )


def nes_config_from(cfg: dict) -> NesConfig:
    fields = {k: cfg[k] for k in (
        "population", "sigma", "learning_rate", "weight_decay", "minibatch",
        "restart_window", "budget", "max_level", "solve_streak",
        "buffer_capacity", "buffer_share", "old_level_share",
        "buffer_clear_streak", "restarts_enabled", "bad_memories_enabled",
    ) if k in cfg}
    return NesConfig(**fields)


def load_policy(genome_path: str | None):
    if genome_path is None:
        return ReferenceProgram()
    policy = GenomePolicy()
    policy.view.load_file(genome_path)
    return policy


def parse_levels(spec: str, max_level: int = 21) -> list[int]:
    if spec == "all":
        return list(range(1, max_level + 1))
    levels = []
    for part in spec.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            levels.extend(range(int(lo), int(hi) + 1))
        else:
            levels.append(int(part))
    return levels


# ---- train ---------------------------------------------------------------------


def write_run_outputs(out: Path, result, effective: dict, runtime: float,
                      policy) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run.jsonl", "w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec.to_json_dict()) + "\n")
    columns = ["iteration", "lineage", "level", "center_fitness", "updated",
               "streak", "buffer_size", "pop_mean", "pop_max"]
    with open(out / "run.csv", "w") as fh:
        fh.write(",".join(columns) + "\n")
        for rec in result.records:
            row = rec.to_json_dict()
            fh.write(",".join("" if row[c] is None else str(row[c])
                              for c in columns) + "\n")
    with open(out / "events.jsonl", "w") as fh:
        for event in result.events:
            fh.write(json.dumps(event) + "\n")
    for level, genome in result.checkpoints.items():
        policy.set_genome(genome)
        policy.view.save(out / f"genome_level{level}.bin")
    policy.set_genome(result.genome)
    policy.view.save(out / "genome_final.bin")
    summary = {
        "config": effective,
        "config_hash": config_hash(effective),
        "iterations": len(result.records),
        "final_level": result.curriculum.state.level,
        "levels_solved": [e["level"] for e in result.events
                          if e["type"] == "level_solved"],
        "restarts": sum(1 for e in result.events if e["type"] == "restart"),
        "lineages": result.curriculum.state.lineage + 1,
        "runtime_sec": runtime,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)


def cmd_train(args) -> int:
    preset = load_preset(args.preset)
    effective = dict(preset)
    effective.update({k: v for k, v in vars(args).items()
                      if k in ("kind", "domain", "seed", "budget", "size") and v is not None})
    if args.budget is not None:
        effective["budget"] = args.budget
    for toggle in ("constrained_head", "usage_linkage", "hard_attention",
                   "extra_free_head", "restarts_enabled", "bad_memories_enabled"):
        flag = getattr(args, toggle, None)
        if flag is not None:
            effective[toggle] = flag
    kind = effective.get("kind", "search")
    seeds = effective.get("seeds", [effective.get("seed", 0)])
    if args.seed is not None:
        seeds = [args.seed]
    domain = build_domain(effective.get("domain", "sokoban"),
                          effective.get("size"), effective.get("perm"))
    exit_code = 0
    for seed in seeds:
        engine = ComputerEngine(domain, oracle_modules(domain),
                                engine_config_from(effective))
        policy = GenomePolicy()
        nes_cfg = nes_config_from(effective)
        out = Path(args.out) / (f"seed{seed}" if len(seeds) > 1 else "")
        started = time.time()
        result = train_run(engine, policy, kind, nes_cfg, seed)
        write_run_outputs(out, result, {**effective, "seed": seed},
                          time.time() - started, policy)
        final_level = result.curriculum.state.level
        print(f"seed {seed}: {len(result.records)} iterations, "
              f"reached level {final_level}, "
              f"{sum(1 for e in result.events if e['type'] == 'restart')} restarts")
    return exit_code


# ---- eval / transfer --------------------------------------------------------------


def evaluate_policy(domain, policy, kind: str, levels, samples: int, seed: int,
                    max_steps: int = 20_000) -> dict:
    engine = ComputerEngine(domain, oracle_modules(domain),
                            EngineConfig(max_steps=max_steps))
    rng = np.random.default_rng(seed)
    levels = [lvl for lvl in levels if lvl in set(feasible_levels(domain, max(levels)))]
    per_level = {lvl: [0, 0] for lvl in levels}
    for i in range(samples):
        level = levels[i % len(levels)]
        task = sample_task(rng, level, domain, kind=kind)
        trace = oracle_trace(domain, task)
        res = engine.run_episode(policy, task, mode="autonomous", trace=trace)
        per_level[level][1] += 1
        per_level[level][0] += int(res.exact_match(trace))
    total_ok = sum(ok for ok, _ in per_level.values())
    return {
        "kind": kind,
        "samples": samples,
        "solved": total_ok,
        "accuracy": total_ok / samples if samples else 0.0,
        "per_level": {str(lvl): {"solved": ok, "samples": n}
                      for lvl, (ok, n) in sorted(per_level.items())},
    }


def cmd_eval(args) -> int:
    domain = build_domain(args.domain, args.size, None)
    policy = load_policy(args.genome)
    levels = parse_levels(args.levels)
    report = evaluate_policy(domain, policy, args.kind, levels, args.samples,
                             args.seed, max_steps=args.max_steps)
    report["policy"] = args.genome or "reference"
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "eval.json", "w") as fh:
            json.dump(report, fh, indent=2)
    return 0


def cmd_transfer(args) -> int:
    target = TRANSFER_TARGETS[args.target]
    domain = build_domain(target["domain"], target.get("size"), target.get("perm"))
    policy = load_policy(args.genome)
    levels = parse_levels(args.levels)
    report = evaluate_policy(domain, policy, args.kind, levels, args.samples,
                             args.seed)
    report["target"] = args.target
    report["policy"] = args.genome or "reference"
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / f"transfer_{args.target}.json", "w") as fh:
            json.dump(report, fh, indent=2)
    return 0


# ---- scale test ---------------------------------------------------------------------


def cmd_scale_test(args) -> int:
    domain = build_domain(args.domain, args.size, None)
    rng = np.random.default_rng(args.seed)
    min_explore = args.min_steps
    scan = max(int(min_explore * 1.1), min_explore + 400)
    task = deepest_task(rng, domain, min_explore, scan, kind=args.kind)
    trace = oracle_trace(domain, task, max_nodes=10 ** 9)
    policy = load_policy(args.genome)
    engine = ComputerEngine(domain, oracle_modules(domain),
                            EngineConfig(max_steps=trace.total_steps + 16))
    started = time.time()
    res = engine.run_episode(policy, task, mode="autonomous", trace=trace)
    ok = res.exact_match(trace)
    report = {
        "level": trace.level,
        "explore_steps": trace.t_explore,
        "backtrack_steps": trace.t_backtrack,
        "total_steps": trace.total_steps,
        "executed_steps": res.steps,
        "termination": res.termination,
        "exact": ok,
        "runtime_sec": round(time.time() - started, 2),
    }
    print(json.dumps(report, indent=2))
    return 0 if ok else 1


# ---- oracle inspection -----------------------------------------------------------------


def cmd_oracle(args) -> int:
    domain = build_domain(args.domain, args.size, None)
    rng = np.random.default_rng(args.seed)
    if args.explore_steps:
        task = task_with_explore_steps(rng, domain, args.explore_steps, kind=args.kind)
    else:
        task = sample_task(rng, args.level, domain, kind=args.kind)
    trace = oracle_trace(domain, task, keep_tree=True)
    print(f"level {trace.level}: {trace.t_explore} explore steps, "
          f"{trace.t_backtrack} backtrack steps, {trace.total_steps} total")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "task.json", "w") as fh:
            json.dump(task.to_json_dict(), fh)
        with open(out / "trace.json", "w") as fh:
            json.dump(trace.to_json_dict(), fh)
        with open(out / "tree.dot", "w") as fh:
            fh.write(trace_tree_dot(trace, domain.op_names))
        if args.attention:
            policy = load_policy(args.genome)
            engine = ComputerEngine(domain, oracle_modules(domain), EngineConfig())
            res = engine.run_episode(policy, task, mode="autonomous", trace=trace,
                                     record_steps=True)
            with open(out / "steps.jsonl", "w") as fh:
                fh.write(records_to_jsonl(res.records))
        print(f"artifacts written to {out}")
    return 0


# ---- data-module training ------------------------------------------------------------------


def cmd_train_data(args) -> int:
    domain = build_domain(args.domain, args.size,
                          REMAP_WALL_AGENT if args.remap else None)
    modules = list(MODULE_IDS) if args.module == "all" else [args.module]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok = True
    for module_id in modules:
        rng = np.random.default_rng(args.seed)
        module, report = train_data_module(module_id, domain, rng,
                                           budget=args.budget,
                                           holdout=args.holdout)
        tag = f"{domain.name}{'_remap' if args.remap else ''}"
        for net_name, net in _module_nets(module_id, module):
            save_net(net, out / f"{tag}_{module_id}_{net_name}.json")
        with open(out / f"{tag}_{module_id}_report.json", "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2)
        status = "ok" if report.success else "FAILED"
        print(f"{module_id}: {status} holdout={report.holdout_accuracy:.4f} "
              f"steps={report.steps_used}/{report.budget}")
        ok = ok and report.success
    return 0 if ok else 1


def _module_nets(module_id: str, module):
    if module_id == "input":
        return [("net", module.net)]
    if module_id == "transform_d":
        return [("net", module.net)]
    if module_id == "alu":
        return [("control", module.control_net), ("action", module.action_net)]
    return [("control", module.control_net), ("data", module.data_net)]


# ---- argument parsing ---------------------------------------------------------------------


def _add_common_domain(p, default="sokoban"):
    p.add_argument("--domain", default=default,
                   choices=["sokoban", "puzzle", "manipulation"])
    p.add_argument("--size", type=int, default=None, help="grid size (sokoban)")
    p.add_argument("--seed", type=int, default=None)


def _bool_flag(p, name, dest):
    group = p.add_mutually_exclusive_group()
    group.add_argument(f"--{name}", dest=dest, action="store_true", default=None)
    group.add_argument(f"--no-{name}", dest=dest, action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neurocomputer",
        description="dual-memory neural computer: training and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="curriculum/NES training run")
    _add_common_domain(p)
    p.add_argument("--kind", choices=["search", "plan"], default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--preset", default=None)
    p.add_argument("--out", required=True)
    for name, dest in (("constrained-head", "constrained_head"),
                       ("usage-linkage", "usage_linkage"),
                       ("hard-attention", "hard_attention"),
                       ("extra-free-head", "extra_free_head"),
                       ("restarts", "restarts_enabled"),
                       ("bad-memories", "bad_memories_enabled")):
        _bool_flag(p, name, dest)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frozen-policy accuracy over sampled tasks")
    _add_common_domain(p)
    p.add_argument("--kind", choices=["search", "plan"], default="plan")
    p.add_argument("--genome", default=None, help="genome file; omit for the reference program")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--levels", default="all")
    p.add_argument("--max-steps", type=int, default=20_000)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval, seed=0)

    p = sub.add_parser("transfer", help="evaluate on a new representation or domain")
    p.add_argument("--target", required=True, choices=sorted(TRANSFER_TARGETS))
    p.add_argument("--kind", choices=["search", "plan"], default="plan")
    p.add_argument("--genome", default=None)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--levels", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("scale-test", help="solve one very deep task exactly")
    _add_common_domain(p)
    p.add_argument("--kind", choices=["search", "plan"], default="plan")
    p.add_argument("--min-steps", type=int, default=10_000)
    p.add_argument("--genome", default=None)
    p.set_defaults(func=cmd_scale_test, seed=0)

    p = sub.add_parser("oracle", help="print/export an oracle trace and tree")
    _add_common_domain(p)
    p.add_argument("--kind", choices=["search", "plan"], default="plan")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--explore-steps", type=int, default=None,
                   help="construct a task with exactly this many explore steps")
    p.add_argument("--genome", default=None)
    p.add_argument("--attention", action="store_true",
                   help="also export per-step attention records")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle, seed=0)

    p = sub.add_parser("train-data", help="supervised training of data modules")
    _add_common_domain(p)
    p.add_argument("--module", default="all", choices=list(MODULE_IDS) + ["all"])
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--holdout", type=int, default=10_000)
    p.add_argument("--remap", action="store_true",
                   help="train for the wall/agent-swapped representation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_data, seed=0)

    p = sub.add_parser("ablate", help="training run with architecture toggles (alias of train)")
    _add_common_domain(p)
    p.add_argument("--kind", choices=["search", "plan"], default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--preset", default=None)
    p.add_argument("--out", required=True)
    for name, dest in (("constrained-head", "constrained_head"),
                       ("usage-linkage", "usage_linkage"),
                       ("hard-attention", "hard_attention"),
                       ("extra-free-head", "extra_free_head"),
                       ("restarts", "restarts_enabled"),
                       ("bad-memories", "bad_memories_enabled")):
        _bool_flag(p, name, dest)
    p.set_defaults(func=cmd_train)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
