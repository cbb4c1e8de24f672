"""Command line shell: serve the teaching service, import demos, train, roll
out policies, run experiment campaigns, and audit archives."""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import scenarios
from .experiments import ExperimentSpec, run_experiment
from .persistence import load_artifact, read_jsonl, save_artifact
from .policy import MudsPolicy, PolicyConfig
from .simulator import Scenario, compute_ade
from .teaching import (
    Demonstration,
    SessionArchive,
    record_demo,
    replay_archive,
    run_round,
    train_policy,
)

BUILTIN_SCENARIOS = {
    "curved": scenarios.curved_scenario,
    "two_frame": scenarios.two_frame_scenario,
}


def _data_dir(args) -> Path:
    return Path(args.data_dir or os.environ.get("TEACH_DATA_DIR", "./teach-data"))


def _load_scenario(ref: str) -> Scenario:
    if ref in BUILTIN_SCENARIOS:
        return BUILTIN_SCENARIOS[ref]()
    return Scenario.from_payload(load_artifact(ref, kind="scenario"))


def cmd_serve(args):
    from .service import serve
    print(f"teaching service on ws://{args.host}:{args.port} "
          f"(data dir {_data_dir(args)})")
    asyncio.run(serve(host=args.host, port=args.port, data_dir=_data_dir(args),
                      realtime=not args.fast))
    return 0


def cmd_demo_import(args):
    header, rows = read_jsonl(args.file)
    times = np.array([r["t"] for r in rows])
    positions = np.array([r["position"] for r in rows])
    angles = np.array([r["angles"] for r in rows])
    widths = np.array([r["width"] for r in rows])
    demo = record_demo(times, positions, angles, widths,
                       record_rate=args.record_rate)
    out = args.out or str(Path(args.file).with_suffix(".demo.json"))
    save_artifact(out, "demonstration", demo.to_payload())
    print(f"imported {demo.n} samples over {demo.duration:.2f} s -> {out}")
    return 0


def cmd_train(args):
    payloads = [load_artifact(path, kind="demonstration") for path in args.demos]
    demos = [Demonstration.from_payload(p) for p in payloads]
    config = PolicyConfig(**json.loads(args.config)) if args.config else PolicyConfig()
    frames = None
    if args.two_frame:
        frames = (scenarios.TF_OBJECT, scenarios.TF_GOAL)
    policy = train_policy(demos, config=config, frames=frames,
                          bounds=scenarios.bench_delta_bounds(), seed=args.seed)
    save_artifact(args.out, "policy", policy.to_payload())
    print(f"trained {len(policy.phases)} phase(s) from {len(demos)} demo(s) -> {args.out}")
    return 0


def cmd_rollout(args):
    policy_payload = load_artifact(args.policy, kind="policy")
    scenario = _load_scenario(args.scenario)
    demo = None
    if args.demo:
        demo = Demonstration.from_payload(load_artifact(args.demo, kind="demonstration"))
    outcomes = []
    for i in range(args.n):
        seed = args.seed + i
        policy = MudsPolicy.from_payload(policy_payload)
        world = scenario.make_world(seed=seed)
        rec = run_round(policy, world, timeout=scenario.timeout, demo=demo)
        ade = compute_ade(rec.positions(), demo.positions) if demo else float("nan")
        outcomes.append(rec.outcome)
        print(f"seed {seed}: {rec.outcome:<12} t={rec.execution_time:<8} ade={ade:.4f}")
        if args.out:
            from .persistence import checksum, write_jsonl
            header = {"scenario": scenario.to_payload(), "seed": seed,
                      "config_hash": checksum(scenario.to_payload())}
            write_jsonl(Path(args.out) / f"rollout-{seed}.jsonl", header,
                        [{"state": s} for s in rec.states]
                        + [{"sim_event": e} for e in rec.events]
                        + [{"outcome": rec.outcome,
                            "execution_time": rec.execution_time}])
    succ = sum(o == "Success" for o in outcomes)
    print(f"success {succ}/{len(outcomes)}")
    return 0


def cmd_experiment(args):
    if Path(args.spec).exists():
        spec = ExperimentSpec.from_payload(load_artifact(args.spec, kind="experiment_spec"))
    else:
        spec = ExperimentSpec(name=args.spec, repetitions=args.repetitions)
    out = args.out or str(_data_dir(args) / f"{spec.name}-report.jsonl")
    records, summary = run_experiment(spec, output=out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"report -> {out}")
    return 0


def cmd_replay(args):
    payload = load_artifact(args.archive, kind="session_archive")
    archive = SessionArchive.from_payload(payload)
    replayed = replay_archive(archive)
    live = json.dumps(archive.final_policy_payload, sort_keys=True)
    redone = json.dumps(replayed.to_payload(), sort_keys=True)
    if live == redone:
        print(f"replay OK: {len(list(archive.correction_stream()))} corrections "
              f"over {archive.timers['rounds']} rounds reproduce the final policy "
              f"bit-identically")
        return 0
    print("replay MISMATCH: the archive does not reproduce its final policy")
    return 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="teach",
        description="GP motion policies taught from demonstrations and corrections")
    parser.add_argument("--data-dir", default=None,
                        help="artifact directory (or TEACH_DATA_DIR)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the websocket teaching service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--fast", action="store_true",
                   help="run control loops as fast as possible (headless)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("demo", help="demonstration tools")
    demo_sub = p.add_subparsers(dest="demo_command", required=True)
    pi = demo_sub.add_parser("import", help="import a raw pose stream (jsonl)")
    pi.add_argument("file")
    pi.add_argument("--record-rate", type=float, default=10.0)
    pi.add_argument("--out", default=None)
    pi.set_defaults(func=cmd_demo_import)

    p = sub.add_parser("train", help="fit a policy from demonstrations")
    p.add_argument("demos", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--two-frame", action="store_true")
    p.add_argument("--config", default=None, help="PolicyConfig overrides as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="execute a policy on a scenario")
    p.add_argument("policy")
    p.add_argument("scenario", help="scenario artifact path or builtin name")
    p.add_argument("--demo", default=None, help="demo artifact for ADE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--out", default=None, help="directory for rollout logs")
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("experiment", help="run a bundled experiment campaign")
    p.add_argument("spec", help="experiment name or spec artifact path")
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("replay", help="audit a session archive")
    p.add_argument("archive")
    p.set_defaults(func=cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
