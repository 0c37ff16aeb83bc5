"""Command line: run, train, eval, inspect, report.

Options come from an optional YAML/JSON config file (``--config``) and are
overridden by flags given on the command line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .backend import BackendError, MissingCredentials, make_backend
from .debrief import (KnowledgeStore, Memory, TrainingAborted, TrainingConfig, retrieve, select_centralized,
                      training_loop)
from .eval import (REPLAY_FILES, EvalReport, build_policies, diff_logs, evaluate, load_outcome, replay_policies,
                   run_episode, run_episodes, seed_result)
from .eval.report import plot_costs, plot_rates, plot_training, render_report, summary_rows, write_summary
from .eval.suite import METHODS
from .world.scenario import load_spec, scenario_names

log = logging.getLogger("parley")

EXIT_INFRA = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: str = "all"
    variant: str | None = "accident_prone"
    method: str = "oracle"
    comm: str = "comm"
    backend: str = "mock"
    seeds: list = field(default_factory=lambda: [0])
    episodes: int = 1
    out: str = "runs"
    jobs: int = 1
    cache_dir: str | None = None
    mock_rules: str | None = None
    knowledge: str | None = None  # training output directory to draw knowledge/memory from

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method: expected one of {', '.join(METHODS)}, got {self.method!r}")
        if self.comm not in ("comm", "silent"):
            raise ConfigError(f"comm: expected comm or silent, got {self.comm!r}")
        if self.backend not in ("mock", "remote", "replay", "record"):
            raise ConfigError(f"backend: unknown kind {self.backend!r}")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if self.episodes < 1:
            raise ConfigError("episodes: must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs: must be positive")
        if self.backend in ("replay", "record") and not self.cache_dir:
            raise ConfigError("cache_dir: required for replay and record backends")
        for name in self.scenarios():
            try:
                load_spec(name, self.variant)
            except (FileNotFoundError, KeyError, ValueError) as exc:
                raise ConfigError(f"scenario: {exc}") from exc
        return self

    def scenarios(self) -> list[str]:
        return scenario_names() if self.scenario == "all" else [self.scenario]

    @property
    def comm_enabled(self) -> bool:
        return self.comm == "comm"

    @property
    def needs_backend(self) -> bool:
        return self.method not in ("scripted", "naive", "oracle")


def load_config(path, overrides: dict, cls=RunConfig):
    doc = {}
    if path:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config field")
    doc.update({k: v for k, v in overrides.items() if v is not None and k in names})
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _backend(cfg):
    return make_backend(cfg.backend, mock_rules=cfg.mock_rules, cache_dir=cfg.cache_dir)


def _learned(cfg, spec):
    """Knowledge records and retriever from a training output directory, if one was given."""
    if not cfg.knowledge:
        return None, None
    root = Path(cfg.knowledge)
    store = KnowledgeStore(root / "knowledge")
    records = {a.id: r for a in spec.agents if (r := store.latest(spec.name, a.id)) is not None}
    retriever = None
    mem = root / "memory.jsonl"
    if mem.exists():
        memory = Memory.from_jsonl(mem.read_text())
        retriever = lambda text: retrieve(memory, text, 3)  # noqa: E731
    return records, retriever


def cmd_run(cfg: RunConfig) -> int:
    backend = _backend(cfg) if cfg.needs_backend else None
    out = Path(cfg.out)
    failed = 0
    for name in cfg.scenarios():
        spec = load_spec(name, cfg.variant)
        knowledge, retriever = _learned(cfg, spec)

        def factory(spec=spec, knowledge=knowledge, retriever=retriever):
            return build_policies(spec, cfg.method, cfg.comm_enabled, backend, knowledge, retriever)

        for s in cfg.seeds:
            results = run_episodes(spec, factory, cfg.episodes, s, comm=cfg.comm_enabled, jobs=cfg.jobs,
                                   log_dir=out / name, record_buffer=True)
            for i, r in enumerate(results):
                status = "invalid: " + r.error if r.invalid else json.dumps(
                    {str(k): v for k, v in sorted(r.outcome.results.items())})
                print(f"{name} seed {s} episode {i}: {status}")
                failed += r.invalid
    print(f"logs under {out}")
    return EXIT_INFRA if failed else 0


def cmd_replay(log_dir, out) -> int:
    """Re-execute a recorded episode from its decision log and diff the outputs."""
    log_dir = Path(log_dir)
    meta = json.loads((log_dir / "meta.json").read_text())
    spec = load_spec(meta["scenario"], meta["variant"])
    target = Path(out) / "replay" / log_dir.name
    run_episode(spec, meta["seed"], replay_policies(log_dir, spec), comm=meta["comm"], log_dir=target, meta=meta)
    diffs = diff_logs(log_dir, target, REPLAY_FILES)
    if diffs:
        print("replay differs in: " + ", ".join(diffs))
        return 1
    print(f"replay identical ({', '.join(REPLAY_FILES)})")
    return 0


def cmd_train(cfg: RunConfig, budget: int, fresh: bool, policy: str | None) -> int:
    method = {"scripted": "none", "naive": "none", "oracle": "none"}.get(cfg.method, cfg.method)
    family = policy or {"oracle": "oracle", "scripted": "naive", "naive": "naive"}.get(
        cfg.method, "llm" if cfg.comm_enabled else "silent_llm")
    backend = _backend(cfg) if method not in ("none",) or family in ("llm", "silent_llm") else None
    code = 0
    for name in cfg.scenarios():
        tcfg = TrainingConfig(name, method=method, policy=family, episode_budget=budget, seed=cfg.seeds[0],
                              out_dir=str(Path(cfg.out) / name))
        try:
            res = training_loop(tcfg, backend, resume=not fresh)
        except TrainingAborted as exc:
            print(f"{name}: aborted ({exc}); rerun to resume")
            code = EXIT_INFRA
            continue
        state = "solved at episode %d" % res.solved_at if res.solved else "not solved"
        print(f"{name}: {state}; {res.episodes} episodes, {res.resets} resets")
        for aid, rec in sorted(res.records.items()):
            print(f"  vehicle {aid} v{rec.version} rate {rec.success_rate:.2f}: {rec.knowledge} | {rec.strategy}")
    return code


def _reports_from_logs(cfg) -> list:
    reports = []
    for name in cfg.scenarios():
        spec = load_spec(name, cfg.variant)
        rep = EvalReport(spec.name, spec.config_variant, cfg.method, cfg.comm)
        for s in cfg.seeds:
            d = Path(cfg.out) / "logs" / name / f"seed{s}"
            outcomes = [load_outcome(p) for p in sorted(d.glob("ep*"))]
            if not outcomes:
                raise ConfigError(f"out: no episode logs under {d}")

            class _R:  # minimal result shape for seed_result
                def __init__(self, o):
                    self.outcome, self.invalid = o, o is None

            rep.seeds.append(seed_result(s, [_R(o) for o in outcomes]))
        reports.append(rep)
    return reports


def cmd_eval(cfg: RunConfig, metrics_only: bool = False) -> int:
    if metrics_only:
        reports = _reports_from_logs(cfg)
    else:
        backend = _backend(cfg) if cfg.needs_backend else None
        reports = []
        for name in cfg.scenarios():
            spec = load_spec(name, cfg.variant)
            knowledge, retriever = _learned(cfg, spec)
            reports.append(evaluate(spec, cfg.method, comm=cfg.comm_enabled, backend=backend, knowledge=knowledge,
                                    retriever=retriever, seeds=cfg.seeds, episodes=cfg.episodes, jobs=cfg.jobs,
                                    log_dir=Path(cfg.out) / "logs" / name))
    path = write_summary(reports, Path(cfg.out) / "summary.json")
    print(render_report(reports))
    print(f"summary written to {path}")
    return EXIT_INFRA if any(r.invalid for r in reports) else 0


def cmd_inspect(target) -> int:
    """Describe a scenario, an episode log directory or a training output directory."""
    p = Path(target)
    if (p / "outcome.json").exists():
        meta = json.loads((p / "meta.json").read_text())
        outcome = load_outcome(p)
        print(f"episode {meta['scenario']}/{meta['variant']} seed {meta['seed']}")
        if outcome is None:
            print(f"invalid: {meta.get('error')}")
        else:
            print(f"duration {outcome.duration:g} s; results {outcome.results}")
            for line in outcome.feedback:
                print(f"  {line}")
        msgs = [json.loads(x) for x in (p / "messages.jsonl").read_text().splitlines()]
        for m in msgs:
            print(f"  t={m['step'] * 0.5:g}s vehicle {m['sender']} -> {m['recipients']}: {m['payload']}")
        return 0
    if (p / "checkpoint.json").exists():
        ck = json.loads((p / "checkpoint.json").read_text())
        print(f"training: next episode {ck['next_episode']}, solved {ck['solved']} (at {ck['solved_at']}), "
              f"resets {ck['resets']}, memory entries {ck['memory_size']}")
        for aid, rec in sorted(ck["records"].items()):
            print(f"  vehicle {aid} v{rec['version']} rate {rec['success_rate']:.2f}")
            print(f"    knowledge: {rec['knowledge'] or '-'}")
            print(f"    strategy: {rec['strategy'] or '-'}")
        store = KnowledgeStore(p / "knowledge")
        recs = store.all_records()
        if recs:
            best = select_centralized(recs)
            for scen, rec in best.records.items():
                print(f"  best for {scen}: vehicle {rec.agent} v{rec.version} rate {rec.success_rate:.2f}")
        return 0
    if target in scenario_names():
        spec = load_spec(target)
        print(f"{spec.name}: mediation {spec.mediation_mode}, time limit {spec.time_limit:g} s")
        for a in spec.agents:
            role = "focal" if a.focal else "background"
            print(f"  {a.id} {a.label} ({role}{', comm' if a.comm_capable else ''}): {a.task or '-'}")
        return 0
    raise ConfigError(f"target: {target!r} is not a scenario, episode log or training directory")


def cmd_report(summaries, out, training=()) -> int:
    rows = []
    for s in summaries:
        rows.extend(summary_rows(s))
    out = Path(out)
    if rows:
        print("=" * 72)
        print("RESULTS")
        print("=" * 72)
        for r in rows:
            print(f"{r['scenario']:<22}{r['variant']:<16}{r['method']:<16}{r['comm']:<8}{r['cell']}")
        print("=" * 72)
        print(f"figure: {plot_rates(rows, out / 'rates.png')}")
        print(f"figure: {plot_costs(rows, out / 'costs.png')}")
    for t in training:
        lines = [json.loads(x) for x in (Path(t) / "training_log.jsonl").read_text().splitlines()]
        if lines:
            print(f"figure: {plot_training(lines, out / (Path(t).name + '_training.png'))}")
    return 0


def _common(p):
    p.add_argument("--config", help="YAML/JSON file with default options")
    p.add_argument("--scenario", help="scenario name or 'all'")
    p.add_argument("--variant", help="configuration variant (accident_prone, safe, randomized)")
    p.add_argument("--method", help="|".join(METHODS))
    g = p.add_mutually_exclusive_group()
    g.add_argument("--comm", dest="comm", action="store_const", const="comm")
    g.add_argument("--silent", dest="comm", action="store_const", const="silent")
    p.add_argument("--backend", help="mock | remote | replay | record")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--mock-rules", dest="mock_rules")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.add_argument("--knowledge", help="training output directory to load knowledge from")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parley", description="Connected-vehicle negotiation simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run and log episodes")
    _common(p)
    p.add_argument("--replay", help="episode log directory to re-execute and diff")
    p = sub.add_parser("train", help="run the learning loop")
    _common(p)
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--fresh", action="store_true", help="ignore an existing checkpoint")
    p.add_argument("--policy", help="focal policy family override: llm | silent_llm | oracle | naive")
    p = sub.add_parser("eval", help="multi-seed evaluation with a results table")
    _common(p)
    p.add_argument("--metrics-only", action="store_true", help="recompute from existing logs")
    p = sub.add_parser("inspect", help="describe a scenario, episode log or training directory")
    p.add_argument("target")
    p = sub.add_parser("report", help="render figures from eval summaries")
    p.add_argument("summaries", nargs="*")
    p.add_argument("--training", nargs="*", default=[])
    p.add_argument("--out", default="runs/report")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "inspect":
            return cmd_inspect(args.target)
        if args.command == "report":
            return cmd_report(args.summaries, args.out, args.training)
        overrides = {k: v for k, v in vars(args).items() if k not in ("config", "command", "verbose")}
        if args.command == "run" and args.replay:
            return cmd_replay(args.replay, args.out or "runs")
        cfg = load_config(args.config, overrides).validate()
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.budget, args.fresh, args.policy)
        return cmd_eval(cfg, args.metrics_only)
    except ConfigError as exc:
        ap.error(str(exc))
    except MissingCredentials as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    except BackendError as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_INFRA
    return 0


if __name__ == "__main__":
    sys.exit(main())
