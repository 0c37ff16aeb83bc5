"""Multi-episode, multi-seed evaluation of one (scenario, method, comm) cell."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from ..agents import binding_for, make_policy
from ..world.scenario import ScenarioSpec
from .metrics import EvalReport, latency_report, seed_result
from .runner import episode_seed, run_episode

log = logging.getLogger(__name__)

LLM_METHODS = ("zero_shot", "reflection", "correction_rag", "debrief")
SCRIPTED_METHODS = ("scripted", "naive", "oracle")
METHODS = LLM_METHODS + SCRIPTED_METHODS
EVAL_EPISODES = 30
EVAL_SEEDS = (0, 1, 2)


def family_for(method: str, comm: bool) -> str:
    if method in LLM_METHODS:
        return "llm" if comm else "silent_llm"
    if method == "oracle":
        return "oracle"
    if method in ("scripted", "naive"):
        return "naive"
    raise ValueError(f"unknown method {method!r}")


def build_policies(spec: ScenarioSpec, method: str, comm: bool = True, backend=None,
                   knowledge: dict | None = None, retriever=None) -> dict:
    """Policy per agent id. ``knowledge`` maps agent id to a knowledge record."""
    family = family_for(method, comm)
    knowledge = knowledge or {}
    out = {}
    for a in spec.agents:
        b = binding_for(a, family)
        out[a.id] = make_policy(b, backend=backend, knowledge=knowledge.get(a.id),
                                retriever=retriever if method == "correction_rag" else None)
    return out


def run_episodes(spec: ScenarioSpec, policies, m: int, seed: int, *, comm: bool = True, jobs: int = 1,
                 log_dir=None, record_buffer: bool = False) -> list:
    """``m`` episodes with seeds derived from ``seed``.

    ``policies`` is a dict or a zero-argument factory returning one; with
    ``jobs > 1`` a factory is required so workers do not share policy state.
    Results come back in episode order whatever the worker count.
    """
    factory = policies if callable(policies) else (lambda: policies)
    if jobs > 1 and not callable(policies):
        raise ValueError("parallel runs need a policy factory")

    def one(i):
        d = None if log_dir is None else Path(log_dir) / f"seed{seed}" / f"ep{i:03d}"
        return run_episode(spec, episode_seed(seed, i), factory(), comm=comm, record_buffer=record_buffer,
                           log_dir=d, meta={"episode": i, "run_seed": seed})

    if jobs <= 1:
        return [one(i) for i in range(m)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, range(m)))


def evaluate(spec: ScenarioSpec, method: str, *, comm: bool = True, backend=None, knowledge=None,
             retriever=None, seeds=EVAL_SEEDS, episodes: int = EVAL_EPISODES, jobs: int = 1,
             log_dir=None) -> EvalReport:
    """Run every seed and collect rates, latency and message statistics."""

    def factory():
        return build_policies(spec, method, comm, backend, knowledge, retriever)

    report = EvalReport(spec.name, spec.config_variant, method, "comm" if comm else "silent")
    everything = []
    for s in seeds:
        results = run_episodes(spec, factory, episodes, s, comm=comm, jobs=jobs, log_dir=log_dir)
        everything.extend(results)
        sr = seed_result(s, results)
        if sr.invalid:
            log.warning("%s seed %d: %d invalid episodes excluded", spec.name, s, sr.invalid)
        report.seeds.append(sr)
    report.latency, report.messages = latency_report([r for r in everything if not r.invalid])
    return report
