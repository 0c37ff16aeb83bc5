"""Regenerate the strict-replay fixture: python3 tests/fixtures/make_replay_fixture.py"""
from __future__ import annotations

import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from fake_remote import FIXTURE_SCENARIO, FIXTURE_SEED, FIXTURE_VARIANT, fake_remote  # noqa: E402

from parley.backend import ReplayBackend  # noqa: E402
from parley.eval import build_policies, run_episode  # noqa: E402
from parley.world.scenario import load_spec  # noqa: E402


def main():
    cache, logs = HERE / "replay_cache", HERE / "replay_episode"
    for d in (cache, logs):
        shutil.rmtree(d, ignore_errors=True)
    backend = ReplayBackend(cache, inner=fake_remote(), strict=False)
    spec = load_spec(FIXTURE_SCENARIO, FIXTURE_VARIANT)
    res = run_episode(spec, FIXTURE_SEED, build_policies(spec, "zero_shot", backend=backend), log_dir=logs)
    (logs / "timings.jsonl").unlink()
    print(res.outcome.results, sum(1 for _ in cache.glob("*/*.json")), "cached calls")


if __name__ == "__main__":
    main()
