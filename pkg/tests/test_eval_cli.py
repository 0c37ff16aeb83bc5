from __future__ import annotations

import json

import pytest

from parley import cli
from parley.backend import default_mock
from parley.eval import LOG_FILES, build_policies, diff_logs, evaluate, run_episode, run_episodes
from parley.world.scenario import load_spec


def test_episode_logs_byte_identical(tmp_path):
    spec = load_spec("perception_overtake", "accident_prone")
    for d in ("a", "b"):
        run_episode(spec, 5, build_policies(spec, "zero_shot", backend=default_mock()), log_dir=tmp_path / d)
    assert diff_logs(tmp_path / "a", tmp_path / "b", LOG_FILES) == []


def test_parallel_matches_serial():
    spec = load_spec("left_turn", "accident_prone")
    factory = lambda: build_policies(spec, "naive")  # noqa: E731
    serial = run_episodes(spec, factory, 6, 2)
    parallel = run_episodes(spec, factory, 6, 2, jobs=3)
    assert [r.outcome for r in serial] == [r.outcome for r in parallel]
    with pytest.raises(ValueError):
        run_episodes(spec, factory(), 2, 0, jobs=2)


def test_invalid_episodes_are_excluded():
    spec = load_spec("red_light", "accident_prone")
    from parley.backend import MockBackend, BackendError

    class Broken(MockBackend):
        def complete(self, req):
            raise BackendError("down")

    rep = evaluate(spec, "zero_shot", backend=Broken(), seeds=(0,), episodes=2)
    assert rep.invalid == 2 and rep.cell() == "n/a"


def test_eval_report_shape():
    rep = evaluate(load_spec("red_light", "accident_prone"), "oracle", seeds=(0, 1, 2), episodes=3)
    d = rep.to_dict()
    assert len(d["seeds"]) == 3 and all(s["episodes"] == 3 for s in d["seeds"])
    assert d["cell"] == "0.0 ± 0.0 / 100.0 ± 0.0"


def test_cli_run_replay_eval_report(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", "--scenario", "all", "--method", "oracle", "--out", str(out)]) == 0
    logs = sorted(p.parent for p in out.glob("*/seed0/ep000/outcome.json"))
    assert len(logs) == 6
    assert cli.main(["run", "--replay", str(logs[0]), "--out", str(tmp_path)]) == 0
    assert "replay identical" in capsys.readouterr().out

    ev = tmp_path / "eval"
    args = ["eval", "--scenario", "highway_exit", "--method", "naive", "--seeds", "0", "1", "--episodes", "3",
            "--out", str(ev)]
    assert cli.main(args) == 0
    first = capsys.readouterr().out
    assert cli.main(args + ["--metrics-only"]) == 0
    again = capsys.readouterr().out
    cell = lambda s: [ln for ln in s.splitlines() if ln.startswith("highway_exit")][0]  # noqa: E731
    assert cell(first) == cell(again)

    rep = tmp_path / "report"
    assert cli.main(["report", str(ev / "summary.json"), "--out", str(rep)]) == 0
    assert (rep / "rates.png").stat().st_size > 0 and (rep / "costs.png").stat().st_size > 0


def test_cli_silent_run_has_no_messages(tmp_path):
    assert cli.main(["run", "--scenario", "red_light", "--method", "zero_shot", "--silent", "--out",
                     str(tmp_path)]) == 0
    assert (tmp_path / "red_light" / "seed0" / "ep000" / "messages.jsonl").read_text() == ""


def test_cli_train_resume_and_inspect(tmp_path, capsys):
    args = ["train", "--scenario", "red_light", "--method", "oracle", "--out", str(tmp_path), "--budget", "3"]
    assert cli.main(args) == 0
    ck = json.loads((tmp_path / "red_light" / "checkpoint.json").read_text())
    assert ck["next_episode"] == 3
    assert cli.main(args[:-1] + ["25"]) == 0  # resumes from episode 3
    log = (tmp_path / "red_light" / "training_log.jsonl").read_text().splitlines()
    assert len(log) == 20 and "solved at episode 20" in capsys.readouterr().out
    assert cli.main(["inspect", str(tmp_path / "red_light")]) == 0
    assert cli.main(["inspect", "red_light"]) == 0


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("scenario: red_light\nmethod: naive\nseeds: [4]\nepisodes: 2\n")
    rc = cli.load_config(cfg, {"method": "oracle", "out": str(tmp_path)}).validate()
    assert (rc.scenario, rc.method, rc.seeds, rc.episodes) == ("red_light", "oracle", [4], 2)
    cfg.write_text("bogus_field: 1\n")
    with pytest.raises(cli.ConfigError, match="bogus_field"):
        cli.load_config(cfg, {})


def test_bad_config_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval", "--method", "nonsense"])
    assert exc.value.code == 2
    assert "method" in capsys.readouterr().err


def test_remote_without_credentials_fails_early(monkeypatch, tmp_path, capsys):
    monkeypatch.delenv("PARLEY_API_KEY", raising=False)
    rc = cli.main(["train", "--scenario", "red_light", "--method", "debrief", "--backend", "remote",
                   "--out", str(tmp_path)])
    assert rc == cli.EXIT_INFRA and "PARLEY_API_KEY" in capsys.readouterr().err
