import json
import math

import numpy as np
import pytest

from qpitch import cli, harness
from qpitch.config import ConfigError, Profile, load_config, parse_profile
from qpitch.qlearning import QTable


@pytest.fixture(scope="module")
def cfg():
    return load_config()


@pytest.fixture(scope="module")
def trim(cfg):
    return harness.solve_trim(cfg)


# ---------------------------------------------------------------- configuration


def test_defaults(cfg):
    assert cfg.dt == 0.01
    assert cfg.schedule.episodes == 20000
    assert cfg.actions.size == 21
    assert len(cfg.discretizer.theta_edges) == 29 and len(cfg.discretizer.rate_edges) == 8
    assert cfg.episode.theta_des == pytest.approx(math.radians(1.0))
    assert cfg.pid.kp < 0 and cfg.pid.kd < 0
    assert cfg.noise_fraction == 0.1


def test_user_file_overrides_only_given_keys(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[schedule]\nepisodes = 7\n[reward]\nbonus_gate = any\n")
    c = load_config(p)
    assert c.schedule.episodes == 7 and c.reward.bonus_gate == "any"
    assert c.schedule.gamma == 0.99


def test_dotted_overrides():
    c = load_config(overrides={"episode.gust": "true", "seeds.train": 5})
    assert c.episode.gust and c.train_seed == 5
    with pytest.raises(ConfigError):
        load_config(overrides={"episode.bogus": "1"})


@pytest.mark.parametrize(
    "text",
    ["[nosuch]\nx = 1\n", "[schedule]\nepisodez = 3\n", "[schedule]\nepisodes = many\n", "[reward]\nbonus_gate = maybe\n"],
)
def test_bad_config_rejected(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.ini")


def test_profile():
    pr = Profile(parse_profile("0:1, 4:1, 7:2"))
    assert pr(0.0) == pytest.approx(math.radians(1))
    assert pr(5.5) == pytest.approx(math.radians(1.5))
    assert pr(100.0) == pytest.approx(math.radians(2))
    assert pr.duration == 7
    with pytest.raises(ConfigError):
        parse_profile("0:1, 0:2")
    assert Profile.constant(1.0, 10.0)(3.0) == pytest.approx(math.radians(1))


def test_default_profile_spans_two_degrees(cfg):
    t = np.linspace(0, cfg.evaluation.profile.duration, 301)
    v = np.degrees([cfg.evaluation.profile(x) for x in t])
    assert v.max() == pytest.approx(2.0) and v.min() == pytest.approx(-2.0)


# ---------------------------------------------------------------- scenarios, logs, metrics


def test_scenario_requires_table_for_rl(cfg):
    with pytest.raises(ValueError):
        harness.step_scenario(cfg, "faa")
    with pytest.raises(ValueError):
        harness.step_scenario(cfg, "nope")
    with pytest.raises(harness.MissingArtifact, match="absent.txt"):
        harness.run_scenario(cfg, harness.step_scenario(cfg, "mdp", "absent.txt"))


def test_open_loop_trim_scenario_holds(cfg, trim):
    sc = harness.Scenario("hold", "trim", Profile.constant(math.degrees(trim.theta), 10.0), 10.0, theta0=trim.theta)
    lg = harness.run_scenario(cfg, sc, trim=trim)
    assert len(lg) == 1001 and lg.aborted is None
    assert np.max(np.abs(lg["err_deg"])) < 0.05
    assert np.all(lg["deltaE_rad"] == trim.deltaE)


def test_log_round_trip(tmp_path, cfg, trim):
    lg = harness.run_scenario(cfg, harness.step_scenario(cfg, "pid", gust=True, noise=True), trim=trim)
    p = lg.write_csv(tmp_path / "log.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "# qpitch-episode-log v1"
    header = next(x for x in lines[1:] if not x.startswith("#")).split(",")
    assert tuple(header) == harness.LOG_COLUMNS
    # every column names its unit, apart from the dimensionless reward
    assert all(c == "reward" or c.rsplit("_", 1)[-1] in {"s", "deg", "rad"} or c.endswith(("_m_s", "_deg_s")) for c in header)
    back = harness.EpisodeLog.read_csv(p)
    for c in harness.LOG_COLUMNS:
        assert np.array_equal(back[c], lg[c])
    assert back.meta == {k: str(v) for k, v in lg.meta.items()}
    assert back.meta["gust"] == "True" and back.meta["controller"] == "pid"


def test_log_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        harness.EpisodeLog.read_csv(p)
    with pytest.raises(harness.MissingArtifact):
        harness.EpisodeLog.read_csv(tmp_path / "none.csv")


def test_runs_are_deterministic(cfg, trim):
    sc = harness.profile_scenario(cfg, "pid", seed=3)
    a = harness.run_scenario(cfg, sc, trim=trim)
    b = harness.run_scenario(cfg, sc, trim=trim)
    c = harness.run_scenario(cfg, harness.profile_scenario(cfg, "pid", seed=4), trim=trim)
    for col in harness.LOG_COLUMNS:
        assert np.array_equal(a[col], b[col], equal_nan=True)
    assert not np.array_equal(a["gust_w_m_s"], c["gust_w_m_s"])


def test_noise_only_touches_measurements(cfg, trim):
    sc = harness.Scenario("hold", "trim", Profile.constant(0.0, 5.0), 5.0, theta0=trim.theta, noise=True)
    lg = harness.run_scenario(cfg, sc, trim=trim)
    rel = (lg["theta_meas_deg"][1:] - lg["theta_deg"][:-1]) / lg["theta_deg"][:-1]
    assert 0.05 < np.std(rel) < 0.15
    assert np.all(lg["gust_w_m_s"] == 0.0)


def _synthetic_log(theta, de, dt=0.01, des=1.0):
    n = len(theta)
    z = np.zeros(n)
    data = {c: z.copy() for c in harness.LOG_COLUMNS}
    data["t_s"] = np.arange(n) * dt
    data["theta_deg"] = np.asarray(theta, float)
    data["theta_des_deg"] = np.full(n, des)
    data["err_deg"] = data["theta_deg"] - des
    data["deltaE_rad"] = np.asarray(de, float)
    return harness.EpisodeLog(data)


def test_metrics_oracle():
    t = np.arange(501) * 0.01
    th = 1 - np.exp(-t / 0.5)
    de = np.r_[0.0, np.full(250, 0.1), np.full(250, 0.05)]
    m = harness.episode_metrics(_synthetic_log(th, de))
    assert m["rise_time_s"] == pytest.approx(0.5 * math.log(9), abs=0.011)
    assert m["overshoot_deg"] == 0.0
    assert m["ss_err_deg"] == pytest.approx(math.exp(-4 / 0.5), rel=1e-9)
    assert m["total_variation_rad"] == pytest.approx(0.15)
    assert m["max_step_rad"] == pytest.approx(0.1)
    assert m["handover_rad"] == pytest.approx(0.1)
    assert m["duration_s"] == pytest.approx(5.0)


def test_compare_with_itself_identical(cfg, trim):
    lg = harness.run_scenario(cfg, harness.step_scenario(cfg, "pid"), trim=trim)
    a, b = harness.compare_table({"a": lg, "b": lg})
    assert {k: v for k, v in a.items() if k != "scenario"} == {k: v for k, v in b.items() if k != "scenario"}
    with pytest.raises(ValueError):
        harness.compare_table({"a": lg})


def test_compare_rejects_mismatched_durations():
    a = _synthetic_log(np.ones(101), np.zeros(101))
    b = _synthetic_log(np.ones(201), np.zeros(201))
    with pytest.raises(ValueError, match="durations"):
        harness.compare_table({"a": a, "b": b})


def test_envelope_fit_oracle():
    t = np.arange(0, 600, 0.01)
    y = np.exp(-0.01 * t) * np.sin(2 * np.pi * t / 80.0)
    period, rate, _, _ = harness._envelope_fit(t, y)
    assert period == pytest.approx(80.0, rel=1e-3)
    assert rate == pytest.approx(-0.01, rel=0.02)


def test_trim_report(cfg):
    rep = harness.trim_report(cfg)
    # open-loop pitch oscillation is the phugoid: period and decay agree with the linear model
    assert rep["period_s"] == pytest.approx(rep["linear_phugoid_period_s"], rel=0.05)
    assert rep["decay_rate"] < 0
    assert rep["decay_rate"] == pytest.approx(rep["linear_phugoid_decay"], rel=0.25)
    pk = rep["peaks"][1]
    assert pk[-1] < pk[0]
    text = harness.format_trim_report(rep)
    assert "published" in text and "delta" in text and "thrust [N]" in text


# ---------------------------------------------------------------- command line


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def test_cli_trim_and_modes(tmp_path, capsys):
    assert run_cli("trim", "--out-dir", tmp_path) == 0
    out = capsys.readouterr().out
    assert "own" in out and "published" in out
    assert (tmp_path / "trim_response.csv").read_text().startswith("t_s,theta_dev_deg,alpha_deg\n")
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "trim" and "trim_response.csv" in man["artifacts"]
    assert run_cli("modes") == 0
    out = capsys.readouterr().out
    assert "phugoid" in out and "short period" in out


def test_cli_train_eval_compare(tmp_path, capsys):
    assert run_cli("train", "--episodes", 10, "--out-dir", tmp_path, "--seed", 2) == 0
    t = QTable.load(tmp_path / "qtable_mdp.txt")
    assert t.episodes == 10 and t.seed == 2
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"] == {"train": 2}
    assert man["artifacts"]["qtable_mdp.txt"]["sha256"] == harness.sha256_file(tmp_path / "qtable_mdp.txt")
    assert set(man["inputs"]) == {"dataset", "defaults"}
    assert man["config"]["schedule"]["episodes"] == "20000"

    assert run_cli("eval", "--controller", "faa", "--out-dir", tmp_path) == 0
    out = capsys.readouterr().out
    assert "total_variation_rad" in out
    log_path = tmp_path / "step_faa_seed0.csv"
    assert log_path.is_file()

    # a 10-episode table is far from converged; if its run diverged the reason survives the CSV
    faa_log = harness.EpisodeLog.read_csv(log_path)
    assert faa_log.meta["faa_outer_rule"] == "exclude_in_fine" and faa_log.meta["faa_anchor"] == "center"
    assert (faa_log.aborted is None) == (faa_log["t_s"][-1] == pytest.approx(10.0))

    assert run_cli("eval", "--controller", "pid", "--out-dir", tmp_path) == 0
    assert run_cli("compare", "--logs", log_path, tmp_path / "step_pid_seed0.csv", "--out-dir", tmp_path) == 0
    rows = (tmp_path / "compare.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("scenario,")

    assert run_cli("compare", "--controllers", "mdp,faa,pid", "--out-dir", tmp_path) == 0
    assert run_cli("compare", "--logs", log_path, log_path, "--out-dir", tmp_path / "self") == 0
    a, b = (r.split(",", 1)[1] for r in (tmp_path / "self" / "compare.csv").read_text().splitlines()[1:])
    assert a == b


def test_cli_ensemble(tmp_path, capsys):
    assert run_cli("train", "--episodes", 3, "--ensemble", 2, "--seed", 10, "--out-dir", tmp_path) == 0
    for s in (10, 11):
        assert QTable.load(tmp_path / f"seed_{s}" / "qtable_mdp.txt").seed == s
    assert (tmp_path / "ensemble_mdp.csv").read_text().count("\n") == 3


def test_cli_missing_table_exit_code(tmp_path, capsys):
    assert run_cli("eval", "--controller", "faa", "--out-dir", tmp_path) == cli.EXIT_MISSING
    assert "qtable_mdp.txt" in capsys.readouterr().err
    assert run_cli("compare", "--controllers", "pomdp,pid", "--out-dir", tmp_path) == cli.EXIT_MISSING


def test_cli_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run_cli("train", "--mode", "banana")
    assert exc.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        run_cli()
    assert exc.value.code == cli.EXIT_USAGE
    bad = tmp_path / "bad.ini"
    bad.write_text("[schedule]\nepisodez = 1\n")
    assert run_cli("modes", "--config", bad) == cli.EXIT_USAGE
    assert run_cli("compare", "--controllers", "pid,xyz", "--out-dir", tmp_path) == cli.EXIT_USAGE


def test_cli_numerical_failure(tmp_path, capsys):
    # at 1 m/s the trimmed state is meaningless and the open-loop check departs
    c = tmp_path / "slow.ini"
    c.write_text("[aircraft]\nV_trim = 1.0\n")
    assert run_cli("trim", "--config", c, "--out-dir", tmp_path) == cli.EXIT_NUMERIC
    assert "numerical failure" in capsys.readouterr().err


def test_manifest_reproduces_table(tmp_path):
    """Re-running the command recorded in a manifest reproduces the table bit-exactly."""
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("train", "--episodes", 5, "--seed", 1, "--out-dir", a) == 0
    man = json.loads((a / "manifest.json").read_text())
    seed = man["seeds"]["train"]
    assert run_cli("train", "--episodes", 5, "--seed", seed, "--out-dir", b) == 0
    assert (a / "qtable_mdp.txt").read_bytes() == (b / "qtable_mdp.txt").read_bytes()
    assert (a / "trace_mdp.csv").read_bytes() == (b / "trace_mdp.csv").read_bytes()
