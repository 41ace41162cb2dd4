"""Harness tests: dataset generation with retry/discard, replay-oracle
evaluation, report bookkeeping, and the paired force comparison."""
import numpy as np
import pytest

from compbench import harness
from compbench.episodes import Episode
from compbench.harness import (ForceComparison, HarnessError, RolloutReport,
                               ablation_table, compare_force_profiles,
                               evaluate, generate_demos, load_report_csv)
from compbench.rollout import RolloutTrace

SEED = 5


@pytest.fixture(scope="module")
def wiping_demos(tmp_path_factory):
    out = tmp_path_factory.mktemp("demos")
    paths = generate_demos("wiping", 2, SEED, out, images=False)
    return paths, [Episode.load(p) for p in paths]


def test_generate_demos_writes_successful_episodes(wiping_demos):
    paths, eps = wiping_demos
    assert len(paths) == 2
    assert [p.name for p in paths] == ["wiping_000.cpak", "wiping_001.cpak"]
    for ep in eps:
        assert ep.success
        assert ep.header["task"] == "wiping"
        assert len(ep) > 50


def test_generate_demos_same_seed_identical_files(wiping_demos, tmp_path):
    paths, _ = wiping_demos
    again = generate_demos("wiping", 1, SEED, tmp_path, images=False)
    assert again[0].read_bytes() == paths[0].read_bytes()


def test_generate_demos_discards_failures_then_succeeds(monkeypatch, tmp_path):
    calls = []
    monkeypatch.setattr(harness, "run_demo",
                        lambda *a, **k: calls.append(1))
    verdicts = iter([False, False, True])
    monkeypatch.setattr(harness, "check_success",
                        lambda w: (next(verdicts), {}))
    paths = generate_demos("wiping", 1, 0, tmp_path, images=False)
    assert len(calls) == 3                      # two discards, one keeper
    ep = Episode.load(paths[0])
    assert ep.success and len(ep) == 0          # run_demo was stubbed out


def test_generate_demos_gives_up_after_retries(monkeypatch, tmp_path):
    calls = []
    monkeypatch.setattr(harness, "run_demo",
                        lambda *a, **k: calls.append(1))
    monkeypatch.setattr(harness, "check_success", lambda w: (False, {}))
    with pytest.raises(HarnessError, match="failed"):
        generate_demos("wiping", 1, 0, tmp_path, images=False)
    assert len(calls) == harness.MAX_RETRIES + 1
    assert not list(tmp_path.iterdir())          # nothing finalized


def test_evaluate_replay_oracle_all_succeed(wiping_demos):
    _, eps = wiping_demos
    report = evaluate(eps, "wiping", episodes=2)
    assert report.label == "replay oracle"
    agg = report.aggregates()
    assert agg["episodes"] == 2 == len(report.rows)
    assert agg["success_rate"] == 1.0
    assert agg["aborted"] == 0
    # aggregates must be recomputable from the rows alone
    peaks = [r["peak_force"] for r in report.rows]
    assert agg["peak_force_mean"] == pytest.approx(np.mean(peaks))
    assert agg["peak_force_max"] == pytest.approx(np.max(peaks))


def test_evaluate_replay_needs_enough_episodes(wiping_demos):
    _, eps = wiping_demos
    with pytest.raises(HarnessError, match="replay needs"):
        evaluate(eps[:1], "wiping", episodes=2)


def fake_trace(seed, success, peaks, aborted=False):
    n = len(peaks)
    return RolloutTrace(
        task="wiping", seed=seed, arm_ids=["arm"], success=success,
        aborted=aborted, t=[i / 20 for i in range(n)],
        force={"arm": list(peaks)},
        stiffness={"arm": [np.full(6, 500.0)] * n},
        pose_err={"arm": [0.0] * n}, duration=n / 20)


def test_report_csv_roundtrip(tmp_path):
    report = RolloutReport.from_traces("F/T", "wiping", [
        fake_trace(1, True, [0.5, 2.0, 1.0]),
        fake_trace(2, False, [0.1, 0.2], aborted=True),
    ])
    path = report.to_csv(tmp_path / "report.csv")
    rows = load_report_csv(path)
    assert rows == report.rows


def test_report_trace_files(tmp_path):
    report = RolloutReport.from_traces("F/T", "wiping",
                                       [fake_trace(1, True, [0.5, 2.0])])
    paths = report.write_traces(tmp_path)
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "t,arm/force,arm/kx,arm/ky,arm/kz,arm/pose_err"
    assert len(lines) == 3


def test_force_curve_alignment():
    report = RolloutReport.from_traces("compliant", "wiping", [
        fake_trace(1, True, [1.0, 2.0, 3.0]),
        fake_trace(2, True, [3.0, 4.0]),
    ])
    mean, std = report.force_curve()
    assert len(mean) == 2                        # cropped to shortest
    assert np.allclose(mean, [2.0, 3.0])
    assert np.allclose(std, [1.0, 1.0])


def test_force_comparison_rejects_mismatched_counts():
    a = RolloutReport.from_traces("compliant", "wiping",
                                  [fake_trace(1, True, [1.0])])
    b = RolloutReport.from_traces("position-tracking", "wiping",
                                  [fake_trace(1, True, [5.0]),
                                   fake_trace(2, True, [5.0])])
    with pytest.raises(HarnessError, match="mismatched"):
        ForceComparison(a, b, amplitude=0.002, frequency=0.5)
    with pytest.raises(HarnessError, match="demos"):
        compare_force_profiles("wiping", episodes=2, demos=[])


def test_compare_free_space_is_quiet(wiping_demos):
    """With zero injected error and only the pre-contact approach leg,
    neither executor should see meaningful force."""
    _, eps = wiping_demos
    ep = eps[0]
    keep = int(np.searchsorted(ep.t, 0.6))
    approach = Episode(dict(ep.header, records=keep), ep.data[:keep].copy())
    cmp = compare_force_profiles("wiping", episodes=1, amplitude=0.0,
                                 demos=[approach])
    assert cmp.compliant.rows[0]["peak_force"] < 0.5
    assert cmp.position.rows[0]["peak_force"] < 0.5


def test_compare_force_profiles_position_is_violent(wiping_demos):
    """Identical reference + identical 2 mm injected error: the stiff
    executor slams the board, the compliant one shrugs it off."""
    _, eps = wiping_demos
    cmp = compare_force_profiles("wiping", episodes=2, seed=SEED, demos=eps)
    assert cmp.peak_ratio() >= 5.0
    assert all(r["peak_force"] < 20.0 for r in cmp.compliant.rows)
    assert all(r["peak_force"] > 100.0 for r in cmp.position.rows)
    cm, _ = cmp.compliant.force_curve()
    pm, _ = cmp.position.force_curve()
    assert len(cm) == len(pm) > 0


def test_comparison_json_and_curves(tmp_path, wiping_demos):
    _, eps = wiping_demos
    keep = int(np.searchsorted(eps[0].t, 0.6))
    short = Episode(dict(eps[0].header, records=keep),
                    eps[0].data[:keep].copy())
    cmp = compare_force_profiles("wiping", episodes=1, amplitude=0.0,
                                 demos=[short])
    blob = cmp.to_json()
    assert set(blob) == {"amplitude", "frequency", "peak_ratio",
                         "compliant", "position"}
    path = cmp.write_curves(tmp_path / "curves.csv")
    header = path.read_text().splitlines()[0]
    assert header == ("tick,compliant_mean,compliant_std,"
                      "position_mean,position_std")


def test_ablation_table_pairs_reports():
    with_ft = RolloutReport.from_traces("F/T", "wiping", [
        fake_trace(1, True, [1.0, 2.0]), fake_trace(2, True, [0.5])])
    without = RolloutReport.from_traces("w/o F/T", "wiping", [
        fake_trace(1, False, [3.0]), fake_trace(2, True, [1.0, 4.0])])
    table = ablation_table(with_ft, without)
    assert table["columns"] == ["F/T", "w/o F/T"]
    assert table["rows"]["success_rate"] == [1.0, 0.5]
    assert set(table["rows"]) == set(with_ft.aggregates())
    with pytest.raises(HarnessError, match="duplicate"):
        ablation_table(with_ft, with_ft)
    other = RolloutReport.from_traces("w/o F/T", "pick_insert",
                                      [fake_trace(1, True, [1.0])])
    with pytest.raises(HarnessError, match="mix tasks"):
        ablation_table(with_ft, other)
