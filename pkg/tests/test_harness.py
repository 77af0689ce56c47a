import numpy as np
import pytest

from conftest import tiny_hp
from paraq.cli import shipped_scores_path
from paraq.harness import (
    GameScores,
    RuntimeStats,
    RuntimeTable,
    TimingModel,
    ablation_grid,
    bench_variant,
    legal_cells,
    load_score_csv,
    normalize_score,
    predict_runtime,
    render_derived_table,
    render_runtime_table,
    render_score_table,
    round_half_up,
    score_report,
    to_factor,
    to_percent,
)

# Reference wall-clock means (hours) for a full 14-cell grid; the derived
# percent and speedup tables are pinned against these.
REFERENCE_MEANS = {
    ("standard", 1): 25.08,
    ("concurrent", 1): 20.64,
    ("standard", 2): 19.10,
    ("concurrent", 2): 14.00,
    ("synchronized", 2): 19.32,
    ("both", 2): 14.72,
    ("standard", 4): 16.84,
    ("concurrent", 4): 12.14,
    ("synchronized", 4): 15.74,
    ("both", 4): 11.08,
    ("standard", 8): 16.92,
    ("concurrent", 8): 11.68,
    ("synchronized", 8): 14.60,
    ("both", 8): 9.02,
}

REFERENCE_PERCENT = {
    ("standard", 1): 100.0,
    ("concurrent", 1): 82.3,
    ("standard", 2): 76.2,
    ("concurrent", 2): 55.8,
    ("synchronized", 2): 77.0,
    ("both", 2): 58.7,
    ("standard", 4): 67.1,
    ("concurrent", 4): 48.4,
    ("synchronized", 4): 62.8,
    ("both", 4): 44.2,
    ("standard", 8): 67.5,
    ("concurrent", 8): 46.6,
    ("synchronized", 8): 58.2,
    ("both", 8): 36.0,
}

REFERENCE_FACTOR = {
    ("standard", 1): 1.00,
    ("concurrent", 1): 1.22,
    ("standard", 2): 1.31,
    ("concurrent", 2): 1.79,
    ("synchronized", 2): 1.30,
    ("both", 2): 1.70,
    ("standard", 4): 1.49,
    ("concurrent", 4): 2.07,
    ("synchronized", 4): 1.59,
    ("both", 4): 2.26,
    ("standard", 8): 1.48,
    ("concurrent", 8): 2.15,
    ("synchronized", 8): 1.72,
    ("both", 8): 2.78,
}


def reference_table() -> RuntimeTable:
    return RuntimeTable.from_means(REFERENCE_MEANS, [1, 2, 4, 8])


# ---------------------------------------------------------------------------
# runtime stats


def test_stats_mean_and_sample_std():
    stats = RuntimeStats.from_trials("x", [1.0, 2.0, 3.0])
    assert stats.mean == 2.0
    assert stats.std == pytest.approx(1.0)
    assert not stats.single_trial


def test_single_trial_reports_zero_std_with_flag():
    stats = RuntimeStats.from_trials("x", [4.2])
    assert stats.std == 0.0 and stats.single_trial


def test_identical_trial_lists_give_identical_stats():
    a = RuntimeStats.from_trials("x", [1.5, 2.5, 2.0])
    b = RuntimeStats.from_trials("y", [1.5, 2.5, 2.0])
    assert a.mean == b.mean and a.std == b.std


def test_legal_cells_counts():
    assert len(legal_cells([1, 2, 4, 8])) == 14
    assert legal_cells([1]) == [("standard", 1), ("concurrent", 1)]


# ---------------------------------------------------------------------------
# table derivations (pinned to the reference grid above)


def test_to_percent_reproduces_reference_table():
    assert to_percent(reference_table()) == REFERENCE_PERCENT


def test_to_factor_reproduces_reference_table():
    assert to_factor(reference_table()) == REFERENCE_FACTOR


def test_baseline_cells_are_identity():
    table = reference_table()
    assert to_percent(table)[("standard", 1)] == 100.0
    assert to_factor(table)[("standard", 1)] == 1.00


def test_percent_and_factor_are_reciprocal_up_to_rounding():
    table = reference_table()
    pct, fac = to_percent(table), to_factor(table)
    for key in pct:
        assert pct[key] / 100.0 * fac[key] == pytest.approx(1.0, abs=0.02)


def test_missing_baseline_is_an_error():
    table = RuntimeTable.from_means({("both", 8): 9.02}, [8])
    with pytest.raises(ValueError, match="baseline"):
        to_percent(table)


def test_round_half_up_matches_display_convention():
    assert round_half_up(67.4641, 1) == 67.5
    assert round_half_up(5.35014, 1) == 5.4
    assert round_half_up(2.7805, 2) == 2.78
    assert round_half_up(0.05, 1) == 0.1


# ---------------------------------------------------------------------------
# benchmark driver (tiny configurations)


def bench_hp(**overrides):
    defaults = dict(
        env="synthetic",
        latency_s=0.0,
        episode_length=25,
        state_dim=6,
        action_count=3,
        eval_period=0,
        total_steps=80,
        C=40,
        N=40,
    )
    defaults.update(overrides)
    return tiny_hp("both", 4, **defaults)


def test_bench_variant_runs_trials_with_distinct_seeds():
    stats = bench_variant(bench_hp(), trials=2)
    assert len(stats.trials) == 2
    assert stats.label == "both/4"
    assert stats.mean > 0


def test_bench_variant_single_trial_flagged():
    stats = bench_variant(bench_hp(), trials=1)
    assert stats.single_trial and stats.std == 0.0


def test_bench_variant_rejects_zero_trials():
    with pytest.raises(ValueError):
        bench_variant(bench_hp(), trials=0)


def test_ablation_grid_fills_legal_cells_only():
    table = ablation_grid(bench_hp(), [1, 2], trials=1)
    assert set(table.cells) == {
        ("standard", 1),
        ("concurrent", 1),
        ("standard", 2),
        ("concurrent", 2),
        ("synchronized", 2),
        ("both", 2),
    }
    assert table.baseline().label == "standard/1"


# ---------------------------------------------------------------------------
# analytical predictor


def model():
    return TimingModel(t_env=300e-6, t_inf=40e-6, t_train=150e-6, t_binf_row=4e-6,
                       contention_coef=0.3)


def test_predictor_masks_training_when_sampling_dominates():
    hp = tiny_hp("concurrent", 1, C=400, total_steps=400)
    m = model()
    sample_cost = 400 * (m.t_env + m.t_inf)
    assert predict_runtime(m, hp) == pytest.approx(sample_cost)


def test_predictor_sync_and_async_coincide_at_one_worker():
    m = model()
    sync_like = m.t_binf(1) / 1
    async_like = m.t_inf * m.contention(1)
    assert sync_like == async_like == m.t_inf


def test_predictor_monotone_in_workers():
    m = model()
    for mode in ("standard", "concurrent", "synchronized", "both"):
        previous = None
        for w in (1, 2, 4, 8):
            if w == 1 and mode in ("synchronized", "both"):
                continue
            t = predict_runtime(m, tiny_hp(mode, w, C=400, total_steps=400))
            if previous is not None:
                assert t <= previous
            previous = t


def test_predictor_concurrent_never_slower_than_blocking():
    m = model()
    for w in (2, 4, 8):
        conc = predict_runtime(m, tiny_hp("both", w, C=400, total_steps=400))
        blocking = predict_runtime(m, tiny_hp("synchronized", w, C=400, total_steps=400))
        assert conc <= blocking


def test_predictor_rejects_invalid_model():
    bad = TimingModel(t_env=0.0, t_inf=1e-6, t_train=1e-6, t_binf_row=1e-6)
    with pytest.raises(ValueError):
        predict_runtime(bad, tiny_hp("both", 4))


@pytest.mark.skipif(
    (__import__("os").cpu_count() or 1) < 8,
    reason="the cost model assumes W samplers run on W hardware threads",
)
def test_fitted_model_predicts_measured_ratios_within_quarter():
    from paraq.harness import measure_timing_model

    base = bench_hp(
        latency_s=1_000e-6, episode_length=200, state_dim=32, action_count=4,
        hidden=256, batch_size=32, C=800, N=800, capacity=10_000,
        total_steps=3_200,
    )
    model = measure_timing_model(base)
    table = ablation_grid(base, [1, 2, 4, 8], trials=3)
    measured_base = table.baseline().mean
    predicted_base = predict_runtime(model, base.with_mode("standard", 1))
    for (mode, w), stats in table.cells.items():
        measured_ratio = stats.mean / measured_base
        predicted_ratio = predict_runtime(model, base.with_mode(mode, w)) / predicted_base
        assert measured_ratio == pytest.approx(predicted_ratio, rel=0.25)


# ---------------------------------------------------------------------------
# score normalization


def test_normalize_score_known_rows():
    assert round_half_up(normalize_score(401.2, 1.7, 31.8), 1) == 1327.2
    assert round_half_up(normalize_score(0.0, 0.0, 4367.0), 1) == 0.0


def test_normalize_score_anchors():
    assert normalize_score(5.0, 5.0, 100.0) == 0.0
    assert normalize_score(100.0, 5.0, 100.0) == 100.0


def test_normalize_score_rejects_degenerate_reference():
    with pytest.raises(ValueError):
        normalize_score(1.0, 3.0, 3.0)


def test_normalize_score_affine_invariant():
    rng = np.random.default_rng(0)
    for _ in range(50):
        raw, lo, hi = rng.normal(size=3) * 100
        if abs(hi - lo) < 1e-6:
            continue
        base = normalize_score(raw, lo, hi)
        a, b = float(rng.uniform(0.1, 5.0)), float(rng.normal() * 10)
        mapped = normalize_score(a * raw + b, a * lo + b, a * hi + b)
        assert mapped == pytest.approx(base, rel=1e-9)


def test_shipped_table_counts_and_printed_agreement():
    games = load_score_csv(shipped_scores_path())
    assert len(games) == 49
    report = score_report(games)
    assert report.counts == {"dqn": 29, "ours": 33}
    assert report.printed_mismatches == []


def test_score_report_flags_strictly_higher_agent_only():
    games = [
        GameScores("tie", 0.0, 100.0, 50.0, 50.0),
        GameScores("ours-wins", 0.0, 100.0, 10.0, 20.0),
    ]
    report = score_report(games)
    assert report.rows[0]["better"] == ""
    assert report.rows[1]["better"] == "ours"


def test_score_report_empty_input():
    report = score_report([])
    assert report.rows == [] and report.counts == {"dqn": 0, "ours": 0}


def test_score_report_detects_printed_mismatch():
    games = [GameScores("off", 0.0, 100.0, 50.0, 50.0, printed_dqn_norm=51.0)]
    report = score_report(games)
    assert len(report.printed_mismatches) == 1


# ---------------------------------------------------------------------------
# rendering


def test_runtime_table_renders_absent_cells_as_dashes():
    text = render_runtime_table(reference_table(), "markdown")
    assert "---" in text and "25.08" in text


def test_runtime_table_extrapolation_is_printed_not_substituted():
    text = render_runtime_table(reference_table(), "markdown", extrapolate=50.0)
    assert "25.08" in text and "@x50" in text


def test_derived_table_csv_round_trip():
    text = render_derived_table(REFERENCE_PERCENT, [1, 2, 4, 8], "percent", "csv")
    assert "36.0%" in text and "82.3%" in text
    text = render_derived_table(REFERENCE_FACTOR, [1, 2, 4, 8], "factor", "csv")
    assert "2.78x" in text and "2.15x" in text


def test_score_table_bolds_winner_in_markdown():
    games = load_score_csv(shipped_scores_path())
    text = render_score_table(score_report(games), "markdown")
    assert "**1327.2%**" in text
    assert "dqn=29 ours=33" in text
