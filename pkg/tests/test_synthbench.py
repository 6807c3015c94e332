from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from src.config import load_config
from src.numerics import ContractError
from src.proposal_map import TemporalInterval
from src.synthbench import (
    GroundingSample,
    IntervalComponent,
    ScenarioSpec,
    bias_report,
    concept_signatures,
    cross_pair,
    draw_interval,
    generate,
    histogram_intersection,
    independence_test,
    interval_bin,
    rank_frequency_slope,
)

SETTINGS = Path(__file__).resolve().parent.parent / "config" / "settings.yaml"


class TestScenarioSpec:
    def test_default_concept_map_cycles_components(self, tiny_spec):
        assert tiny_spec.concept_interval_map == [0, 1, 0]

    def test_zipf_probabilities(self):
        spec = ScenarioSpec(n_concepts=4, zipf_exponent=1.0)
        expected = np.array([1, 1 / 2, 1 / 3, 1 / 4])
        np.testing.assert_allclose(spec.concept_probs, expected / expected.sum())
        uniform = ScenarioSpec(n_concepts=4, zipf_exponent=0.0)
        np.testing.assert_allclose(uniform.concept_probs, 0.25)

    @pytest.mark.parametrize("overrides", [
        {"bias_strength": 1.5},
        {"zipf_exponent": -1.0},
        {"interval_prior": []},
        {"concept_interval_map": [0, 5, 0]},
        {"vocab_size": 3},
        {"noise_sigma": -0.1},
    ])
    def test_invalid_specs(self, overrides):
        base = dict(n_concepts=3, n_clips=4, dim=4, vocab_size=8)
        with pytest.raises(ContractError):
            ScenarioSpec(**{**base, **overrides})

    def test_components_from_mappings(self):
        spec = ScenarioSpec(interval_prior=[{"center": 0.5, "width": 0.2}])
        assert spec.interval_prior == [IntervalComponent(0.5, 0.2)]


class TestGenerate:
    def test_deterministic(self, tiny_spec):
        a, b = generate(tiny_spec, 20), generate(tiny_spec, 20)
        assert [s.to_record() for s in a] == [s.to_record() for s in b]

    def test_prefix_stable(self, tiny_spec):
        short, long = generate(tiny_spec, 5), generate(tiny_spec, 15)
        assert [s.to_record() for s in short] == [s.to_record() for s in long[:5]]

    def test_seed_and_stream_change_samples(self, tiny_spec):
        base = generate(tiny_spec, 5)
        other_seed = generate(replace(tiny_spec, seed=8), 5)
        other_stream = generate(tiny_spec, 5, stream=1)
        assert [s.to_record() for s in base] != [s.to_record() for s in other_seed]
        assert [s.to_record() for s in base] != [s.to_record() for s in other_stream]

    def test_sample_shapes_and_tokens(self, tiny_spec):
        for sample in generate(tiny_spec, 30):
            assert sample.video.features.shape == (4, 4)
            assert sample.query.tokens[0] == 1 + sample.concept
            assert all(t > tiny_spec.n_concepts for t in sample.query.tokens[1:])
            assert max(sample.query.tokens) < tiny_spec.vocab_size
            assert sample.gt.length >= 1 / tiny_spec.n_clips

    def test_noise_free_video_carries_concept_signature_inside_gt(self, tiny_spec):
        spec = replace(tiny_spec, noise_sigma=0.0)
        signatures = concept_signatures(spec)
        for sample in generate(spec, 20):
            centers = (np.arange(spec.n_clips) + 0.5) / spec.n_clips
            inside = (centers >= sample.gt.start) & (centers <= sample.gt.end)
            np.testing.assert_array_equal(sample.video.features[inside],
                                          np.tile(signatures[sample.concept], (inside.sum(), 1)))
            assert np.all(sample.video.features[~inside] == 0.0)

    def test_full_bias_pins_concepts_to_components(self):
        spec = ScenarioSpec(
            n_concepts=2, n_clips=8, dim=4, vocab_size=8, bias_strength=1.0,
            interval_prior=[IntervalComponent(0.2, 0.3), IntervalComponent(0.8, 0.3)],
        )
        for sample in generate(spec, 50):
            expected = [TemporalInterval(0.05, 0.35), TemporalInterval(0.65, 0.95)][sample.concept]
            assert sample.gt.start == pytest.approx(expected.start)
            assert sample.gt.end == pytest.approx(expected.end)

    def test_zipf_head_dominates(self):
        spec = ScenarioSpec(n_concepts=10, zipf_exponent=1.5, n_clips=4, dim=2, vocab_size=16)
        report = bias_report(generate(spec, 2000))
        assert report.top_concepts.iloc[0]["concept"] == 0
        assert rank_frequency_slope(report.concept_freq) < -1.0

    def test_short_components_widen_to_one_clip(self):
        spec = ScenarioSpec(n_concepts=1, n_clips=4, dim=2, vocab_size=4,
                            interval_prior=[IntervalComponent(0.5, 0.05, jitter=0.01)])
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert draw_interval(spec, 0, rng).length >= 0.25

    def test_record_round_trip(self, tiny_spec):
        sample = generate(tiny_spec, 1)[0]
        back = GroundingSample.from_record(sample.to_record())
        assert back.to_record() == sample.to_record()

    def test_invalid_count(self, tiny_spec):
        with pytest.raises(ContractError):
            generate(tiny_spec, 0)

    def test_record_without_tokens_rejected(self, tiny_spec):
        record = generate(tiny_spec, 1)[0].to_record()
        record["tokens"] = []
        with pytest.raises(ContractError, match="no tokens"):
            GroundingSample.from_record(record)

    def test_flat_zipf_is_uniform(self):
        spec = ScenarioSpec(n_concepts=4, zipf_exponent=0.0, n_clips=4, dim=2, vocab_size=8)
        n = 10_000
        freq = bias_report(generate(spec, n)).concept_freq
        p = 1.0 / spec.n_concepts
        sigma = np.sqrt(n * p * (1 - p))
        assert len(freq) == spec.n_concepts
        assert (np.abs(freq.to_numpy() - n * p) <= 3 * sigma).all()

    def test_unit_zipf_slope(self):
        spec = ScenarioSpec(n_concepts=20, zipf_exponent=1.0, n_clips=4, dim=2, vocab_size=24)
        slope = rank_frequency_slope(bias_report(generate(spec, 10_000)).concept_freq)
        assert slope == pytest.approx(-1.0, abs=0.15)


class TestCrossPair:
    def test_streams_are_disjoint(self, tiny_spec):
        target = replace(tiny_spec, name="target", seed=3)
        train, cross, in_test = cross_pair(tiny_spec, target, 10, 6, 8)
        assert (len(train), len(cross), len(in_test)) == (10, 6, 8)
        train_videos = {s.video.features.tobytes() for s in train}
        assert not any(s.video.features.tobytes() in train_videos for s in in_test)

    def test_mismatched_scenarios_rejected(self, tiny_spec):
        with pytest.raises(ContractError):
            cross_pair(tiny_spec, replace(tiny_spec, dim=6), 5, 5, 5)


class TestBiasReport:
    def test_interval_bin(self):
        assert interval_bin(TemporalInterval(0.0, 1.0), 10) == (0, 9)
        assert interval_bin(TemporalInterval(0.25, 0.5), 10) == (2, 4)

    def test_histogram_intersection(self):
        h = np.array([[1.0, 3.0], [0.0, 0.0]])
        assert histogram_intersection(h, h) == pytest.approx(1.0)
        assert histogram_intersection(h, np.array([[0.0, 0.0], [0.0, 5.0]])) == 0.0
        assert histogram_intersection(h, np.zeros((2, 2))) == 0.0

    def test_report_counts(self, tiny_spec):
        ds = generate(tiny_spec, 100)
        report = bias_report(ds, grid_size=4, top_k=2)
        assert report.n_samples == 100
        assert report.concept_freq.sum() == 100
        assert report.interval_hist.sum() == 100
        assert len(report.top_concepts) <= 2
        assert report.overlap is None
        assert report.to_dict()["n_samples"] == 100

    def test_same_distribution_overlaps_more_than_shifted(self, tiny_spec):
        train, cross, in_test = cross_pair(
            tiny_spec,
            replace(tiny_spec, name="shifted",
                    interval_prior=[IntervalComponent(0.6, 0.2, 0.02), IntervalComponent(0.4, 0.2, 0.02)]),
            300, 300, 300,
        )
        assert bias_report(in_test, train).overlap > bias_report(cross, train).overlap
        assert bias_report(in_test, train).concept_overlap > bias_report(cross, train).concept_overlap

    def test_independence_test_separates_biased_and_unbiased(self):
        common = dict(n_concepts=4, n_clips=8, dim=2, vocab_size=8, zipf_exponent=0.0,
                      interval_prior=[IntervalComponent(0.2, 0.3), IntervalComponent(0.7, 0.4)])
        biased = generate(ScenarioSpec(bias_strength=1.0, **common), 400)
        unbiased = generate(ScenarioSpec(bias_strength=0.0, **common), 400)
        assert independence_test(biased, 10) < 1e-6
        assert independence_test(unbiased, 10) > 1e-3

    def test_unbiased_scenario_passes_independence_at_scale(self):
        spec = ScenarioSpec(n_concepts=4, n_clips=8, dim=2, vocab_size=8, zipf_exponent=0.0, bias_strength=0.0,
                            interval_prior=[IntervalComponent(0.2, 0.3), IntervalComponent(0.7, 0.4)])
        assert independence_test(generate(spec, 10_000), 10) > 0.01

    def test_shipped_scenarios_have_little_overlap(self):
        cfg = load_config(SETTINGS)
        train, cross, _ = cross_pair(cfg.train_scenario, cfg.cross_scenarios["cross"], 1000, 1000, 10)
        assert bias_report(cross, train, grid_size=cfg.data.bias_grid).overlap < 0.5

    def test_grid_size_validated(self, tiny_spec):
        with pytest.raises(ContractError):
            bias_report(generate(tiny_spec, 5), grid_size=1)
