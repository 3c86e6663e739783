import os
from collections import defaultdict

import numpy as np
import pytest

from config import load_config
from features.binning import FEATURES, BinningConfig, bin_to_days
from features.codec import fit, transform_many
from features.manifest import HUMAN, NON_HUMAN
from ingest.zeek import dump_json_lines, dump_tsv, parse_tsv
from phase.model import PhaseModelConfig
from scoring.scorer import score_days
from synth.personas import (
    PROFILE_LABELS,
    PersonaSpec,
    Profile,
    default_benchmark,
    generate,
    persona_study,
)
from training.trainer import TrainSettings, cross_validate, train_final

BENCHMARK_ENV = os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs", "benchmark.env")


def gaps_by_day(records, entity):
    """Inter-record gaps (seconds) between consecutive records of one entity, keyed by the UTC day index."""
    times = sorted(r.ts for r in records if r.orig_addr == entity)
    gaps = defaultdict(list)
    for a, b in zip(times, times[1:]):
        if int(a // 86400) == int(b // 86400):
            gaps[int(a // 86400)].append(b - a)
    return gaps


@pytest.fixture(scope="module")
def benchmark():
    return default_benchmark(seed=7)


def test_profile_labels():
    assert PROFILE_LABELS[Profile.HUMAN_DIURNAL] == HUMAN
    assert all(PROFILE_LABELS[p] == NON_HUMAN for p in Profile if p is not Profile.HUMAN_DIURNAL)


def test_benchmark_shape(benchmark):
    assert len(benchmark.manifest.entries) == 32
    sequences = bin_to_days(benchmark.records, benchmark.manifest, BinningConfig(timesteps=96)).sequences
    assert len(sequences) == 160
    labels = [s.label for s in sequences]
    assert labels.count(HUMAN) == 40
    assert labels.count(NON_HUMAN) == 120
    assert all(s.timesteps == 96 for s in sequences)


def test_manifest_covers_exactly_the_generated_entities(benchmark):
    assert {e.address for e in benchmark.manifest.entries} == {r.orig_addr for r in benchmark.records}
    study = persona_study(seed=1, entities=2, days=2)
    assert {e.address for e in study.manifest.entries} == {r.orig_addr for r in study.records}
    assert {e.note for e in study.manifest.entries} == {"PersonaDefault", "PersonaEnhanced"}


def test_benchmark_is_deterministic_per_seed(benchmark):
    again = default_benchmark(seed=7)
    assert dump_json_lines(again.records) == dump_json_lines(benchmark.records)
    other = default_benchmark(seed=8)
    assert dump_json_lines(other.records) != dump_json_lines(benchmark.records)


def test_records_survive_a_tsv_round_trip():
    corpus = persona_study(seed=3, entities=1, days=1).merge(
        generate(PersonaSpec(profile=Profile.HUMAN_DIURNAL, entities=1, days=1, seed=3))
    )
    parsed = parse_tsv(dump_tsv(corpus.records))
    assert parsed.skipped == 0
    assert parsed.records == corpus.records


def test_beacon_period_gives_fixed_daily_count():
    corpus = generate(PersonaSpec(profile=Profile.AUTOMATED_BEACON, entities=2, days=2, seed=4, beacon_period=300))
    for entity in ("10.10.0.10", "10.10.0.11"):
        gaps = gaps_by_day(corpus.records, entity)
        per_day = [sum(1 for r in corpus.records if r.orig_addr == entity and int(r.ts // 86400) == day) for day in gaps]
        assert per_day == [288, 288]
        assert np.var(np.concatenate([gaps[d] for d in gaps])) < 1e-6


def test_maintenance_burst_lands_near_one_am():
    corpus = generate(PersonaSpec(profile=Profile.AUTOMATED_BEACON, days=1, seed=2, beacon_period=900, maintenance_burst=True))
    assert len(corpus.records) == 96 + 20
    burst = [r for r in corpus.records if r.resp_bytes == 250_000]
    assert len(burst) == 20
    assert all(3600 <= r.ts % 86400 <= 3600 + 300 + 20 * 15 for r in burst)


def test_human_activity_concentrates_in_the_active_window():
    spec = PersonaSpec(profile=Profile.HUMAN_DIURNAL, entities=3, days=4, seed=11)
    corpus = generate(spec)
    minutes = np.array([(r.ts % 86400) / 60.0 for r in corpus.records])
    inside = ((minutes >= spec.active_start) & (minutes < spec.active_end)).sum()
    assert inside > len(minutes) - inside

    beacon = generate(PersonaSpec(profile=Profile.AUTOMATED_BEACON, days=4, seed=11))
    human_gaps = np.concatenate([g for g in gaps_by_day(corpus.records, spec.address(0)).values()])
    beacon_gaps = np.concatenate([g for g in gaps_by_day(beacon.records, "10.10.0.10").values()])
    assert np.var(human_gaps) > 10 * np.var(beacon_gaps)


def test_enhanced_persona_idles_every_day():
    study = persona_study(seed=5, entities=2, days=3)
    for entry in study.manifest.entries:
        gaps = gaps_by_day(study.records, entry.address)
        assert len(gaps) == 3
        longest = [max(day) for day in gaps.values()]
        if entry.note == "PersonaEnhanced":
            assert all(g >= 3600 for g in longest)
        else:
            assert all(g < 3600 for g in longest)


def test_default_persona_payloads_are_small_and_symmetric():
    corpus = generate(PersonaSpec(profile=Profile.PERSONA_DEFAULT, days=1, seed=9))
    assert all(r.orig_bytes == r.resp_bytes and 40 <= r.orig_bytes <= 120 for r in corpus.records)


def test_invalid_spec():
    with pytest.raises(ValueError):
        PersonaSpec(profile=Profile.AUTOMATED_BEACON, beacon_period=7)
    with pytest.raises(ValueError):
        PersonaSpec(profile=Profile.PERSONA_ENHANCED, idle_tasks_range=(10, 5))


# ----------------------
# Acceptance (slow)
# ----------------------
@pytest.fixture(scope="module")
def benchmark_training(benchmark):
    config = load_config(BENCHMARK_ENV)
    sequences = bin_to_days(benchmark.records, benchmark.manifest, BinningConfig(timesteps=config.timesteps)).sequences
    codec = fit(sequences)
    X = transform_many(sequences, codec)
    y = np.array([s.label for s in sequences])
    architecture = PhaseModelConfig.from_pipeline(config, codec.timesteps, len(FEATURES), config.seed)
    settings = TrainSettings.from_pipeline(config)
    devices = [s.entity for s in sequences]
    return config, codec, X, y, devices, architecture, settings


@pytest.mark.slow
def test_benchmark_cross_validation_clears_ninety_percent(benchmark_training):
    config, _, X, y, devices, architecture, settings = benchmark_training
    report = cross_validate(
        X, y, architecture, settings, k=config.folds, seed=config.seed, workers=config.workers, groups=devices
    )
    assert report.grouped
    assert report.summary["accuracy"].mean >= 0.90
    assert report.summary["balanced_accuracy"].mean >= 0.90


@pytest.mark.slow
def test_enhanced_persona_scores_above_default(benchmark_training):
    config, codec, X, y, _, architecture, settings = benchmark_training
    model, _ = train_final(X, y, architecture, settings, seed=config.seed)
    study = persona_study(seed=config.seed, entities=4, days=5)
    days = bin_to_days(study.records, study.manifest, BinningConfig(timesteps=config.timesteps)).sequences
    notes = {e.address: e.note for e in study.manifest.entries}
    scores = score_days(model, codec, days, config.band_thresholds)
    by_profile = defaultdict(list)
    for s in scores:
        by_profile[notes[s.entity]].append(s.reported)
    default_mean = float(np.mean(by_profile["PersonaDefault"]))
    enhanced_mean = float(np.mean(by_profile["PersonaEnhanced"]))
    assert default_mean < 0.5
    assert enhanced_mean >= default_mean + 0.05
