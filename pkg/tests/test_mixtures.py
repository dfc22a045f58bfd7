from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from mixmap.audio import AudioBuffer, energy, read_wav, snr_db
from mixmap.mixtures import (
    FactorGrid,
    MixtureSpec,
    build_manifest,
    builtin_grid,
    cast_example,
    draw_interferer_sources,
    place_with_overlap,
    read_manifest,
    record_to_manifest_obj,
    sample_spec,
    synthesize,
    UtterancePool,
)

from conftest import make_utterance, scaled_to_energy


def spec_for(seed=7, snr=0.0, k=1, overlap=0.0, source="real", example_id="ex000000"):
    return MixtureSpec(
        snr_db=snr, num_interferers=k, overlap_ratio=overlap, inter_source=source, seed=seed, example_id=example_id
    )


class TestFactorGrid:
    def test_requires_exactly_one_snr_form(self):
        with pytest.raises(ValueError, match="exactly one"):
            FactorGrid(snr_choices=(0.0,), snr_range=(0.0, 5.0))
        with pytest.raises(ValueError, match="exactly one"):
            FactorGrid()

    def test_rejects_bad_overlap(self):
        with pytest.raises(ValueError, match="outside"):
            FactorGrid(snr_choices=(0.0,), overlap_choices=(1.2,))

    def test_rejects_bad_source(self):
        with pytest.raises(ValueError, match="source type"):
            FactorGrid(snr_choices=(0.0,), source_types=("fake",))

    def test_builtin_training_grid(self):
        grid = builtin_grid("train")
        assert grid.snr_choices == (0.0, 5.0, 10.0, 15.0)
        assert grid.overlap_choices == (0.0, 0.2, 0.4)
        assert grid.speaker_counts == (1, 2, 3)
        assert grid.source_types == ("real", "syn", "real/syn")

    def test_builtin_eval_grids(self):
        assert builtin_grid("test_1spk").snr_range == (-5.0, 5.0)
        for name in ("test_2spk", "test_3spk"):
            grid = builtin_grid(name)
            assert grid.snr_range == (0.0, 10.0)
            assert grid.overlap_choices == (0.0,)
            assert grid.source_types == ("real",)

    def test_unknown_builtin(self):
        with pytest.raises(ValueError, match="unknown builtin grid"):
            builtin_grid("nope")


class TestSampleSpec:
    def test_singleton_grid_is_exact(self):
        grid = FactorGrid(snr_choices=(5.0,), overlap_choices=(0.2,), speaker_counts=(2,), source_types=("syn",))
        for seed in (0, 1, 99):
            spec = sample_spec(grid, "exA", seed)
            assert (spec.snr_db, spec.overlap_ratio, spec.num_interferers, spec.inter_source) == (5.0, 0.2, 2, "syn")

    def test_deterministic_per_seed_and_id(self):
        grid = builtin_grid("train")
        assert sample_spec(grid, "ex1", 42) == sample_spec(grid, "ex1", 42)
        assert sample_spec(grid, "ex1", 42) != sample_spec(grid, "ex1", 43)

    def test_snr_choice_frequencies(self):
        grid = builtin_grid("train")
        draws = [sample_spec(grid, f"ex{i}", 7).snr_db for i in range(100_000)]
        for choice in grid.snr_choices:
            freq = sum(d == choice for d in draws) / len(draws)
            assert abs(freq - 0.25) < 0.01

    def test_snr_range_draws_inside(self):
        grid = FactorGrid(snr_range=(-5.0, 5.0))
        draws = [sample_spec(grid, f"ex{i}", 3).snr_db for i in range(2000)]
        assert all(-5.0 <= d <= 5.0 for d in draws)
        assert abs(float(np.mean(draws))) < 0.3


class TestPlaceWithOverlap:
    def test_zero_overlap_spans_everything(self):
        rng = np.random.default_rng(0)
        itf = make_utterance(rng, 4000)
        placed = place_with_overlap(4000, itf, 0.0, rng)
        assert placed.active_length == 4000 and placed.active_start == 0
        assert len(placed.track) == 4000

    def test_point_four_overlap_counts(self):
        # 10 s at 16 kHz: active span 96000 samples, silent span 64000
        rng = np.random.default_rng(1)
        target = AudioBuffer(np.full(160_000, 0.5), 16000)
        itf = make_utterance(rng, 200_000, rate=16000)
        placed = place_with_overlap(160_000, itf, 0.4, rng)
        assert placed.active_length == 96_000
        track = placed.track.samples
        both_active = np.count_nonzero((target.samples != 0) & (track != 0))
        assert both_active == 96_000
        assert np.count_nonzero(track) == 96_000
        assert both_active / 160_000 == pytest.approx(0.6)

    def test_full_nonoverlap_flags_empty(self):
        rng = np.random.default_rng(2)
        placed = place_with_overlap(1000, make_utterance(rng, 500), 1.0, rng)
        assert placed.active_length == 0
        assert not np.any(placed.track.samples)

    def test_bad_ratio_errors(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError, match="outside"):
            place_with_overlap(100, make_utterance(rng, 100), -0.1, rng)

    def test_head_and_tail_placement(self):
        rng = np.random.default_rng(4)
        itf = make_utterance(rng, 2000)
        head = place_with_overlap(1000, itf, 0.5, rng, placement="head")
        assert np.all(head.track.samples[500:] == 0) and np.count_nonzero(head.track.samples[:500]) == 500
        tail = place_with_overlap(1000, itf, 0.5, rng, placement="tail")
        assert np.all(tail.track.samples[:500] == 0) and np.count_nonzero(tail.track.samples[500:]) == 500

    def test_trim_and_loop_adaptations(self):
        rng = np.random.default_rng(5)
        longer = place_with_overlap(1000, make_utterance(rng, 5000), 0.0, rng)
        assert longer.adaptation == "trimmed"
        shorter = place_with_overlap(4000, make_utterance(rng, 900), 0.0, rng)
        assert shorter.adaptation == "looped"
        assert np.count_nonzero(shorter.track.samples) == 4000
        exact = place_with_overlap(1200, make_utterance(rng, 1200), 0.0, rng)
        assert exact.adaptation == "exact"

    def test_realized_ratio_within_one_sample(self):
        rng = np.random.default_rng(6)
        for ratio in (0.0, 0.13, 0.2, 0.4, 0.77):
            placed = place_with_overlap(9001, make_utterance(rng, 12000), ratio, rng)
            assert abs(placed.active_length - (1 - ratio) * 9001) <= 0.5 + 1e-9


class TestSynthesize:
    def test_identity_case(self):
        # equal energies, 0 dB, full overlap: mixture is the plain sum
        rng = np.random.default_rng(10)
        target = make_utterance(rng, 3000, peak=0.3)
        other = make_utterance(rng, 3000, peak=0.3)
        interferer = scaled_to_energy(other, energy(target))
        result = synthesize(spec_for(snr=0.0), target, [(interferer, "real")])
        np.testing.assert_allclose(result.mixture.samples, target.samples + interferer.samples, atol=1e-15)
        assert result.record.normalization_gain == 1.0
        assert result.record.realized_snr_db == pytest.approx(0.0, abs=1e-9)

    def test_three_interferers_hit_snr(self):
        rng = np.random.default_rng(11)
        target = make_utterance(rng, 5000, peak=0.3)
        interferers = [(make_utterance(rng, int(rng.integers(2000, 9000)), peak=0.3), "real") for _ in range(3)]
        result = synthesize(spec_for(snr=5.0, k=3, overlap=0.2), target, interferers)
        assert snr_db(result.target, result.interference_sum) == pytest.approx(5.0, abs=1e-9)
        assert result.record.realized_snr_db == pytest.approx(5.0, abs=1e-9)

    def test_peak_normalization_preserves_snr(self):
        # constant stems with raw mixture peak 1.5 force gain 0.99/1.5 = 0.66
        target = AudioBuffer(np.full(1000, 0.75), 8000)
        interferer = AudioBuffer(np.full(1000, 0.75), 8000)
        result = synthesize(spec_for(snr=0.0), target, [(interferer, "real")])
        assert result.record.normalization_gain == pytest.approx(0.99 / 1.5, rel=1e-12)
        assert result.record.normalization_gain == pytest.approx(0.66, rel=1e-12)
        assert result.record.realized_snr_db == pytest.approx(0.0, abs=1e-9)
        assert float(np.max(np.abs(result.mixture.samples))) <= 0.99

    def test_mixture_is_sum_of_stems(self):
        rng = np.random.default_rng(12)
        target = make_utterance(rng, 4000, peak=0.6)
        interferers = [(make_utterance(rng, 3000, peak=0.6), "real"), (make_utterance(rng, 6000, peak=0.6), "syn")]
        noise = AudioBuffer(0.01 * rng.standard_normal(4000), 8000)
        result = synthesize(spec_for(snr=-3.0, k=2, overlap=0.3, source="real/syn"), target, interferers, noise=noise)
        np.testing.assert_allclose(
            result.mixture.samples,
            result.target.samples + result.interference_sum.samples,
            atol=1e-12,
        )
        stems = result.target.samples + result.noise.samples
        for stem in result.interferer_stems:
            stems = stems + stem.samples
        np.testing.assert_allclose(result.mixture.samples, stems, atol=1e-12)

    def test_realized_overlap_per_interferer(self):
        rng = np.random.default_rng(13)
        target = make_utterance(rng, 7000, peak=0.4)
        interferers = [(make_utterance(rng, 9000, peak=0.4), "real") for _ in range(2)]
        result = synthesize(spec_for(snr=5.0, k=2, overlap=0.4), target, interferers)
        for entry in result.record.interferers:
            assert abs(entry.active_length - 0.6 * 7000) <= 0.5 + 1e-9
        assert result.record.realized_overlap_ratio == pytest.approx(0.4, abs=1.0 / 7000)
        assert 0.0 <= result.record.union_active_fraction <= 1.0

    def test_degenerate_interferer(self):
        rng = np.random.default_rng(14)
        target = make_utterance(rng, 1000)
        with pytest.raises(ValueError, match="degenerate interferer"):
            synthesize(spec_for(snr=0.0, overlap=1.0), target, [(make_utterance(rng, 1000), "real")])

    def test_rate_mismatch(self):
        rng = np.random.default_rng(15)
        target = make_utterance(rng, 1000, rate=8000)
        with pytest.raises(ValueError, match="sample rate mismatch"):
            synthesize(spec_for(), target, [(make_utterance(rng, 1000, rate=16000), "real")])

    def test_wrong_interferer_count(self):
        rng = np.random.default_rng(16)
        with pytest.raises(ValueError, match="expected 2 interferers"):
            synthesize(spec_for(k=2), make_utterance(rng, 1000), [(make_utterance(rng, 1000), "real")])


class TestCasting:
    def test_sources_split_evenly(self):
        rng = np.random.default_rng(17)
        draws = []
        for _ in range(10_000):
            draws.extend(draw_interferer_sources("real/syn", 2, rng))
        freq = draws.count("real") / len(draws)
        assert abs(freq - 0.5) < 0.02

    def test_fixed_sources(self):
        rng = np.random.default_rng(18)
        assert draw_interferer_sources("real", 3, rng) == ("real",) * 3
        assert draw_interferer_sources("syn", 2, rng) == ("syn",) * 2

    def test_speakers_distinct(self, pools):
        for i in range(300):
            spec = sample_spec(builtin_grid("train"), f"ex{i:06d}", 5)
            cast = cast_example(spec, 5, pools["target"], pools["real"], pools["syn"])
            speakers = [cast.target_speaker] + [sid for sid, _, _ in cast.interferers]
            assert len(set(speakers)) == len(speakers)
            assert cast.enrollment_path != cast.target_path

    def test_enrollment_requires_second_utterance(self, tmp_path, pools):
        from conftest import write_pool

        rng = np.random.default_rng(19)
        single = write_pool(tmp_path, "solo", {"lonely": 1}, rng)
        pool = UtterancePool.from_file(single)
        with pytest.raises(ValueError, match="'lonely' lacks a second utterance"):
            cast_example(spec_for(source="real"), 1, pool, pools["real"], None)

    def test_pool_exhaustion(self, tmp_path):
        from conftest import write_pool

        rng = np.random.default_rng(20)
        targets = UtterancePool.from_file(write_pool(tmp_path, "t", {"a": 2}, rng))
        tiny_real = UtterancePool.from_file(write_pool(tmp_path, "r", {"b": 1}, rng))
        with pytest.raises(ValueError, match="not enough distinct speakers"):
            cast_example(spec_for(k=2, source="real"), 1, targets, tiny_real, None)


class TestBuildManifest:
    def test_count_zero(self, tmp_path, pools):
        grid = builtin_grid("train")
        records = build_manifest(pools["target"], pools["real"], pools["syn"], grid, 0, 1, tmp_path / "out")
        assert records == []
        manifest = tmp_path / "out" / "manifest.jsonl"
        assert manifest.read_text() == ""
        assert [p for p in (tmp_path / "out").iterdir()] == [manifest]

    def test_build_and_verify(self, tmp_path, pools):
        out = tmp_path / "out"
        grid = builtin_grid("train")
        records = build_manifest(pools["target"], pools["real"], pools["syn"], grid, 12, 99, out)
        assert len(records) == 12
        for rec in records:
            assert abs(rec.realized_snr_db - rec.spec.snr_db) < 0.01
            mixture = read_wav(out / rec.mixture_path)
            target = read_wav(out / rec.target_path)
            stems = np.zeros(len(mixture))
            for entry in rec.interferers:
                stems = stems + read_wav(out / entry.path).samples
            # float32 storage: the sum identity holds to single precision
            np.testing.assert_allclose(mixture.samples, target.samples + stems, atol=2e-6)
            remeasured = snr_db(target, AudioBuffer(stems, mixture.sample_rate))
            assert remeasured == pytest.approx(rec.spec.snr_db, abs=1e-4)
            assert (out / rec.enrollment_path).is_file()

    def test_enrollment_copied_verbatim(self, tmp_path, pools, pool_files):
        out = tmp_path / "out"
        grid = FactorGrid(snr_choices=(5.0,), speaker_counts=(1,))
        records = build_manifest(pools["target"], pools["real"], None, grid, 3, 4, out)
        sources = {
            path: Path(path).read_bytes()
            for _, utts in pools["target"].speakers
            for path in utts
        }
        for rec in records:
            data = (out / rec.enrollment_path).read_bytes()
            assert data in sources.values()

    def test_manifest_round_trip(self, tmp_path, pools):
        out = tmp_path / "out"
        grid = builtin_grid("train")
        records = build_manifest(pools["target"], pools["real"], pools["syn"], grid, 6, 123, out)
        loaded = read_manifest(out / "manifest.jsonl")
        assert [record_to_manifest_obj(r) for r in loaded] == [record_to_manifest_obj(r) for r in records]

    def test_rebuild_is_byte_identical(self, tmp_path, pools):
        grid = builtin_grid("train")
        digests = []
        for name in ("one", "two"):
            out = tmp_path / name
            build_manifest(pools["target"], pools["real"], pools["syn"], grid, 8, 77, out)
            digests.append(_tree_digest(out))
        assert digests[0] == digests[1]

    def test_jobs_do_not_change_bytes(self, tmp_path, pools):
        grid = builtin_grid("train")
        build_manifest(pools["target"], pools["real"], pools["syn"], grid, 8, 31, tmp_path / "serial", jobs=1)
        build_manifest(pools["target"], pools["real"], pools["syn"], grid, 8, 31, tmp_path / "parallel", jobs=4)
        assert _tree_digest(tmp_path / "serial") == _tree_digest(tmp_path / "parallel")

    def test_rejects_overlap_one_grid(self, tmp_path, pools):
        grid = FactorGrid(snr_choices=(0.0,), overlap_choices=(0.0, 1.0))
        with pytest.raises(ValueError, match="overlap ratio 1"):
            build_manifest(pools["target"], pools["real"], None, grid, 1, 1, tmp_path / "out")

    def test_requires_syn_pool(self, tmp_path, pools):
        grid = FactorGrid(snr_choices=(0.0,), source_types=("real/syn",))
        with pytest.raises(ValueError, match="no syn pool"):
            build_manifest(pools["target"], pools["real"], None, grid, 1, 1, tmp_path / "out")

    def test_pcm16_encoding(self, tmp_path, pools):
        grid = FactorGrid(snr_choices=(0.0,), speaker_counts=(1,))
        records = build_manifest(pools["target"], pools["real"], None, grid, 2, 9, tmp_path / "out", encoding="pcm16")
        for rec in records:
            buf = read_wav(tmp_path / "out" / rec.mixture_path)
            # quantized mixture still matches the recorded SNR loosely
            assert len(buf) > 0


class TestPoolParsing:
    def test_bad_line(self, tmp_path):
        bad = tmp_path / "pool.tsv"
        bad.write_text("spk1 only-one-column\n")
        with pytest.raises(ValueError, match="speaker_id<TAB>wav_path"):
            UtterancePool.from_file(bad)

    def test_empty_pool(self, tmp_path):
        empty = tmp_path / "pool.tsv"
        empty.write_text("# nothing here\n")
        with pytest.raises(ValueError, match="empty pool"):
            UtterancePool.from_file(empty)

    def test_sorted_speakers(self, tmp_path):
        f = tmp_path / "pool.tsv"
        f.write_text("b\tB.wav\na\tA.wav\na\tA2.wav\n")
        pool = UtterancePool.from_file(f)
        assert [sid for sid, _ in pool.speakers] == ["a", "b"]
        assert pool.speakers[0][1] == ("A.wav", "A2.wav")


def _tree_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()
