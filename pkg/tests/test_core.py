import dataclasses

import numpy as np
import pytest

from airware.core import (
    Dataset,
    FeatureTensor,
    GestureClass,
    GestureSet,
    IrEvent,
    IrStream,
    PipelineConfig,
    SampleRecord,
    Waveform,
    derive_rng,
    gesture_set_members,
    load_config,
    load_dataset,
    save_config,
    save_dataset,
    validate_config,
)
from airware.errors import GridViolation, NyquistViolation, ShapeMismatch


def make_record(user=0, gesture=GestureClass.ERASE, rep=0, frames=5, band=4, **kw):
    rng = np.random.default_rng((user + 1) * 1000 + int(gesture) * 10 + rep)
    feats = FeatureTensor(rng.normal(size=(frames, band)), rng.normal(size=(frames, 2)))
    return SampleRecord(user_id=user, gesture=gesture, rep_index=rep, features=feats, **kw)


class TestGestureVocabulary:
    def test_exactly_21_classes_with_codes_0_to_20(self):
        codes = sorted(int(g) for g in GestureClass)
        assert codes == list(range(21))

    def test_label_roundtrip_is_a_bijection(self):
        labels = {g.label for g in GestureClass}
        assert len(labels) == 21
        for g in GestureClass:
            assert GestureClass.from_label(g.label) is g

    def test_expected_labels_present(self):
        labels = {g.label for g in GestureClass}
        for name in ("flick-left", "pan-down", "slice-right", "zoom-in", "whip",
                     "snap", "magic-wand", "double-click", "double-tap", "circle",
                     "erase"):
            assert name in labels

    def test_gaming_set_members(self):
        members = gesture_set_members(GestureSet.GAMING)
        assert len(members) == 4
        assert set(members) == {
            GestureClass.SNAP,
            GestureClass.SLICE_LEFT,
            GestureClass.SLICE_RIGHT,
            GestureClass.WHIP,
        }

    def test_full_set_is_all_21(self):
        assert gesture_set_members(GestureSet.FULL) == tuple(GestureClass)

    def test_generic_and_mapping_have_7_members(self):
        assert len(gesture_set_members(GestureSet.GENERIC)) == 7
        assert len(gesture_set_members(GestureSet.MAPPING)) == 7

    def test_union_of_reduced_sets_has_16_distinct_classes(self):
        union = set()
        for s in (GestureSet.GENERIC, GestureSet.MAPPING, GestureSet.GAMING):
            union |= set(gesture_set_members(s))
        assert len(union) == 16

    def test_members_ordered_by_class_code(self):
        for s in GestureSet:
            members = gesture_set_members(s)
            assert list(members) == sorted(members, key=int)

    def test_accepts_string_set_id(self):
        assert gesture_set_members("gaming") == gesture_set_members(GestureSet.GAMING)


class TestPipelineConfig:
    def test_default_hop_is_2048(self):
        assert PipelineConfig().hop == 2048

    def test_hop_for_75_percent_overlap(self):
        cfg = PipelineConfig(stft_overlap=0.75)
        assert cfg.hop == 1024

    def test_default_carrier_bin_is_exactly_1536(self):
        cfg = PipelineConfig()
        assert cfg.carrier_bin == 1536
        assert cfg.carrier_hz * cfg.stft_window / cfg.sample_rate_hz == 1536.0

    def test_default_frames_per_segment_is_57(self):
        # floor((120000 - 4096) / 2048) + 1
        cfg = PipelineConfig()
        assert cfg.segment_samples == 120000
        assert cfg.frames_per_segment == 57

    def test_bin_width(self):
        assert PipelineConfig().bin_hz == pytest.approx(11.71875)

    def test_carrier_above_nyquist_rejected(self):
        with pytest.raises(NyquistViolation):
            validate_config(PipelineConfig(carrier_hz=25000))

    def test_window_outside_grid_rejected(self):
        with pytest.raises(GridViolation):
            validate_config(PipelineConfig(stft_window=512))

    def test_window_outside_grid_allowed_with_override(self):
        cfg = validate_config(PipelineConfig(stft_window=512, allow_nonstandard_grid=True))
        assert cfg.stft_window == 512

    def test_non_power_of_two_window_rejected_even_with_override(self):
        with pytest.raises(GridViolation):
            validate_config(PipelineConfig(stft_window=3000, allow_nonstandard_grid=True))

    def test_overlap_outside_grid_rejected(self):
        with pytest.raises(GridViolation):
            validate_config(PipelineConfig(stft_overlap=0.9))

    def test_band_half_width_outside_grid_rejected(self):
        with pytest.raises(GridViolation):
            validate_config(PipelineConfig(band_half_width=5))

    def test_validate_is_idempotent(self):
        cfg = validate_config(PipelineConfig(stft_window=2048, stft_overlap=0.25))
        assert validate_config(cfg) == cfg

    def test_validate_normalizes_numeric_types(self):
        cfg = validate_config(PipelineConfig(sample_rate_hz=48000.0, stft_window=4096.0))
        assert isinstance(cfg.sample_rate_hz, int)
        assert isinstance(cfg.stft_window, int)

    def test_config_file_roundtrip(self, tmp_path):
        cfg = PipelineConfig(stft_window=2048, stft_overlap=0.75, band_half_width=8,
                             rng_seed=17, per_column_norm=True)
        path = tmp_path / "pipeline.cfg"
        save_config(cfg, path)
        assert load_config(path) == validate_config(cfg)

    def test_config_file_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("carrier_hz = 18000\nwibble = 3\n")
        with pytest.raises(ValueError):
            load_config(path)

    def test_config_file_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "sparse.cfg"
        path.write_text("# comment\n\nstft_window = 1024  # inline\n")
        assert load_config(path).stft_window == 1024


class TestContainers:
    def test_waveform_duration(self):
        w = Waveform(np.zeros(48000), 48000)
        assert w.duration_s == 1.0

    def test_waveform_rejects_2d(self):
        with pytest.raises(ShapeMismatch):
            Waveform(np.zeros((4, 4)), 48000)

    def test_feature_tensor_frame_mismatch_rejected(self):
        with pytest.raises(ShapeMismatch):
            FeatureTensor(np.zeros((5, 4)), np.zeros((6, 2)))

    def test_feature_tensor_ir_must_have_two_columns(self):
        with pytest.raises(ShapeMismatch):
            FeatureTensor(np.zeros((5, 4)), np.zeros((5, 3)))

    def test_ir_stream_times(self):
        s = IrStream((IrEvent(0.5, 30.0, 10.0), IrEvent(1.5, 40.0, -20.0)), 2.5)
        assert np.allclose(s.times(), [0.5, 1.5])
        assert not s.is_empty
        assert IrStream((), 2.5).is_empty

    def test_record_key_uniqueness_enforced(self):
        r = make_record()
        with pytest.raises(ValueError):
            Dataset(PipelineConfig(), (r, r))

    def test_dataset_manifest_counts(self):
        records = [make_record(user=u, gesture=g, rep=r)
                   for u in (0, 1)
                   for g in (GestureClass.SNAP, GestureClass.ERASE)
                   for r in range(3)]
        ds = Dataset(PipelineConfig(), tuple(records))
        assert ds.manifest[0][int(GestureClass.SNAP)] == 3
        assert ds.manifest[1][int(GestureClass.ERASE)] == 3
        assert ds.users() == [0, 1]
        assert len(ds) == 12

    def test_dataset_filter(self):
        records = [make_record(user=u) for u in range(4)]
        ds = Dataset(PipelineConfig(), tuple(records))
        sub = ds.filter(lambda r: r.user_id < 2)
        assert sub.users() == [0, 1]
        assert sub.config == ds.config


class TestDeterministicRng:
    def test_same_key_same_stream(self):
        a = derive_rng(7, 1, 2, 3).normal(size=8)
        b = derive_rng(7, 1, 2, 3).normal(size=8)
        assert np.array_equal(a, b)

    def test_different_keys_differ(self):
        a = derive_rng(7, 1, 2, 3).normal(size=8)
        b = derive_rng(7, 1, 2, 4).normal(size=8)
        assert not np.array_equal(a, b)

    def test_key_order_matters(self):
        a = derive_rng(7, 1, 2).normal(size=8)
        b = derive_rng(7, 2, 1).normal(size=8)
        assert not np.array_equal(a, b)


class TestDatasetOnDisk:
    def _dataset(self, with_raw=False):
        records = []
        for u in range(2):
            for g in (GestureClass.FLICK_LEFT, GestureClass.TAP):
                kw = {}
                if with_raw:
                    rng = np.random.default_rng(u * 10 + int(g))
                    kw["wave"] = Waveform(rng.normal(size=2000), 48000)
                    kw["ir_stream"] = IrStream((IrEvent(0.4, 55.0, 12.5),), 2.5)
                records.append(make_record(user=u, gesture=g, **kw))
        return Dataset(PipelineConfig(), tuple(records))

    def test_roundtrip_features(self, tmp_path):
        ds = self._dataset()
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        assert back.config == ds.config
        assert len(back) == len(ds)
        for a, b in zip(ds.records, back.records):
            assert a.key == b.key
            assert a.provenance == b.provenance
            assert a.segmentation_mode == b.segmentation_mode
            # storage is 32-bit, so roundtrip is float32-exact
            np.testing.assert_allclose(b.features.doppler, a.features.doppler,
                                       rtol=0, atol=1e-6)
            np.testing.assert_allclose(b.features.ir, a.features.ir, rtol=0, atol=1e-6)

    def test_roundtrip_raw_signals(self, tmp_path):
        ds = self._dataset(with_raw=True)
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        for a, b in zip(ds.records, back.records):
            assert b.wave is not None and b.ir_stream is not None
            assert b.wave.sample_rate_hz == a.wave.sample_rate_hz
            np.testing.assert_allclose(b.wave.samples, a.wave.samples, rtol=0, atol=1e-6)
            assert len(b.ir_stream.events) == 1
            assert b.ir_stream.events[0].speed == pytest.approx(55.0)
            assert b.ir_stream.duration_s == pytest.approx(2.5)

    def test_save_twice_is_byte_identical(self, tmp_path):
        ds = self._dataset(with_raw=True)
        save_dataset(ds, tmp_path / "a")
        save_dataset(ds, tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_counts_written(self, tmp_path):
        import json
        ds = self._dataset()
        out = save_dataset(ds, tmp_path / "ds")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["n_records"] == 4
        assert manifest["counts"]["0"][str(int(GestureClass.TAP))] == 1
