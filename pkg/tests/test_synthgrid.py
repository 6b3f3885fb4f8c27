import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsec import synthgrid as sg


def spec_with(**kw):
    base = dict(seed=7, num_macros=1, macro_size_range=(4, 8), num_nets=40,
                net_span_scale=3.0, ff_count=10, tau=0.3, smoothing_k=3,
                size_class="small", family="t")
    base.update(kw)
    return sg.DesignSpec(**base)


class TestTypes:
    def test_grid_shape_invariants(self):
        sg.GridShape(8, 8, 2)
        with pytest.raises(ValueError):
            sg.GridShape(7, 8, 2)
        with pytest.raises(ValueError):
            sg.GridShape(8, 8, 1)

    def test_design_spec_validation(self):
        with pytest.raises(ValueError):
            spec_with(tau=0.0)
        with pytest.raises(ValueError):
            spec_with(smoothing_k=2)
        with pytest.raises(ValueError):
            spec_with(size_class="tiny")

    def test_size_class_table(self):
        assert sg.SIZE_CLASS_GRID == {"small": 32, "middle": 48, "large": 64}


class TestGenerateDesign:
    def test_no_macros_gives_empty_channel0(self):
        s = sg.generate_design(spec_with(num_macros=0))
        assert s.features[:, :, 0].sum() == 0.0

    def test_determinism_bit_identical(self):
        a = sg.generate_design(spec_with())
        b = sg.generate_design(spec_with())
        assert np.array_equal(a.features, b.features)

    def test_single_macro_area_matches_rng_replay(self):
        # Replays the documented draw order (width, height, x0, y0).
        spec = spec_with(seed=7, num_macros=1)
        s = sg.generate_design(spec)
        rng = np.random.default_rng(7)
        lo, hi = spec.macro_size_range
        mw = int(rng.integers(lo, hi + 1))
        mh = int(rng.integers(lo, hi + 1))
        assert s.features[:, :, 0].sum() == mw * mh

    def test_feature_range(self):
        s = sg.generate_design(spec_with(num_macros=3, num_nets=200, net_span_scale=6.0))
        assert s.features.min() >= 0.0 and s.features.max() <= 1.0
        assert s.features.shape == (32, 32, 4)

    def test_placement_failure_names_spec(self):
        # 30x30 macros cannot tile a 32x32 grid three times without overlap.
        spec = spec_with(num_macros=3, macro_size_range=(30, 30))
        with pytest.raises(sg.GenerationError, match="num_macros=3"):
            sg.generate_design(spec)

    def test_clock_channel_binary(self):
        s = sg.generate_design(spec_with(ff_count=12))
        ch3 = s.features[:, :, 3]
        assert set(np.unique(ch3)) <= {0.0, 1.0}
        assert ch3.sum() >= 12  # sites plus connecting runs


def naive_mean_filter(grid, k):
    r = k // 2
    d, h = grid.shape
    out = np.zeros((d, h), dtype=np.float64)
    for i in range(d):
        for j in range(h):
            acc = 0.0
            cnt = 0
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    if 0 <= i + di < d and 0 <= j + dj < h:
                        acc += grid[i + di, j + dj]
                        cnt += 1
            out[i, j] = acc / cnt
    return out


class TestOracle:
    def test_all_zero_features_all_zero_label(self):
        feats = np.zeros((16, 16, 4), dtype=np.float32)
        lab = sg.oracle_label(feats, sg.OracleParams(0.2, 3))
        assert lab.sum() == 0

    def test_uniform_over_threshold_all_ones(self):
        feats = np.zeros((16, 16, 4), dtype=np.float32)
        feats[:, :, 1] = 0.5  # w_net * 0.5 = 0.35 > tau
        lab = sg.oracle_label(feats, sg.OracleParams(0.2, 3))
        assert lab.min() == 1

    def test_macro_cells_never_positive(self):
        feats = np.zeros((16, 16, 4), dtype=np.float32)
        feats[:, :, 1] = 0.9
        feats[2:6, 2:6, 0] = 1.0
        lab = sg.oracle_label(feats, sg.OracleParams(0.2, 3))
        assert lab[2:6, 2:6].sum() == 0
        assert lab[10:, 10:].min() == 1

    def test_blob_matches_bruteforce_filter(self):
        rng = np.random.default_rng(0)
        feats = np.zeros((20, 20, 4), dtype=np.float32)
        feats[7:12, 7:12, 1] = rng.random((5, 5), dtype=np.float32)
        params = sg.OracleParams(0.05, 5)
        lab = sg.oracle_label(feats, params)
        score = naive_mean_filter(
            params.w_net * feats[:, :, 1].astype(np.float64)
            + params.w_density * feats[:, :, 2].astype(np.float64),
            5,
        )
        expect = ((score > params.tau) & (feats[:, :, 0] == 0)).astype(np.uint8)
        assert np.array_equal(lab, expect)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3, 5]))
    def test_mean_filter_equals_naive_loop_bitwise(self, seed, k):
        rng = np.random.default_rng(seed)
        grid = rng.random((12, 9))
        fast = sg.mean_filter(grid, k)
        slow = naive_mean_filter(grid, k)
        assert np.array_equal(fast, slow)

    def test_oracle_soundness_on_random_samples(self):
        # The production path equals the naive reimplementation cell-for-cell.
        for seed in range(50):
            s = sg.generate_design(spec_with(seed=seed, num_macros=2, macro_size_range=(4, 6)))
            params = sg.OracleParams(0.08, 3)
            lab = sg.oracle_label(s.features, params)
            f = s.features.astype(np.float64)
            score = naive_mean_filter(params.w_net * f[:, :, 1] + params.w_density * f[:, :, 2], 3)
            expect = ((score > params.tau) & (f[:, :, 0] == 0)).astype(np.uint8)
            assert np.array_equal(lab, expect)


class TestClips:
    def test_single_rect_never_hotspot(self):
        assert sg.hotspot_rule([(2, 2, 4, 4)], s_min=100.0) is False

    def test_pair_at_boundary_spacing(self):
        # centers 10 apart: hotspot iff s_min > 10
        rects = [(0, 0, 2, 2), (10, 0, 2, 2)]
        assert sg.hotspot_rule(rects, s_min=11.0) is True
        assert sg.hotspot_rule(rects, s_min=10.0) is False

    def test_generated_labels_match_bruteforce(self):
        params = sg.ClipParams()
        for seed in range(100):
            clip = sg.generate_clip(seed, params)
            # re-derive rects is not possible from the pattern alone, so
            # check the label against a pairwise check over connected
            # components of the pattern instead
            from scipy.ndimage import label as cc, find_objects

            comp, n = cc(clip.pattern)
            rects = []
            for sl in find_objects(comp):
                rects.append((sl[0].start, sl[1].start,
                              sl[0].stop - sl[0].start, sl[1].stop - sl[1].start))
            assert clip.hotspot == sg.hotspot_rule(rects, params.s_min)

    def test_pattern_binary(self):
        clip = sg.generate_clip(5, sg.ClipParams())
        assert set(np.unique(clip.pattern)) <= {0, 1}


class TestBuildAndSplit:
    def test_manifest_counts_and_unique_ids(self, tmp_path):
        cfg = sg.DatasetConfig(
            global_seed=1,
            families=(sg.FamilyConfig("t", 2, 3, "small", (0, 1), 30, 2.0, 6),),
            make_split=False,
        )
        man = sg.build_dataset(cfg, str(tmp_path / "ds"))
        assert len(man.samples) == 6
        assert len({r.id for r in man.samples}) == 6

    def test_rebuild_is_byte_identical(self, tmp_path):
        cfg = sg.DatasetConfig(
            global_seed=3,
            families=(sg.FamilyConfig("t", 2, 2, "small", (0, 1), 30, 2.0, 6),),
            make_split=False,
        )
        man1 = sg.build_dataset(cfg, str(tmp_path / "a"))
        sg.build_dataset(cfg, str(tmp_path / "b"))
        for rec in man1.samples:
            a = (tmp_path / "a" / rec.file).read_bytes()
            b = (tmp_path / "b" / rec.file).read_bytes()
            assert a == b
        assert (tmp_path / "a" / "manifest.json").read_text() == \
               (tmp_path / "b" / "manifest.json").read_text()

    def test_manifest_roundtrip_lossless(self, tmp_path):
        cfg = sg.DatasetConfig(
            global_seed=5,
            families=(sg.FamilyConfig("t", 10, 2, "small", (0, 0), 20, 2.0, 5),),
        )
        man = sg.build_dataset(cfg, str(tmp_path / "ds"))
        loaded = sg.load_manifest(str(tmp_path / "ds" / "manifest.json"))
        assert loaded.as_dict() == man.as_dict()

    def test_sample_file_layout(self, tmp_path):
        cfg = sg.DatasetConfig(
            global_seed=5,
            families=(sg.FamilyConfig("t", 1, 1, "small", (1, 1), 20, 2.0, 5),),
            make_split=False,
        )
        man = sg.build_dataset(cfg, str(tmp_path / "ds"))
        rec = man.samples[0]
        assert rec.feature_offset == 0
        assert rec.label_offset == rec.d * rec.h * rec.c * 4
        s = sg.load_sample(str(tmp_path / "ds"), rec)
        raw = (tmp_path / "ds" / rec.file).read_bytes()
        feats = np.frombuffer(raw, dtype="<f4", count=rec.d * rec.h * rec.c)
        assert np.array_equal(feats.reshape(rec.d, rec.h, rec.c), s.features)

    def test_calibration_unreachable_target_raises(self):
        feats = [np.zeros((16, 16, 4), dtype=np.float32)]
        with pytest.raises(sg.CalibrationError):
            sg.calibrate_tau(feats, 3, 0.15, 0.03)

    def _toy_manifest(self, designs, layouts=10):
        recs = []
        for d in range(designs):
            for li in range(layouts):
                recs.append(sg.SampleRecord(
                    id=f"d{d:02d}-{li:03d}", design=f"d{d:02d}", family="t",
                    size_class="small", file="", d=32, h=32, c=4,
                    feature_offset=0, label_offset=4096))
        return sg.DatasetManifest("v", 0, recs, None, {})

    def test_exact_ratio_case(self):
        man = self._toy_manifest(10)
        split = sg.split_dataset(man, seed=0)
        assert len(split.victim_train) == 40
        assert len(split.test) == 10
        assert len(split.attacker_unlabeled) == 40
        assert len(split.attacker_labeled) == 10

    def test_too_few_designs(self):
        with pytest.raises(sg.SplitError):
            sg.split_dataset(self._toy_manifest(9), seed=0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_split_disjoint_and_design_exclusive(self, seed):
        man = self._toy_manifest(20, layouts=7)
        split = sg.split_dataset(man, seed=seed)
        parts = [set(split.victim_train), set(split.test),
                 set(split.attacker_unlabeled), set(split.attacker_labeled)]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not parts[i] & parts[j]
        assert set().union(*parts) == {r.id for r in man.samples}
        # no design name straddles two partitions: exhaustive scan
        for part_a in range(4):
            designs_a = {i.rsplit("-", 1)[0] for i in parts[part_a]}
            for part_b in range(part_a + 1, 4):
                designs_b = {i.rsplit("-", 1)[0] for i in parts[part_b]}
                assert not designs_a & designs_b

    def test_ratio_tolerance_enforced(self):
        man = self._toy_manifest(20, layouts=5)
        split = sg.split_dataset(man, seed=1)
        total = 100
        assert abs(len(split.victim_train) / total - 0.40) <= 0.02
        assert abs(len(split.attacker_labeled) / total - 0.10) <= 0.02

    def test_infeasible_ratios_raise(self):
        # 11 equal designs admit no 40/10/40/10 assignment within +/-2%.
        with pytest.raises(sg.SplitError, match="target"):
            sg.split_dataset(self._toy_manifest(11), seed=1)
