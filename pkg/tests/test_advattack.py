import numpy as np
import pytest

from gridsec import advattack as aa
from gridsec import modelcore as mc
from gridsec import synthgrid as sg


@pytest.fixture(scope="module")
def grid_setup():
    samples = []
    for i in range(10):
        spec = sg.DesignSpec(seed=400 + i, num_macros=2, macro_size_range=(4, 6),
                             num_nets=50, net_span_scale=3.0, ff_count=8, tau=0.5,
                             smoothing_k=3, size_class="small", family="t")
        s = sg.generate_design(spec)
        s.id = f"s{i}"
        s.design_name = f"d{i % 3}"
        s.label = sg.oracle_label(s.features, sg.OracleParams(0.12, 3))
        samples.append(s)
    model = mc.train(samples, mc.TrainConfig(epochs=6, seed=0))
    return model, samples


@pytest.fixture(scope="module")
def clip_setup():
    params = sg.ClipParams()
    clips = [sg.generate_clip(i, params) for i in range(80)]
    model = mc.train_clip_model(clips, mc.TrainConfig(epochs=10, seed=0))
    return model, clips, params


class TestFGSM:
    def test_zero_epsilon_is_bit_exact_identity(self, grid_setup):
        model, samples = grid_setup
        s = samples[0]
        out = aa.fgsm(model, s.features, s.label, aa.PerturbationBudget(epsilon=0.0))
        assert np.array_equal(out.X_p, s.features)

    def test_linf_bound_holds(self, grid_setup):
        model, samples = grid_setup
        for s in samples[:5]:
            out = aa.fgsm(model, s.features, s.label, aa.PerturbationBudget(epsilon=0.07))
            assert out.perturbation_linf <= 0.07 + 1e-7
            assert np.abs(out.X_p - s.features).max() <= 0.07 + 1e-7

    def test_output_in_unit_box(self, grid_setup):
        model, samples = grid_setup
        out = aa.fgsm(model, samples[0].features, samples[0].label,
                      aa.PerturbationBudget(epsilon=0.5))
        assert out.X_p.min() >= 0.0 and out.X_p.max() <= 1.0

    def test_attack_degrades_pooled_auc(self, grid_setup):
        model, samples = grid_setup
        budget = aa.PerturbationBudget(epsilon=0.1)
        clean, attacked, labels = [], [], []
        for s in samples:
            out = aa.fgsm(model, s.features, s.label, budget)
            clean.append(out.clean_pred.ravel())
            attacked.append(out.attacked_pred.ravel())
            labels.append(s.label.ravel())
        labels = np.concatenate(labels)
        auc_clean = mc.pooled_auc(np.concatenate(clean), labels)
        auc_attacked = mc.pooled_auc(np.concatenate(attacked), labels)
        assert auc_attacked < auc_clean


class TestPGD:
    def test_single_step_equals_fgsm(self, grid_setup):
        model, samples = grid_setup
        s = samples[1]
        budget = aa.PerturbationBudget(epsilon=0.1, steps=1)
        f = aa.fgsm(model, s.features, s.label, budget)
        p = aa.pgd(model, s.features, s.label, budget)
        assert np.array_equal(f.X_p, p.X_p)

    def test_best_iterate_at_least_initial_loss(self, grid_setup):
        model, samples = grid_setup
        for s in samples[:4]:
            out = aa.pgd(model, s.features, s.label, aa.PerturbationBudget(epsilon=0.08, steps=5))
            assert out.attacked_loss >= out.clean_loss

    def test_dominates_fgsm_when_initialized_there(self, grid_setup):
        model, samples = grid_setup
        budget = aa.PerturbationBudget(epsilon=0.1, steps=5)
        for s in samples[:4]:
            f = aa.fgsm(model, s.features, s.label, budget)
            p = aa.pgd(model, s.features, s.label, budget, init=f.X_p)
            assert p.attacked_loss >= f.attacked_loss - 1e-9

    def test_multistep_mean_loss_beats_fgsm(self, grid_setup):
        model, samples = grid_setup
        budget = aa.PerturbationBudget(epsilon=0.1, steps=10)
        fgsm_losses, pgd_losses = [], []
        for s in samples:
            fgsm_losses.append(aa.fgsm(model, s.features, s.label, budget).attacked_loss)
            pgd_losses.append(aa.pgd(model, s.features, s.label, budget).attacked_loss)
        assert np.mean(pgd_losses) >= np.mean(fgsm_losses)

    def test_projection_keeps_ball_and_box(self, grid_setup):
        model, samples = grid_setup
        s = samples[2]
        out = aa.pgd(model, s.features, s.label,
                     aa.PerturbationBudget(epsilon=0.15, steps=8, random_start=True),
                     rng=np.random.default_rng(0))
        assert np.abs(out.X_p - s.features).max() <= 0.15 + 1e-6
        assert out.X_p.min() >= 0.0 and out.X_p.max() <= 1.0

    def test_init_outside_ball_rejected(self, grid_setup):
        model, samples = grid_setup
        s = samples[0]
        with pytest.raises(aa.AttackError, match="epsilon"):
            aa.pgd(model, s.features, s.label, aa.PerturbationBudget(epsilon=0.01, steps=1),
                   init=np.clip(s.features + 0.5, 0, 1))


class TestSRAF:
    def test_zero_budget_returns_original(self, clip_setup):
        model, clips, _ = clip_setup
        hot = next(c for c in clips if c.hotspot)
        cfg = aa.SRAFConfig(max_insertions=0)
        out = aa.insert_sraf(model, hot, cfg)
        assert np.array_equal(out.X_p, hot.pattern)
        assert out.success == (out.clean_pred < 0.5)

    def test_outputs_binary_and_spacing_legal(self, clip_setup):
        model, clips, _ = clip_setup
        cfg = aa.SRAFConfig(rect=(2, 2), max_insertions=6, min_spacing=2)
        checked = 0
        for c in clips:
            if not c.hotspot:
                continue
            out = aa.insert_sraf(model, c, cfg)
            assert set(np.unique(out.X_p)) <= {0, 1}
            assert aa.sraf_spacing_legal(c.pattern, out.X_p, cfg)
            checked += 1
            if checked >= 8:
                break
        assert checked > 0

    def test_original_foreground_untouched(self, clip_setup):
        model, clips, _ = clip_setup
        hot = next(c for c in clips if c.hotspot)
        out = aa.insert_sraf(model, hot, aa.SRAFConfig(max_insertions=5))
        assert ((hot.pattern == 1) & (out.X_p == 0)).sum() == 0

    def test_legality_checker_flags_violation(self):
        original = np.zeros((12, 12), dtype=np.uint8)
        original[2:4, 2:4] = 1
        bad = original.copy()
        bad[4:6, 2:4] = 1  # adjacent to original foreground: distance 1 < 2
        assert not aa.sraf_spacing_legal(original, bad, aa.SRAFConfig(min_spacing=2))
        ok = original.copy()
        ok[7:9, 7:9] = 1
        assert aa.sraf_spacing_legal(original, ok, aa.SRAFConfig(min_spacing=2))

    def test_legality_checker_flags_removal(self):
        original = np.zeros((8, 8), dtype=np.uint8)
        original[1:3, 1:3] = 1
        removed = np.zeros_like(original)
        assert not aa.sraf_spacing_legal(original, removed, aa.SRAFConfig())

    def test_positions_vs_bruteforce_enumeration(self):
        rng = np.random.default_rng(4)
        pattern = (rng.random((14, 14)) > 0.9).astype(np.uint8)
        cfg = aa.SRAFConfig(rect=(2, 3), min_spacing=2)
        legal = set(aa.legal_sraf_positions(pattern, cfg))
        fg = np.argwhere(pattern == 1)
        for x0 in range(0, 13):
            for y0 in range(0, 12):
                ok = True
                for dx in range(2):
                    for dy in range(3):
                        for fx, fy in fg:
                            if max(abs(x0 + dx - fx), abs(y0 + dy - fy)) < 2:
                                ok = False
                assert ((x0, y0) in legal) == ok


class TestTriggerAndPoison:
    def test_trigger_fits_validation(self):
        t = aa.Trigger(pattern=np.ones((40, 40)))
        with pytest.raises(aa.AttackError, match="fit"):
            t.region(32, 32)

    def test_stamp_locations(self):
        t = aa.Trigger(location="se")
        feats = np.zeros((16, 16, 4), dtype=np.float32)
        out = aa.stamp_trigger(t, feats)
        assert out[12:, 12:, 2].min() == 1.0
        assert out[:12, :, 2].max() == 0.0
        assert feats.sum() == 0.0  # input untouched

    def test_rate_zero_identity(self, grid_setup):
        _, samples = grid_setup
        out = aa.poison_dataset(samples, aa.Trigger(), 0.0, seed=1)
        assert all(np.array_equal(a.features, b.features) for a, b in zip(out, samples))
        assert all(np.array_equal(a.label, b.label) for a, b in zip(out, samples))

    def test_rate_one_stamps_everything(self, grid_setup):
        _, samples = grid_setup
        trigger = aa.Trigger()
        out = aa.poison_dataset(samples, trigger, 1.0, seed=1)
        for s in out:
            assert np.array_equal(s.features[0:4, 0:4, 2], trigger.pattern)
            assert s.label[0:4, 0:4].sum() == 0

    def test_quota_arithmetic(self, grid_setup):
        _, samples = grid_setup
        trigger = aa.Trigger()
        for rate in (0.1, 0.25, 0.5):
            out = aa.poison_dataset(samples, trigger, rate, seed=3)
            stamped = sum(
                1 for s in out if np.array_equal(s.features[0:4, 0:4, 2], trigger.pattern)
            )
            assert stamped == round(rate * len(samples))

    def test_clip_poisoning_flips_label(self):
        clips = [sg.generate_clip(i, sg.ClipParams()) for i in range(10)]
        trigger = aa.Trigger(target="non-hotspot")
        out = aa.poison_dataset(clips, trigger, 1.0, seed=0)
        assert all(not c.hotspot for c in out)
        assert all(c.pattern[0:4, 0:4].min() == 1 for c in out)


class TestSuccessRates:
    def _outcome(self, success):
        return aa.AttackOutcome(X_p=np.zeros(1), clean_pred=1.0, attacked_pred=0.0,
                                success=success, perturbation_linf=0.0)

    def test_all_and_none(self):
        assert aa.attack_success_rate(None, [self._outcome(True)] * 4) == 1.0
        assert aa.attack_success_rate(None, [self._outcome(False)] * 4) == 0.0

    def test_hand_counted_rate(self):
        outs = [self._outcome(True)] * 3 + [self._outcome(False)] * 17
        assert aa.attack_success_rate(None, outs) == pytest.approx(0.15)

    def test_empty_set_rejected(self):
        with pytest.raises(aa.AttackError, match="empty"):
            aa.attack_success_rate(None, [])

    def test_trigger_rate_requires_true_positives(self, grid_setup):
        model, samples = grid_setup
        neg = [sg.LayoutSample(id="n", design_name="d", family="t", size_class="small",
                               features=samples[0].features,
                               label=np.zeros_like(samples[0].label))]
        with pytest.raises(aa.AttackError, match="true-positive"):
            aa.trigger_success_rate(model, aa.Trigger(), neg)
