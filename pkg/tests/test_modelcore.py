import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsec import modelcore as mc
from gridsec import synthgrid as sg


def make_samples(n=10, seed0=100, grid="small", macros=2, nets=40):
    samples = []
    for i in range(n):
        spec = sg.DesignSpec(seed=seed0 + i, num_macros=macros, macro_size_range=(4, 6),
                             num_nets=nets, net_span_scale=3.0, ff_count=8, tau=0.5,
                             smoothing_k=3, size_class=grid, family="t")
        s = sg.generate_design(spec)
        s.id = f"s{i}"
        s.design_name = f"d{i % 4}"
        s.label = sg.oracle_label(s.features, sg.OracleParams(0.12, 3))
        samples.append(s)
    return samples


@pytest.fixture(scope="module")
def small_set():
    return make_samples(10)


@pytest.fixture(scope="module")
def trained(small_set):
    return mc.train(small_set, mc.TrainConfig(epochs=6, seed=3))


class TestTraining:
    def test_memorizes_single_sample(self, small_set):
        model = mc.train(small_set[:1], mc.TrainConfig(epochs=200, batch_size=1, seed=0))
        assert model.train_history[-1] < 0.1 * model.train_history[0]

    def test_same_seed_identical_weights_bitwise(self, small_set):
        a = mc.train(small_set, mc.TrainConfig(epochs=3, seed=5))
        b = mc.train(small_set, mc.TrainConfig(epochs=3, seed=5))
        for (ka, va), (kb, vb) in zip(a.net.state_dict().items(), b.net.state_dict().items()):
            assert ka == kb
            assert torch.equal(va, vb), ka

    def test_final_loss_below_first(self, trained):
        assert trained.train_history[-1] < trained.train_history[0]

    def test_nonfinite_loss_names_learning_rate(self, small_set):
        # large enough to overflow float32 activations into NaN
        with pytest.raises(mc.TrainingError, match="learning rate"):
            mc.train(small_set, mc.TrainConfig(epochs=6, lr=1e30, seed=0))

    def test_requires_labels(self, small_set):
        unlabeled = [sg.LayoutSample(id="u", design_name="d", family="t", size_class="small",
                                     features=small_set[0].features)]
        with pytest.raises(ValueError, match="label"):
            mc.train(unlabeled, mc.TrainConfig(epochs=1, seed=0))

    def test_mixed_grid_sizes_train(self):
        mix = make_samples(4, grid="small") + make_samples(4, seed0=300, grid="middle")
        model = mc.train(mix, mc.TrainConfig(epochs=2, seed=1))
        assert len(model.train_history) == 2


class TestPredict:
    def test_outputs_in_unit_interval(self, trained, small_set):
        p = mc.predict(trained, small_set[0].features)
        assert p.shape == small_set[0].label.shape
        assert p.min() >= 0.0 and p.max() <= 1.0

    def test_duplicated_input_identical_rows(self, trained, small_set):
        X = np.stack([small_set[0].features, small_set[0].features])
        p = mc.predict(trained, X)
        assert np.array_equal(p[0], p[1])

    def test_zero_weight_model_outputs_half(self):
        model = mc.build_grid_model(in_channels=4, seed=0)
        with torch.no_grad():
            for p in model.net.parameters():
                p.zero_()
        X = np.random.default_rng(0).random((16, 16, 4)).astype(np.float32)
        assert np.allclose(mc.predict(model, X), 0.5)

    def test_channel_mismatch_raises(self, trained):
        with pytest.raises(ValueError, match="channels"):
            mc.predict(trained, np.zeros((16, 16, 3), dtype=np.float32))


def bruteforce_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestAUC:
    def test_perfect_ranking(self):
        assert mc.pooled_auc(np.array([0.9, 0.8, 0.1, 0.2]), np.array([1, 1, 0, 0])) == 1.0

    def test_constant_predictions(self):
        assert mc.pooled_auc(np.full(10, 0.5), np.array([1, 0] * 5)) == 0.5

    def test_eight_cell_toy_matches_pair_counting(self):
        scores = np.array([0.1, 0.4, 0.35, 0.8, 0.65, 0.9, 0.5, 0.5])
        labels = np.array([0, 0, 1, 1, 0, 1, 1, 0])
        assert mc.pooled_auc(scores, labels) == pytest.approx(bruteforce_auc(scores, labels))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(4, 64))
    def test_rank_auc_equals_pair_counting(self, seed, n):
        rng = np.random.default_rng(seed)
        scores = rng.choice([0.1, 0.25, 0.5, 0.7, 0.7, 0.9], size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] ^= 1
        assert mc.pooled_auc(scores, labels) == pytest.approx(bruteforce_auc(scores, labels), abs=1e-12)

    def test_single_class_pool_names_class(self, trained, small_set):
        s = small_set[0]
        s_neg = sg.LayoutSample(id="n", design_name="d", family="t", size_class="small",
                                features=s.features, label=np.zeros_like(s.label))
        with pytest.raises(mc.MetricsError, match="negative"):
            mc.evaluate_auc(trained, [s_neg])
        s_pos = sg.LayoutSample(id="p", design_name="d", family="t", size_class="small",
                                features=s.features, label=np.ones_like(s.label))
        with pytest.raises(mc.MetricsError, match="positive"):
            mc.evaluate_auc(trained, [s_pos])


class _LinearNet(torch.nn.Module):
    """Per-cell linear map on channel 0: a*x + b (identity-style test double)."""

    def __init__(self, a=1.0, b=0.0):
        super().__init__()
        self.a = torch.nn.Parameter(torch.tensor(float(a), dtype=torch.float64))
        self.b = torch.nn.Parameter(torch.tensor(float(b), dtype=torch.float64))

    def forward(self, x):
        return self.a * x[:, 0] + self.b


def linear_model(a=1.0, b=0.0):
    return mc.GridModel(_LinearNet(a, b), kind="grid", in_channels=1, output="identity")


class TestInputGradient:
    def test_linear_sum_gradient_is_coefficient(self):
        model = linear_model(a=2.5)
        X = np.random.default_rng(0).random((6, 6, 1))
        grad = mc.input_gradient(model, X, mc.ScalarLoss(lambda out: out.sum()))
        assert np.allclose(grad, 2.5)

    def test_zero_weight_model_zero_gradient(self):
        model = mc.build_grid_model(in_channels=4, seed=0)
        with torch.no_grad():
            for p in model.net.parameters():
                p.zero_()
        X = np.random.default_rng(1).random((16, 16, 4)).astype(np.float32)
        y = np.zeros((16, 16), dtype=np.float32)
        grad = mc.input_gradient(model, X, mc.CellLoss(y))
        assert np.all(grad == 0.0)

    def test_matches_central_finite_differences(self):
        model = mc.build_grid_model(in_channels=4, seed=2)
        model.net.double()
        rng = np.random.default_rng(3)
        X = rng.random((16, 16, 4))
        y = (rng.random((16, 16)) > 0.8).astype(np.float64)
        spec = mc.CellLoss(y)
        grad = mc.input_gradient(model, X, spec)
        eps = 1e-6
        for _ in range(20):
            i, j, c = rng.integers(16), rng.integers(16), rng.integers(4)
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j, c] += eps
            Xm[i, j, c] -= eps
            with torch.no_grad():
                lp = mc.loss_value(model, mc.features_to_input(model, Xp), spec).item()
                lm = mc.loss_value(model, mc.features_to_input(model, Xm), spec).item()
            fd = (lp - lm) / (2 * eps)
            denom = max(abs(fd), 1e-8)
            assert abs(grad[i, j, c] - fd) / denom <= 1e-4

    def test_match_target_gradient_fd(self):
        model = mc.build_grid_model(in_channels=4, seed=5)
        model.net.double()
        rng = np.random.default_rng(6)
        X = rng.random((16, 16, 4))
        target = rng.random((16, 16))
        spec = mc.MatchTarget(target)
        grad = mc.input_gradient(model, X, spec)
        eps = 1e-6
        for _ in range(10):
            i, j, c = rng.integers(16), rng.integers(16), rng.integers(4)
            Xp, Xm = X.copy(), X.copy()
            Xp[i, j, c] += eps
            Xm[i, j, c] -= eps
            with torch.no_grad():
                lp = mc.loss_value(model, mc.features_to_input(model, Xp), spec).item()
                lm = mc.loss_value(model, mc.features_to_input(model, Xm), spec).item()
            fd = (lp - lm) / (2 * eps)
            assert abs(grad[i, j, c] - fd) / max(abs(fd), 1e-8) <= 1e-4

    def test_parameter_gradients_match_fd(self):
        model = mc.build_grid_model(in_channels=4, seed=8)
        model.net.double()
        rng = np.random.default_rng(9)
        X = rng.random((16, 16, 4))
        y = (rng.random((16, 16)) > 0.8).astype(np.float64)
        x = mc.features_to_input(model, X)
        target = torch.from_numpy(y).unsqueeze(0)
        model.net.train()
        loss = torch.nn.functional.binary_cross_entropy_with_logits(model.net(x), target)
        loss.backward()
        params = list(model.net.parameters())
        model.net.eval()
        eps = 1e-6
        for _ in range(10):
            p = params[int(rng.integers(len(params)))]
            idx = tuple(int(rng.integers(d)) for d in p.shape)
            with torch.no_grad():
                p[idx] += eps
            model.net.train()
            with torch.no_grad():
                lp = torch.nn.functional.binary_cross_entropy_with_logits(model.net(x), target).item()
            with torch.no_grad():
                p[idx] -= 2 * eps
            with torch.no_grad():
                lm = torch.nn.functional.binary_cross_entropy_with_logits(model.net(x), target).item()
            with torch.no_grad():
                p[idx] += eps
            model.net.eval()
            fd = (lp - lm) / (2 * eps)
            a = p.grad[idx].item()
            # 1e-6 floor keeps dead paths (fd at FD noise level) meaningful
            assert abs(a - fd) / max(abs(fd), abs(a), 1e-6) <= 1e-4


class TestBNStats:
    def test_fresh_model_has_identity_stats(self):
        model = mc.build_grid_model(in_channels=4, seed=0)
        for state in mc.bn_stats(model):
            assert np.allclose(state.mean, 0.0)
            assert np.allclose(state.var, 1.0)
            assert state.momentum == 0.1

    def test_layer_order_and_channel_counts(self, trained):
        states = mc.bn_stats(trained)
        assert [len(s.mean) for s in states] == [16, 32, 32, 16]
        assert all((s.var >= 0).all() for s in states)

    def test_no_bn_layers_raises(self):
        with pytest.raises(ValueError, match="batch-norm"):
            mc.bn_stats(linear_model())

    def test_constant_zero_inputs_drive_first_mean_to_zero(self):
        model = mc.build_grid_model(in_channels=4, seed=1)
        zeros = [sg.LayoutSample(id=f"z{i}", design_name="z", family="t", size_class="small",
                                 features=np.zeros((16, 16, 4), dtype=np.float32),
                                 label=np.zeros((16, 16), dtype=np.uint8)) for i in range(4)]
        trained = mc.train(zeros, mc.TrainConfig(epochs=30, seed=1), init_model=model)
        first = mc.bn_stats(trained)[0]
        # conv bias is zero-initialized, so BN inputs are exactly zero
        assert np.allclose(first.mean, 0.0, atol=1e-6)

    def test_running_stats_match_streaming_replay(self, small_set):
        # Freeze weights, stream batches in train mode, and replay the EMA
        # recurrence (momentum 0.1, unbiased batch variance) independently.
        model = mc.build_grid_model(in_channels=4, seed=4)
        layer = model.net.bn1
        captured = []
        hook = layer.register_forward_pre_hook(lambda m, inp: captured.append(inp[0].detach()))
        model.net.train()
        batches = [np.stack([s.features for s in small_set[i:i + 4]]) for i in (0, 4)]
        with torch.no_grad():
            for b in batches:
                model.net(mc.features_to_input(model, b))
        hook.remove()
        mean, var = np.zeros(16), np.ones(16)
        for x in captured:
            bm = x.mean(dim=(0, 2, 3)).numpy()
            bv = x.var(dim=(0, 2, 3), unbiased=True).numpy()
            mean = 0.9 * mean + 0.1 * bm
            var = 0.9 * var + 0.1 * bv
        state = mc.bn_stats(model)[0]
        assert np.allclose(state.mean, mean, atol=1e-6)
        assert np.allclose(state.var, var, atol=1e-6)


class TestCheckpoint:
    def test_roundtrip_predictions_bit_exact(self, trained, small_set, tmp_path):
        path = str(tmp_path / "ckpt.npz")
        mc.save_checkpoint(trained, path)
        loaded = mc.load_checkpoint(path)
        X = small_set[0].features
        assert np.array_equal(mc.predict(trained, X), mc.predict(loaded, X))
        assert loaded.train_config == trained.train_config

    def test_tensor_map_is_float32(self, trained, tmp_path):
        path = str(tmp_path / "ckpt.npz")
        mc.save_checkpoint(trained, path)
        with np.load(path) as data:
            for name in data.files:
                if name.startswith("t:") and "num_batches" not in name:
                    assert data[name].dtype == np.float32

    def test_clip_model_roundtrip(self, tmp_path):
        clips = [sg.generate_clip(i, sg.ClipParams()) for i in range(12)]
        model = mc.train_clip_model(clips, mc.TrainConfig(epochs=3, seed=0))
        path = str(tmp_path / "clip.npz")
        mc.save_checkpoint(model, path)
        loaded = mc.load_checkpoint(path)
        X = clips[0].pattern.astype(np.float32)
        assert np.array_equal(mc.predict(model, X), mc.predict(loaded, X))


class TestClipModel:
    def test_train_and_evaluate(self):
        clips = [sg.generate_clip(i, sg.ClipParams()) for i in range(40)]
        labels = [c.hotspot for c in clips]
        assert any(labels) and not all(labels)
        model = mc.train_clip_model(clips, mc.TrainConfig(epochs=10, seed=0))
        rep = mc.evaluate_clip_auc(model, clips)
        assert rep.auc > 0.8
        probs = mc.predict(model, np.stack([c.pattern for c in clips]).astype(np.float32))
        assert probs.shape == (40,)
        assert probs.min() >= 0 and probs.max() <= 1
