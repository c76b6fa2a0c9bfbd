import math

import numpy as np
import pytest

from gemstream.continual import (
    CSV_COLUMNS,
    MethodSpec,
    MetricsLog,
    TrainConfig,
    TrainerState,
    ewc_importance,
    expected_cum_steps,
    mas_importance,
    ogem_step,
    post_seed_step_ratio,
    regularized_gradient,
    run_method,
    train_seed,
)
from gemstream.errors import InvalidSpec, MissingImportance
from gemstream.memory import MemoryBuffer, MemoryEntry
from gemstream.model import (
    Architecture,
    Batch,
    Params,
    accuracy,
    forward_loss,
    gradient,
    init_params,
    logits,
)
from gemstream.stream import StreamSpec, generate_stream

LINEAR = Architecture(2, 0, 2)
X = np.array([1.0, -2.0])


def central_diff(fn, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (fn(xp) - fn(xm)) / (2 * h)
    return out


def state_with_memory(label, params=None):
    buf = MemoryBuffer(4)
    buf.insert(MemoryEntry(X.copy(), label, 0, 0), np.random.default_rng(0))
    params = params or Params(LINEAR, np.zeros(LINEAR.size))
    return TrainerState(params, buf, np.random.default_rng(1))


def tiny_stream(n_splits=3):
    spec = StreamSpec(d0_size=96, increment_size=30 * n_splits or 1, n_splits=n_splits, val_size=60)
    return spec, generate_stream(spec)


FAST = TrainConfig(epochs_d0=3, epochs_per_split=2, batch_size=16, memory_capacity=50)


class TestSpecs:
    def test_names(self):
        assert MethodSpec("OGem").name == "OGem-selective"
        assert MethodSpec("OGem", sampling="random").name == "OGem-random"
        assert MethodSpec("OGem", constraint_mode="multi").name == "OGem-selective-multi"
        assert MethodSpec("Ewc").name == "Ewc"
        assert MethodSpec("Mas", label="mas-x").name == "mas-x"

    def test_k_defaults(self):
        assert MethodSpec("OGem").k == 1
        assert MethodSpec("OGem", constraint_mode="multi").k == 3
        assert MethodSpec("OGem", constraint_mode="multi", refs_per_step=5).k == 5

    @pytest.mark.parametrize(
        "kw",
        [
            {"kind": "Foo"},
            {"kind": "OGem", "constraint_mode": "both"},
            {"kind": "OGem", "sampling": "greedy"},
            {"kind": "OGem", "refs_per_step": 2},
            {"kind": "OGem", "slack": -1.0},
            {"kind": "Ewc", "reg_lambda": -1.0},
            {"kind": "OGem", "memory_batch_size": 0},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InvalidSpec):
            MethodSpec(**kw)

    def test_train_config_invalid(self):
        with pytest.raises(InvalidSpec):
            TrainConfig(lr=0.0)
        with pytest.raises(InvalidSpec):
            TrainConfig(batch_size=0)


class TestSeedTraining:
    def test_step_count_and_memory(self):
        rng = np.random.default_rng(0)
        d0 = Batch(rng.standard_normal((64, 2)), rng.integers(2, size=64))
        cfg = TrainConfig(epochs_d0=5, batch_size=32, memory_capacity=40)
        state = train_seed(LINEAR, d0, cfg)
        assert state.step == 10
        assert len(state.buffer) == 40 and state.buffer.seen == 64

    def test_one_epoch_of_ten_batches(self):
        rng = np.random.default_rng(1)
        d0 = Batch(rng.standard_normal((100, 2)), rng.integers(2, size=100))
        state = train_seed(LINEAR, d0, TrainConfig(epochs_d0=1, batch_size=10))
        assert state.step == 10

    def test_deterministic_and_learns(self):
        spec = StreamSpec(n_splits=0)
        s = generate_stream(spec)
        arch = Architecture(2, 16, 4)
        cfg = TrainConfig()
        a = train_seed(arch, s.d0, cfg)
        b = train_seed(arch, s.d0, cfg)
        assert a.params.values.tobytes() == b.params.values.tobytes()
        untrained = init_params(arch, int(np.random.default_rng(cfg.seed).integers(2**63)))
        assert accuracy(a.params, s.validation) >= accuracy(untrained, s.validation) + 0.20

    def test_empty_d0(self):
        with pytest.raises(InvalidSpec):
            train_seed(LINEAR, Batch(np.zeros((0, 2)), np.zeros(0)), FAST)


class TestOgemStep:
    cfg = TrainConfig(lr=0.5)

    def new_batch(self):
        return Batch(X[None, :], [0])

    def test_aligned_reference_leaves_gradient(self):
        state = state_with_memory(label=0)
        g = gradient(state.params, self.new_batch())
        ogem_step(state, self.new_batch(), MethodSpec("OGem"), self.cfg, offer=False)
        np.testing.assert_allclose(state.last_projected, g, atol=1e-15)
        np.testing.assert_allclose(state.params.values, -0.5 * g, atol=1e-15)

    @pytest.mark.parametrize("mode", ["single", "multi"])
    @pytest.mark.parametrize("sampling", ["random", "selective"])
    def test_opposed_reference_cancels(self, mode, sampling):
        state = state_with_memory(label=1)
        method = MethodSpec("OGem", constraint_mode=mode, sampling=sampling, memory_batch_size=4)
        ogem_step(state, self.new_batch(), method, self.cfg, offer=False)
        np.testing.assert_allclose(state.last_projected, 0.0, atol=1e-15)
        np.testing.assert_allclose(state.params.values, 0.0, atol=1e-15)

    def test_empty_memory_is_plain_sgd(self):
        state = TrainerState(Params(LINEAR, np.zeros(LINEAR.size)), MemoryBuffer(3), np.random.default_rng(0))
        g = gradient(state.params, self.new_batch())
        ogem_step(state, self.new_batch(), MethodSpec("OGem"), self.cfg)
        assert state.unprojected_steps == 1
        np.testing.assert_array_equal(state.params.values, -0.5 * g)
        assert len(state.buffer) == 1

    def test_offer_flag(self):
        state = state_with_memory(label=0)
        ogem_step(state, self.new_batch(), MethodSpec("OGem"), self.cfg, offer=False)
        assert state.buffer.seen == 1
        ogem_step(state, self.new_batch(), MethodSpec("OGem"), self.cfg, split_id=3)
        assert state.buffer.seen == 2 and state.buffer.entries[-1].split_id == 3

    def test_projected_step_respects_reference(self):
        rng = np.random.default_rng(4)
        arch = Architecture(2, 6, 3)
        params = init_params(arch, 0)
        buf = MemoryBuffer(20)
        for i in range(20):
            buf.insert(MemoryEntry(rng.standard_normal(2), int(rng.integers(3)), 0, i), rng)
        state = TrainerState(params, buf, np.random.default_rng(0))
        batch = Batch(rng.standard_normal((8, 2)), rng.integers(3, size=8))
        method = MethodSpec("OGem", sampling="random", memory_batch_size=20)
        probe = np.random.default_rng(0)
        ref = gradient(params, buf.sample_batch(20, probe))
        ogem_step(state, batch, method, TrainConfig(), offer=False)
        assert state.last_projected @ ref >= -1e-10 * np.linalg.norm(ref) ** 2


class TestEwc:
    def test_single_sample_is_squared_gradient(self):
        rng = np.random.default_rng(0)
        arch = Architecture(3, 4, 3)
        p = init_params(arch, 1)
        one = Batch(rng.standard_normal((1, 3)), [2])
        g = gradient(p, one)
        np.testing.assert_allclose(ewc_importance(p, one), g * g, rtol=1e-12, atol=1e-300)

    def test_loop_oracle(self):
        rng = np.random.default_rng(1)
        arch = Architecture(3, 5, 4)
        p = init_params(arch, 2)
        data = Batch(rng.standard_normal((12, 3)), rng.integers(4, size=12))
        loop = np.mean([gradient(p, data.take([i])) ** 2 for i in range(12)], axis=0)
        np.testing.assert_allclose(ewc_importance(p, data), loop, rtol=1e-12, atol=1e-300)

    def test_vanishes_at_confident_optimum(self):
        p = Params.flatten(LINEAR, [(np.array([[-50.0, 50.0], [0.0, 0.0]]), np.zeros(2))])
        data = Batch([[1.0, 0.0], [-1.0, 0.0]], [1, 0])
        assert ewc_importance(p, data).max() < 1e-40

    def test_non_negative(self):
        rng = np.random.default_rng(2)
        p = init_params(Architecture(2, 8, 3), 0)
        data = Batch(rng.standard_normal((30, 2)), rng.integers(3, size=30))
        assert np.all(ewc_importance(p, data, sample_count=10, rng=rng) >= 0)


class TestMas:
    def test_zero_params(self):
        arch = Architecture(3, 4, 2)
        data = Batch(np.ones((4, 3)), [0, 1, 0, 1])
        assert not mas_importance(Params(arch, np.zeros(arch.size)), data).any()

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        arch = Architecture(2, 5, 3)
        p = init_params(arch, seed)
        data = Batch(rng.standard_normal((4, 2)), rng.integers(3, size=4))
        per_row = [
            np.abs(
                central_diff(
                    lambda th, i=i: float(np.sum(logits(p.replace(th), data.features[i:i + 1]) ** 2)),
                    p.values,
                )
            )
            for i in range(len(data))
        ]
        np.testing.assert_allclose(mas_importance(p, data), np.mean(per_row, axis=0), rtol=1e-5, atol=1e-7)

    def test_single_sample_linear(self):
        # z = x W + b, so d||z||^2/dW_ij = 2 x_i z_j and d/db_j = 2 z_j
        W, b = np.array([[1.0, -1.0], [0.5, 2.0]]), np.array([0.1, -0.2])
        p = Params.flatten(LINEAR, [(W, b)])
        z = X @ W + b
        expected = np.concatenate([np.abs(2 * np.outer(X, z)).ravel(), np.abs(2 * z)])
        np.testing.assert_allclose(mas_importance(p, Batch(X[None, :], [0])), expected, rtol=1e-14)


class TestRegularizedGradient:
    def setup_state(self, lam_importance=1.0):
        rng = np.random.default_rng(0)
        arch = Architecture(2, 4, 3)
        p = init_params(arch, 3)
        state = TrainerState(p, MemoryBuffer(2), rng)
        state.importance = lam_importance * rng.uniform(0, 1, size=arch.size)
        state.anchor = p.values + 0.1 * rng.standard_normal(arch.size)
        batch = Batch(rng.standard_normal((5, 2)), rng.integers(3, size=5))
        return state, batch

    def test_zero_lambda_bitwise(self):
        state, batch = self.setup_state()
        out = regularized_gradient(state, batch, MethodSpec("Ewc", reg_lambda=0.0))
        assert out.tobytes() == gradient(state.params, batch).tobytes()

    def test_at_anchor(self):
        state, batch = self.setup_state()
        state.anchor = state.params.values.copy()
        out = regularized_gradient(state, batch, MethodSpec("Mas", reg_lambda=7.0))
        assert out.tobytes() == gradient(state.params, batch).tobytes()

    def test_penalised_loss_fd(self):
        state, batch = self.setup_state()
        lam = 3.0

        def penalised(th):
            loss = forward_loss(state.params.replace(th), batch)[0]
            return loss + 0.5 * lam * np.sum(state.importance * (th - state.anchor) ** 2)

        fd = central_diff(penalised, state.params.values)
        out = regularized_gradient(state, batch, MethodSpec("Ewc", reg_lambda=lam))
        np.testing.assert_allclose(out, fd, rtol=1e-5, atol=1e-7)

    def test_missing(self):
        state, batch = self.setup_state()
        state.importance = None
        with pytest.raises(MissingImportance):
            regularized_gradient(state, batch, MethodSpec("Ewc"))


class TestStepAccounting:
    def test_default_ratio_oracle(self):
        cfg = TrainConfig()
        incremental = 10 * 10 * math.ceil(200 / 32)
        full = sum((50 + 10 * n) * math.ceil((4000 + 200 * n) / 32) for n in range(1, 11))
        assert post_seed_step_ratio(4000, [200] * 10, cfg) == pytest.approx(incremental / full, rel=1e-15)

    def test_alldata_superlinear(self):
        steps = expected_cum_steps("AllData", 4000, [200] * 10, TrainConfig())
        inc = np.diff(steps)
        assert np.all(np.diff(inc) > 0)
        flat = np.diff(expected_cum_steps("NewData", 4000, [200] * 10, TrainConfig()))
        assert np.all(flat == flat[0])


class TestRunMethod:
    @pytest.mark.parametrize(
        "method",
        [
            MethodSpec("AllData"),
            MethodSpec("NewData"),
            MethodSpec("OGem", memory_batch_size=20),
            MethodSpec("OGem", constraint_mode="multi", sampling="random", memory_batch_size=20),
            MethodSpec("Ewc", importance_samples=20),
            MethodSpec("Mas", importance_samples=20),
        ],
        ids=lambda m: m.name,
    )
    def test_rows_and_steps(self, method):
        spec, s = tiny_stream()
        log = run_method(method, s, Architecture(2, 4, 4), FAST)
        sizes = [len(b) for b in s.splits]
        want = expected_cum_steps(method.kind, len(s.d0), sizes, FAST)
        assert [r.cum_steps for r in log.summary_rows()] == want
        assert [r.split for r in log.summary_rows()] == [0, 1, 2, 3]
        n_epoch_rows = FAST.epochs_d0 + sum(
            FAST.epochs_d0 + n * FAST.epochs_per_split if method.kind == "AllData" else FAST.epochs_per_split
            for n in range(1, 4)
        )
        assert len(log.epoch_rows()) == n_epoch_rows
        walls = [r.cum_wall_s for r in log.rows]
        assert walls == sorted(walls)
        assert all(r.method == method.name for r in log.rows)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_ogem_beats_newdata_on_two_drifting_splits(self, seed):
        s = generate_stream(StreamSpec(d0_size=1000, increment_size=600, n_splits=2, val_size=500, seed=seed))
        cfg = TrainConfig(epochs_d0=10, epochs_per_split=5, seed=seed)
        arch = Architecture(2, 16, 4)
        new = run_method(MethodSpec("NewData"), s, arch, cfg).final().val_acc
        ogem = run_method(MethodSpec("OGem"), s, arch, cfg).final().val_acc
        assert ogem >= new

    def test_no_splits(self):
        _, s = tiny_stream(n_splits=0)
        log = run_method(MethodSpec("OGem"), s, Architecture(2, 4, 4), FAST)
        assert len(log.rows) == FAST.epochs_d0 + 1
        assert log.final().split == 0

    def test_deterministic(self):
        _, s = tiny_stream()
        method = MethodSpec("OGem", memory_batch_size=20)
        a = run_method(method, s, Architecture(2, 4, 4), FAST)
        b = run_method(method, s, Architecture(2, 4, 4), FAST)
        assert [(r.val_acc, r.cum_steps) for r in a.rows] == [(r.val_acc, r.cum_steps) for r in b.rows]

    def test_seed_phase_shared(self):
        _, s = tiny_stream()
        arch = Architecture(2, 4, 4)
        a = run_method(MethodSpec("NewData"), s, arch, FAST)
        b = run_method(MethodSpec("Mas", importance_samples=10), s, arch, FAST)
        assert a.summary_rows()[0].val_acc == b.summary_rows()[0].val_acc

    def test_csv_roundtrip(self):
        _, s = tiny_stream()
        log = run_method(MethodSpec("NewData"), s, Architecture(2, 4, 4), FAST)
        text = log.to_csv()
        assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
        back = MetricsLog.from_csv(text)
        assert back.to_csv() == text
        assert back.method == "NewData"
        for r, q in zip(log.rows, back.rows):
            assert q.val_acc == pytest.approx(r.val_acc, rel=1e-5)
            assert (q.split, q.epoch, q.cum_steps) == (r.split, r.epoch, r.cum_steps)
        assert back.final().is_summary

    def test_csv_rejects_bad_header(self):
        with pytest.raises(ValueError):
            MetricsLog.from_csv("a,b\n1,2\n")
