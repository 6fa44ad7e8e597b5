"""Trainer: optimizer, freezing rounds, regret, reversion, full loop."""

import json
import math

import numpy as np
import pytest

from pkan.cost import CostWeights, total_cost
from pkan.errors import ConfigError, ProtocolError, TrainingDiverged
from pkan.network import build_network, calibrate_input
from pkan.spaces import default_spaces, get_space
from pkan.splines import edge_eval_grid, fit_spline
from pkan.training import (
    Adam,
    RegretEntry,
    TrainingData,
    finetune,
    fix_round,
    force_fix,
    load_checkpoint,
    pretrain,
    regret_check,
    revert_edges,
    run,
    save_checkpoint,
)

SPACES = default_spaces()


def make_data(fn, n=200, seed=0, xlo=0.0, xhi=1.0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(xlo, xhi, n)
    y = fn(x)
    n_train = int(0.8 * n)
    return TrainingData(x[:n_train], y[:n_train], x[n_train:], y[n_train:])


class TestAdam:
    def test_step_moves_parameters(self):
        opt = Adam(lr=0.1)
        params = {("w",): np.array([1.0, 2.0])}
        grads = {("w",): np.array([1.0, -1.0])}
        opt.step(params, grads)
        assert params[("w",)][0] < 1.0 and params[("w",)][1] > 2.0

    def test_stale_parameter_set_is_protocol_error(self):
        opt = Adam()
        opt.step({("a",): np.zeros(2)}, {("a",): np.ones(2)})
        with pytest.raises(ProtocolError):
            opt.step({("b",): np.zeros(2)}, {("b",): np.ones(2)})
        opt.reset()
        opt.step({("b",): np.zeros(2)}, {("b",): np.ones(2)})  # fine after reset

    def test_reset_clears_state_and_counts(self):
        opt = Adam()
        opt.step({("a",): np.zeros(1)}, {("a",): np.ones(1)})
        assert opt.t == 1
        opt.reset()
        assert opt.t == 0 and not opt.m and opt.reset_count == 1

    def test_serialization_round_trip(self):
        opt = Adam(lr=0.05)
        params = {("edge", 0, 0, 0): np.array([0.5, -0.5]), ("bias", 0): np.array([0.1])}
        grads = {k: np.ones_like(v) for k, v in params.items()}
        opt.step(params, grads)
        clone = Adam.from_doc(opt.to_doc())
        assert clone.t == opt.t and clone.lr == opt.lr
        for key in params:
            np.testing.assert_array_equal(clone.m[key], opt.m[key])
            np.testing.assert_array_equal(clone.v[key], opt.v[key])


class TestPretrain:
    def test_linear_target_converges(self):
        net = build_network([1, 1], seed=0)
        data = make_data(lambda x: 2.0 * x - 0.5, seed=1)
        calibrate_input(net, data.x_train)
        w = CostWeights(alpha=1.0, beta=0.0, gamma=0.0)
        trajectory = pretrain(net, data, w, epochs=2000, spaces=SPACES)
        assert trajectory[-1].reconstruction < 1e-4

    def test_zero_epochs_rejected(self):
        net = build_network([1, 1], seed=0)
        data = make_data(np.sin, seed=2)
        with pytest.raises(ConfigError):
            pretrain(net, data, CostWeights(), epochs=0, spaces=SPACES)

    def test_strong_entropy_weight_drives_fourier_entropy_down(self):
        net = build_network([1, 1], seed=3)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=3)
        calibrate_input(net, data.x_train)
        w = CostWeights(alpha=1.0, beta=10.0, gamma=0.0)
        trajectory = pretrain(net, data, w, epochs=600, spaces=SPACES)
        ents = np.array(
            [b.per_edge[0].entropies["fourier"] for b in trajectory if b.per_edge]
        )
        half = ents[len(ents) // 2 :]
        slope = np.polyfit(np.arange(len(half)), half, 1)[0]
        assert slope <= 1e-5
        assert half[-20:].mean() < half[:20].mean()


class TestFixRound:
    def test_fourier_series_edge_is_fixed(self):
        net = build_network([1, 1], seed=4)
        grid = net.edges[(0, 0, 0)].state.spline.grid
        xs = np.linspace(-1, 1, 400)
        t = (xs + 1) / 2
        target = 0.3 + 0.5 * np.sin(2 * np.pi * t) + 0.4 * np.cos(4 * np.pi * t)
        net.edges[(0, 0, 0)].state.spline = fit_spline(np.column_stack([xs, target]), grid)
        events = fix_round(net, SPACES, r2_min=0.6, n_keep=4)
        assert len(events) == 1
        assert events[0].kind == "fourier"
        assert events[0].r2 > 0.99
        assert net.edges[(0, 0, 0)].state.is_fixed

    def test_noise_like_edges_stay_unfixed(self):
        # a fine-grid spline with iid coefficients has no sparse
        # representation in any candidate space
        not_fixed = 0
        for seed in range(10):
            net = build_network([1, 1], seed=seed, intervals=60, init_scale=1.0)
            events = fix_round(net, SPACES, r2_min=0.6, n_keep=4)
            not_fixed += not events
        assert not_fixed >= 9

    def test_already_fixed_edges_are_skipped(self):
        net = build_network([1, 1], seed=5)
        force_fix(net, (0, 0, 0), get_space("fourier"), n_keep=4)
        events = fix_round(net, SPACES, r2_min=-1.0, n_keep=4)  # gate always open
        assert events == []


class TestFinetune:
    def test_matches_pretrain_when_nothing_is_fixed(self):
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=6)
        w = CostWeights()
        net_a = build_network([1, 1], seed=7)
        net_b = build_network([1, 1], seed=7)
        calibrate_input(net_a, data.x_train)
        calibrate_input(net_b, data.x_train)
        traj_a = pretrain(net_a, data, w, epochs=50, spaces=SPACES, opt=Adam())
        traj_b, _ = finetune(net_b, data, w, epochs=50, round_index=0, spaces=SPACES, opt=Adam())
        totals_a = [b.total for b in traj_a]
        totals_b = [b.total for b in traj_b]
        assert totals_a == totals_b  # bitwise-identical trajectories
        np.testing.assert_array_equal(
            net_a.edges[(0, 0, 0)].state.spline.coefficients,
            net_b.edges[(0, 0, 0)].state.spline.coefficients,
        )

    def test_all_fixed_cost_decreases_on_representable_target(self):
        net = build_network([1, 1], seed=8)
        data = make_data(lambda x: 0.8 * np.sin(2 * np.pi * x), seed=8)
        calibrate_input(net, data.x_train)
        force_fix(net, (0, 0, 0), get_space("fourier"), n_keep=4)
        w = CostWeights(alpha=1.0, beta=1.0, gamma=0.1)
        opt = Adam()
        traj, _ = finetune(net, data, w, epochs=300, round_index=1, spaces=SPACES, opt=opt)
        assert traj[-1].entropy == 0.0  # no spline edges left
        assert traj[-1].total < traj[0].total
        assert np.mean([b.total for b in traj[-30:]]) < np.mean([b.total for b in traj[:30]])

    def test_retained_coefficient_converges_to_generating_amplitude(self):
        amplitude = 0.8
        net = build_network([1, 1], seed=9)
        data = make_data(lambda x: amplitude * np.sin(2 * np.pi * x), n=400, seed=9)
        calibrate_input(net, data.x_train)
        # seed the edge with a weak copy of the target shape, then freeze
        grid = net.edges[(0, 0, 0)].state.spline.grid
        xs = np.linspace(-1, 1, 300)
        weak = 0.1 * np.sin(2 * np.pi * (xs + 1) / 2)
        net.edges[(0, 0, 0)].state.spline = fit_spline(np.column_stack([xs, weak]), grid)
        event = force_fix(net, (0, 0, 0), get_space("fourier"), n_keep=4)
        sin_q1 = 2  # index of the sin(2*pi*u) element in the fourier ordering
        assert sin_q1 in event.indices
        w = CostWeights(alpha=1.0, beta=1.0, gamma=0.0)
        finetune(net, data, w, epochs=500, round_index=1, spaces=SPACES, opt=Adam())
        fp = net.edges[(0, 0, 0)].state.fixed
        coeff = fp.coefficients[fp.indices.index(sin_q1)]
        assert coeff == pytest.approx(amplitude, rel=0.05)

    def test_requires_fresh_optimizer_after_parameter_change(self):
        net = build_network([1, 1], seed=10)
        data = make_data(np.cos, seed=10)
        calibrate_input(net, data.x_train)
        opt = Adam()
        finetune(net, data, CostWeights(), epochs=2, round_index=0, spaces=SPACES, opt=opt)
        force_fix(net, (0, 0, 0), get_space("fourier"), n_keep=4)
        with pytest.raises(ProtocolError):
            finetune(net, data, CostWeights(), epochs=2, round_index=1, spaces=SPACES, opt=opt)
        opt.reset()
        finetune(net, data, CostWeights(), epochs=2, round_index=1, spaces=SPACES, opt=opt)


class TestRegret:
    def test_improvement_is_negative_regret(self):
        ledger = {("e",): RegretEntry(loss_before_fix=1.0, window=[0.8, 0.7])}
        assert regret_check(ledger, tau_regret=0.2) == []
        assert ledger[("e",)].regret < 0

    def test_formula_arithmetic(self):
        ledger = {("e",): RegretEntry(loss_before_fix=1.0, window=[1.5])}
        reverted = regret_check(ledger, tau_regret=0.2)
        assert reverted == [("e",)]
        assert ledger[("e",)].regret == pytest.approx(0.5)

    def test_infinite_tolerance_never_reverts(self):
        ledger = {("e",): RegretEntry(loss_before_fix=1e-9, window=[1e6])}
        assert regret_check(ledger, tau_regret=math.inf) == []

    def test_forced_bad_fix_is_reverted(self):
        # two-tone signal: excellent for fourier, poor for a 4-term bessel
        net = build_network([1, 1], seed=11)
        fn = lambda x: 3.0 * (np.sin(2 * np.pi * x) + 0.7 * np.sin(2 * np.pi * 5 * x))
        data = make_data(fn, n=300, seed=11)
        calibrate_input(net, data.x_train)
        w = CostWeights(alpha=1.0, beta=0.5, gamma=0.1, tau_regret=0.05)
        opt = Adam()
        pretrain(net, data, w, epochs=800, spaces=SPACES, opt=opt)
        q_before = total_cost(net, (data.x_val, data.y_val), w, 1, SPACES).total
        force_fix(net, (0, 0, 0), get_space("bessel"), n_keep=4)
        ledger = {(0, 0, 0): RegretEntry(loss_before_fix=q_before)}
        opt.reset()
        original = net.edges[(0, 0, 0)].state.snapshot.coefficients.copy()
        _, val_costs = finetune(net, data, w, epochs=200, round_index=1, spaces=SPACES, opt=opt)
        ledger[(0, 0, 0)].window = val_costs[-40:]
        reverted = regret_check(ledger, w.tau_regret)
        assert reverted == [(0, 0, 0)]
        revert_edges(net, reverted, ledger)
        state = net.edges[(0, 0, 0)].state
        assert not state.is_fixed
        assert np.array_equal(state.spline.coefficients, original)
        assert ledger == {}


class TestRun:
    def test_unreachable_gate_never_fixes(self):
        net = build_network([1, 1], seed=12)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=12)
        w = CostWeights(r2_min=1.01, rounds=1)
        result = run(net, data, w, SPACES, epochs_pretrain=60, epochs_finetune=30)
        assert result.net.fixed_edge_keys() == []
        assert all(not log.fixed for log in result.rounds)
        assert result.symbolic[0].kind == "spline"

    def test_sine_discovers_fourier_edge(self):
        net = build_network([1, 1], seed=13)
        data = make_data(lambda x: np.sin(2 * np.pi * x), n=256, seed=13)
        w = CostWeights(rounds=2)
        result = run(net, data, w, SPACES, epochs_pretrain=500, epochs_finetune=150)
        assert len(result.net.fixed_edge_keys()) == 1
        assert result.net.edges[(0, 0, 0)].state.fixed.kind == "fourier"
        assert result.rounds[-1].metrics["train_r2"] > 0.85

    def test_round_log_accounting(self):
        net = build_network([1, 1], seed=14)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=14)
        w = CostWeights(rounds=2)
        result = run(net, data, w, SPACES, epochs_pretrain=200, epochs_finetune=60)
        assert [log.round_index for log in result.rounds] == [0, 1, 2]
        for log in result.rounds:
            assert log.n_edges == 1
            assert 0 <= log.n_fixed_after <= log.n_edges
            doc = json.loads(log.to_json_line())
            assert doc["round"] == log.round_index

    def test_optimizer_reset_follows_parameter_changes(self):
        net = build_network([1, 1], seed=15)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=15)
        w = CostWeights(rounds=2)
        result = run(net, data, w, SPACES, epochs_pretrain=400, epochs_finetune=100)
        n_changes = sum(len(log.fixed) > 0 or len(log.reverted) > 0 for log in result.rounds)
        assert result.optimizer.reset_count >= n_changes > 0

    def test_no_parameter_change_means_no_reset(self):
        net = build_network([1, 1], seed=16)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=16)
        w = CostWeights(r2_min=1.01, rounds=2)
        result = run(net, data, w, SPACES, epochs_pretrain=60, epochs_finetune=30)
        assert result.optimizer.reset_count == 0

    def test_determinism_of_round_logs(self):
        def one():
            net = build_network([1, 2, 1], seed=17)
            data = make_data(lambda x: np.sin(2 * np.pi * x), seed=17)
            w = CostWeights(rounds=2)
            return run(net, data, w, SPACES, epochs_pretrain=120, epochs_finetune=40)

        assert one().round_logs_jsonl == one().round_logs_jsonl

    def test_divergence_raises_with_snapshot(self):
        net = build_network([1, 1], seed=18)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=18)
        w = CostWeights()
        with pytest.raises(TrainingDiverged) as exc:
            run(net, data, w, SPACES, epochs_pretrain=200, epochs_finetune=50,
                learning_rate=1e6)
        assert "model" in exc.value.snapshot
        assert isinstance(exc.value.partial_logs, list)

    def test_fixing_disabled_keeps_all_splines(self):
        net = build_network([1, 1], seed=19)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=19)
        w = CostWeights(rounds=2)
        result = run(net, data, w, SPACES, epochs_pretrain=100, epochs_finetune=40,
                     fixing=False)
        assert result.net.fixed_edge_keys() == []


class TestCheckpoint:
    def test_round_trip_preserves_forward_outputs(self, tmp_path):
        net = build_network([1, 2, 1], seed=20)
        data = make_data(lambda x: np.sin(2 * np.pi * x), seed=20)
        w = CostWeights(rounds=1)
        result = run(net, data, w, SPACES, epochs_pretrain=150, epochs_finetune=50)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, result.net, result.optimizer)
        loaded_net, loaded_opt = load_checkpoint(path)
        x = np.linspace(0.05, 0.95, 17)[:, None]
        before = result.net.forward_batch(x)
        after = loaded_net.forward_batch(x)
        np.testing.assert_allclose(after, before, atol=1e-12)
        assert loaded_opt.t == result.optimizer.t

    def test_rejects_wrong_format(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "nope"}))
        with pytest.raises(ConfigError):
            load_checkpoint(path)
