import math
from dataclasses import replace

import numpy as np
import pytest

from stablereinforce.advantage import AdvantageBatch
from stablereinforce.experiments import stress_check
from stablereinforce.trainer import (
    MODES,
    Adam,
    StepMetrics,
    TrainConfig,
    TrainerState,
    attach_advantages,
    collect_rollouts,
    default_tasks,
    detect_collapse,
    run_training,
    stress_batch,
    supervised_warmup,
    train_step,
)

SMALL = dict(rollout_batch=32, train_batch=16, total_steps=4, pool_size=256, eval_size=40,
             eval_every=2, warmup_steps=30, warmup_batch=32)


@pytest.fixture(scope="module")
def setup():
    cfg = TrainConfig(**SMALL)
    _, warm, _ = default_tasks(cfg)
    ref = supervised_warmup(warm, cfg, np.random.default_rng(0))
    return cfg, warm, ref


def fresh_batch(cfg, warm, ref, seed=0):
    return attach_advantages(
        collect_rollouts(ref, ref, warm[:cfg.rollout_batch], cfg, np.random.default_rng(seed)), cfg)


class TestConfig:
    def test_mode_switches(self):
        flags = {m: (TrainConfig(mode=m).preclip, TrainConfig(mode=m).advantage_filter)
                 for m in MODES}
        assert flags == {"stable": (True, True), "reinforce_pp": (False, False),
                         "wo_preclip": (False, True), "wo_filter": (True, False)}

    @pytest.mark.parametrize("kwargs", [dict(mode="ppo"), dict(train_batch=512),
                                        dict(epsilon=1.0), dict(learning_rate=0.0),
                                        dict(total_steps=-1)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def test_adam_first_step_is_signed_lr():
    opt = Adam(3, lr=0.1)
    out = opt.step(np.zeros(3), np.array([2.0, -0.5, 0.0]))
    np.testing.assert_allclose(out, [-0.1, 0.1, 0.0], atol=1e-8)


class TestTrainStep:
    def test_zero_advantages_leave_params_unchanged(self, setup):
        cfg, warm, ref = setup
        batch = fresh_batch(cfg, warm, ref)
        n = len(batch.rollout.tokens)
        batch.advantages = AdvantageBatch(np.zeros(n), np.zeros(n), np.zeros(n), np.ones(n),
                                          batch.rollout.offsets)
        state = TrainerState.create(ref, ref, cfg, np.random.default_rng(0))
        state, metrics = train_step(state, batch, cfg)
        np.testing.assert_array_equal(state.params.theta, ref.theta)
        assert metrics.mean_policy_loss == 0.0

    def test_logp_old_is_not_refreshed(self, setup):
        cfg, warm, ref = setup
        batch = fresh_batch(cfg, warm, ref)
        before = batch.logp_old.copy()
        state = TrainerState.create(ref, ref, cfg, np.random.default_rng(0))
        state, _ = train_step(state, batch, cfg)
        np.testing.assert_array_equal(batch.logp_old, before)
        assert not np.array_equal(state.params.theta, ref.theta)

    def test_requires_advantages(self, setup):
        cfg, warm, ref = setup
        batch = collect_rollouts(ref, ref, warm[:8], cfg, np.random.default_rng(0))
        with pytest.raises(ValueError):
            train_step(TrainerState.create(ref, ref, cfg, np.random.default_rng(0)), batch, cfg)

    def test_benign_modes_agree(self, setup):
        # no filter in either mode, ratios stay inside the clamp: identical updates
        cfg, warm, ref = setup
        base = replace(cfg, mode="wo_filter", updates_per_rollout=1)
        batch = fresh_batch(base, warm, ref)
        out = {}
        for mode in ("wo_filter", "reinforce_pp"):
            c = replace(base, mode=mode)
            state = TrainerState.create(ref, ref, c, np.random.default_rng(5))
            out[mode] = train_step(state, batch, c)
        np.testing.assert_allclose(out["wo_filter"][0].params.theta,
                                   out["reinforce_pp"][0].params.theta, rtol=0, atol=1e-12)
        assert out["wo_filter"][1].mean_policy_loss == pytest.approx(
            out["reinforce_pp"][1].mean_policy_loss, abs=1e-9)

    def test_stress_batch(self, setup):
        cfg, warm, ref = setup
        batch = fresh_batch(cfg, warm, ref)
        s = stress_batch(batch)
        assert s.logp_old[0] == pytest.approx(batch.logp_old[0] - 9.9)
        assert s.advantages.filtered[0] == -1.0 and s.advantages.mask[0] == 1.0
        assert s.logp_old[1:].tolist() == batch.logp_old[1:].tolist()

    def test_stress_check_separates_modes(self):
        losses = stress_check(TrainConfig(**SMALL))
        assert losses["stable"] <= 3000
        assert losses["reinforce_pp"] >= 1e4


def metrics(step, loss=0.1, length=8.0, finite=True):
    return StepMetrics(step, loss, 1.0, length, None, 0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, finite)


class TestDetectCollapse:
    def test_healthy(self):
        assert detect_collapse([metrics(i) for i in range(1, 30)], 32) == (False, None)

    def test_nan_loss(self):
        h = [metrics(1), metrics(2, loss=math.nan)]
        assert detect_collapse(h, 32) == (True, 2)

    def test_non_finite_params(self):
        assert detect_collapse([metrics(1), metrics(2, finite=False)], 32) == (True, 2)

    def test_pinned_length(self):
        h = [metrics(i, length=31.0 if i > 5 else 8.0) for i in range(1, 16)]
        assert detect_collapse(h, 32) == (True, 6)

    def test_short_pinned_window(self):
        h = [metrics(i, length=31.0 if 5 < i < 15 else 8.0) for i in range(1, 30)]
        assert detect_collapse(h, 32) == (False, None)

    def test_accepts_dicts(self):
        assert detect_collapse([metrics(1, loss=math.inf).to_record()], 32) == (True, 1)


class TestRunTraining:
    def test_zero_steps_returns_reference(self):
        res = run_training(TrainConfig(**(SMALL | dict(total_steps=0))))
        assert res.history == []
        np.testing.assert_array_equal(res.params.theta, res.ref_params.theta)

    def test_deterministic(self):
        cfg = TrainConfig(**SMALL)
        a = [m.to_record() for m in run_training(cfg).history]
        b = [m.to_record() for m in run_training(cfg).history]
        assert a == b and len(a) == 4

    def test_eval_schedule(self):
        h = run_training(TrainConfig(**(SMALL | dict(total_steps=5)))).history
        assert [m.eval_accuracy is not None for m in h] == [False, True, False, True, True]

    def test_seed_changes_history(self):
        a = run_training(TrainConfig(**SMALL)).history
        b = run_training(TrainConfig(**(SMALL | dict(seed=1)))).history
        assert [m.to_record() for m in a] != [m.to_record() for m in b]

    @pytest.mark.parametrize("mode", MODES)
    def test_all_modes_run(self, mode):
        res = run_training(TrainConfig(**(SMALL | dict(mode=mode, total_steps=2))))
        assert len(res.history) == 2
        assert all(math.isfinite(m.mean_policy_loss) for m in res.history)

    def test_stress_step_in_stable_mode_is_bounded(self):
        res = run_training(TrainConfig(**(SMALL | dict(total_steps=2))), stress_step=1)
        assert res.history[0].max_abs_token_loss <= 3000
        assert res.history[0].overflow_events == 0

    def test_checkpoint_callback(self):
        seen = []
        run_training(TrainConfig(**(SMALL | dict(checkpoint_every=2))),
                     on_checkpoint=lambda step, p: seen.append(step))
        assert seen == [2, 4]
