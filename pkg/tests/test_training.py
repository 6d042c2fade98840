import math

import numpy as np
import pytest

from streamseg.autodiff import Tensor, no_grad
from streamseg.clips import ClipSpec, FeatureStream, make_clips
from streamseg.gradcheck import _tiny_model, _tiny_stream
from streamseg.head import ActionLogits
from streamseg.optim import AdamW
from streamseg.reward import RewardConfig
from streamseg.training import (NumericalError, TrainerConfig,
                                clip_cross_entropy, clip_reward,
                                evaluate_model, mc_train_episode,
                                supervised_episode, td_train_episode)


def make_action(probs, window_len):
    probs = Tensor(np.asarray(probs, dtype=np.float64))
    return ActionLogits(logits=probs.clamp_min(1e-300).log(), probs=probs,
                        window_len=window_len)


def snapshot(model):
    return {name: p.data.copy() for name, p in model.named_parameters().items()}


def max_param_delta(before, model):
    return max(np.abs(before[name] - p.data).max()
               for name, p in model.named_parameters().items())


class TestClipCrossEntropy:
    def test_uniform_prediction_classes_norm(self):
        # uniform probs: every picked probability is 1/C, so the mean over k
        # positions of -log(1/C) is ln C, scaled by the extra 1/C
        c, k = 4, 6
        action = make_action(np.full((c, k), 1.0 / c), window_len=k)
        labels = np.arange(k) % c
        loss = clip_cross_entropy(action, labels, "classes")
        assert loss.item() == pytest.approx(math.log(c) / c, abs=1e-12)
        loss = clip_cross_entropy(action, labels, "frames")
        assert loss.item() == pytest.approx(math.log(c), abs=1e-12)

    def test_confident_correct_prediction_is_near_zero(self):
        labels = np.array([0, 1, 2, 1])
        probs = np.full((3, 4), 1e-9)
        probs[labels, np.arange(4)] = 1.0 - 2e-9
        action = make_action(probs, window_len=4)
        assert clip_cross_entropy(action, labels).item() == pytest.approx(
            0.0, abs=1e-8)

    def test_floor_keeps_zero_probability_finite(self):
        probs = np.array([[1.0, 1.0], [0.0, 0.0]])
        action = make_action(probs, window_len=2)
        loss = clip_cross_entropy(action, np.array([1, 1]), "frames")
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(-math.log(1e-12), abs=1e-6)

    def test_hand_computed_value(self):
        probs = np.array([[0.7, 0.2], [0.3, 0.8]])
        action = make_action(probs, window_len=2)
        labels = np.array([0, 1])
        expected = -(math.log(0.7) + math.log(0.8)) / (2 * 2)
        assert clip_cross_entropy(action, labels, "classes").item() == \
            pytest.approx(expected, abs=1e-12)

    def test_label_validation(self):
        action = make_action(np.full((2, 3), 0.5), window_len=3)
        with pytest.raises(ValueError):
            clip_cross_entropy(action, np.array([0, 1]))
        with pytest.raises(ValueError):
            clip_cross_entropy(action, np.array([0, 1, 2]))

    def test_gradient_direction_increases_true_class_probability(self):
        # one gradient step on the CE must raise the picked probabilities
        rng = np.random.default_rng(0)
        logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        labels = np.array([0, 1, 2, 0])
        probs = logits.softmax(axis=-1).transpose()
        action = ActionLogits(logits=probs.log(), probs=probs, window_len=4)
        loss = clip_cross_entropy(action, labels)
        loss.backward()
        before = probs.data[labels, np.arange(4)]
        stepped = Tensor(logits.data - 0.5 * logits.grad)
        new_probs = stepped.softmax(axis=-1).transpose().data
        after = new_probs[labels, np.arange(4)]
        assert np.all(after > before)


class TestClipReward:
    def test_upsamples_before_scoring(self):
        # k=2 positions, p=3: six covered frames; probabilities repeat in
        # blocks of three, so the reward must match a hand-upsampled score
        spec = ClipSpec(k=2, p=3)
        probs = np.array([[0.9, 0.2], [0.1, 0.8]])
        action = make_action(probs, window_len=6)
        labels = np.array([0, 0, 0, 1, 1, 1])
        from streamseg.reward import reward as dice_reward
        upsampled = np.repeat(probs, 3, axis=1)
        expected = dice_reward(upsampled, labels, RewardConfig())
        got = clip_reward(action, labels, spec, RewardConfig())
        assert got == pytest.approx(expected, abs=1e-12)

    def test_truncated_final_window(self):
        spec = ClipSpec(k=2, p=3)
        probs = np.array([[0.9, 0.2], [0.1, 0.8]])
        action = make_action(probs, window_len=4)
        labels = np.array([0, 0, 0, 1])
        got = clip_reward(action, labels, spec, RewardConfig())
        from streamseg.reward import reward as dice_reward
        expected = dice_reward(np.repeat(probs, 3, axis=1)[:, :4], labels,
                               RewardConfig())
        assert got == pytest.approx(expected, abs=1e-12)


class TestSupervised:
    def test_loss_decreases_over_steps(self):
        rng = np.random.default_rng(1)
        model = _tiny_model(np.random.default_rng(2))
        stream = _tiny_stream(rng, frames=20)
        opt = AdamW(model.named_parameters(), lr=3e-3)
        cfg = TrainerConfig(mode="supervised")
        first = supervised_episode(model, stream, opt, cfg)
        losses = [supervised_episode(model, stream, opt, cfg)
                  for _ in range(30)]
        assert losses[-1] < 0.5 * first

    def test_zero_lr_keeps_parameters_bitwise(self):
        rng = np.random.default_rng(3)
        model = _tiny_model(np.random.default_rng(4))
        stream = _tiny_stream(rng)
        opt = AdamW(model.named_parameters(), lr=0.0, weight_decay=0.0)
        before = snapshot(model)
        supervised_episode(model, stream, opt, TrainerConfig())
        assert max_param_delta(before, model) == 0.0

    def test_one_step_per_clip(self):
        rng = np.random.default_rng(5)
        model = _tiny_model(np.random.default_rng(6))
        stream = _tiny_stream(rng, frames=20)  # k=4, p=2 -> L=8 -> 3 clips
        opt = AdamW(model.named_parameters())
        supervised_episode(model, stream, opt, TrainerConfig())
        assert opt.step_count == len(make_clips(20, model.cfg.clip))


class TestMonteCarlo:
    def test_all_zero_rewards_skip_the_update(self):
        rng = np.random.default_rng(7)
        model = _tiny_model(np.random.default_rng(8))
        stream = _tiny_stream(rng)
        opt = AdamW(model.named_parameters())
        # beta2 = -beta1**0 shifts nothing; instead force zero via labels the
        # model cannot overlap: impossible here, so use a reward config whose
        # beta2 cancels the attainable scores is fragile. Patch rewards
        # directly by scoring against a class the probabilities barely touch.
        before = snapshot(model)
        import streamseg.training as training_mod
        original = training_mod.clip_reward
        training_mod.clip_reward = lambda *a, **k: 0.0
        try:
            episode = mc_train_episode(model, stream, opt, TrainerConfig(mode="mc"))
        finally:
            training_mod.clip_reward = original
        assert all(r == 0.0 for r in episode.rewards)
        assert max_param_delta(before, model) == 0.0
        assert opt.step_count == 0

    def test_two_pass_probabilities_agree_bitwise(self):
        # the no-gradient scoring pass and the recorded pass share weights,
        # so the recorded actions must reproduce the scoring pass exactly
        rng = np.random.default_rng(9)
        model = _tiny_model(np.random.default_rng(10))
        stream = _tiny_stream(rng)
        clips = make_clips(stream.num_frames, model.cfg.clip)
        from streamseg.training import _roll_episode
        cfg = TrainerConfig(mode="mc")
        rolled = _roll_episode(model, stream, clips, cfg)
        bank = model.fresh_bank()
        for clip, rolled_action in zip(clips, rolled.actions):
            action, bank = model.forward_clip(clip, stream, bank)
            bank = bank.detach()
            assert action.probs.data.tobytes() == rolled_action.probs.data.tobytes()

    def test_reinforce_identity_clipwise(self):
        # gradient of (1/q) sum r_j CE_j == (1/q) sum r_j grad(CE_j): the
        # rewards are constants, so the two ways of assembling the gradient
        # agree to rounding error
        rng = np.random.default_rng(11)
        model = _tiny_model(np.random.default_rng(12))
        stream = _tiny_stream(rng, frames=22)
        clips = make_clips(stream.num_frames, model.cfg.clip)
        cfg = TrainerConfig(mode="mc")
        from streamseg.training import _roll_episode
        episode = _roll_episode(model, stream, clips, cfg)
        params = model.named_parameters()

        # pass A: one backward of the assembled episodic loss
        bank = model.fresh_bank()
        total = None
        for clip, r in zip(clips, episode.rewards):
            action, bank = model.forward_clip(clip, stream, bank)
            bank = bank.detach()
            term = clip_cross_entropy(action, stream.labels[list(clip.sampled_rows)]) * r
            total = term if total is None else total + term
        loss = total * (1.0 / len(clips))
        for p in params.values():
            p.grad = None
        loss.backward()
        assembled = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                     for name, p in params.items()}

        # pass B: per-clip backward, manual weighting
        manual = {name: np.zeros_like(p.data) for name, p in params.items()}
        bank = model.fresh_bank()
        for clip, r in zip(clips, episode.rewards):
            action, bank = model.forward_clip(clip, stream, bank)
            bank = bank.detach()
            ce = clip_cross_entropy(action, stream.labels[list(clip.sampled_rows)])
            for p in params.values():
                p.grad = None
            ce.backward()
            for name, p in params.items():
                if p.grad is not None:
                    manual[name] += (r / len(clips)) * p.grad

        worst = max(np.abs(assembled[name] - manual[name]).max()
                    for name in params)
        assert worst <= 1e-10

    def test_reward_scaling_scales_gradient_linearly(self):
        rng = np.random.default_rng(13)
        model = _tiny_model(np.random.default_rng(14))
        stream = _tiny_stream(rng)
        clips = make_clips(stream.num_frames, model.cfg.clip)
        params = model.named_parameters()

        def episodic_grad(scale):
            bank = model.fresh_bank()
            total = None
            for clip in clips:
                action, bank = model.forward_clip(clip, stream, bank)
                bank = bank.detach()
                term = clip_cross_entropy(
                    action, stream.labels[list(clip.sampled_rows)]) * scale
                total = term if total is None else total + term
            for p in params.values():
                p.grad = None
            (total * (1.0 / len(clips))).backward()
            return {name: (np.zeros_like(p.data) if p.grad is None
                           else p.grad.copy()) for name, p in params.items()}

        g1 = episodic_grad(0.7)
        g2 = episodic_grad(1.4)
        worst = max(np.abs(2.0 * g1[name] - g2[name]).max() for name in params)
        assert worst <= 1e-12

    def test_single_update_per_episode(self):
        rng = np.random.default_rng(15)
        model = _tiny_model(np.random.default_rng(16))
        stream = _tiny_stream(rng)
        opt = AdamW(model.named_parameters())
        mc_train_episode(model, stream, opt, TrainerConfig(mode="mc"))
        assert opt.step_count == 1

    def test_return_improves_with_training(self):
        rng = np.random.default_rng(17)
        model = _tiny_model(np.random.default_rng(18))
        stream = _tiny_stream(rng, frames=20)
        opt = AdamW(model.named_parameters(), lr=3e-3)
        cfg = TrainerConfig(mode="mc")
        first = mc_train_episode(model, stream, opt, cfg).episode_return
        last = first
        for _ in range(40):
            last = mc_train_episode(model, stream, opt, cfg).episode_return
        assert last > first


class TestTemporalDifference:
    def test_zero_reward_clip_skips_its_update(self):
        rng = np.random.default_rng(19)
        model = _tiny_model(np.random.default_rng(20))
        stream = _tiny_stream(rng)
        opt = AdamW(model.named_parameters())
        before = snapshot(model)
        import streamseg.training as training_mod
        original = training_mod.clip_reward
        training_mod.clip_reward = lambda *a, **k: 0.0
        try:
            episode = td_train_episode(model, stream, opt, TrainerConfig(mode="td"))
        finally:
            training_mod.clip_reward = original
        assert max_param_delta(before, model) == 0.0
        assert opt.step_count == 0
        assert len(episode.rewards) == len(make_clips(stream.num_frames,
                                                      model.cfg.clip))

    def test_one_update_per_rewarded_clip(self):
        rng = np.random.default_rng(21)
        model = _tiny_model(np.random.default_rng(22))
        stream = _tiny_stream(rng, frames=20)
        opt = AdamW(model.named_parameters())
        episode = td_train_episode(model, stream, opt, TrainerConfig(mode="td"))
        rewarded = sum(1 for r in episode.rewards if r != 0.0)
        assert opt.step_count == rewarded

    def test_single_clip_stream_matches_mc_update_bitwise(self):
        # with exactly one clip, the episodic loss is r*CE/1 and the per-clip
        # loss is r*CE: identical losses, identical first optimizer step
        frames = 8  # k=4, p=2 -> exactly one clip
        rng = np.random.default_rng(23)
        features = rng.normal(size=(frames, 5))
        labels = rng.integers(0, 3, size=frames)

        results = {}
        for mode, fn in (("mc", mc_train_episode), ("td", td_train_episode)):
            model = _tiny_model(np.random.default_rng(24))
            stream = FeatureStream(id="x", features=features.copy(),
                                   labels=labels.copy(), num_classes=3)
            opt = AdamW(model.named_parameters())
            fn(model, stream, opt, TrainerConfig(mode=mode))
            results[mode] = snapshot(model)
        for name in results["mc"]:
            assert results["mc"][name].tobytes() == results["td"][name].tobytes()

    def test_return_improves_with_training(self):
        rng = np.random.default_rng(25)
        model = _tiny_model(np.random.default_rng(26))
        stream = _tiny_stream(rng, frames=20)
        opt = AdamW(model.named_parameters(), lr=3e-3)
        cfg = TrainerConfig(mode="td")
        first = td_train_episode(model, stream, opt, cfg).episode_return
        last = first
        for _ in range(40):
            last = td_train_episode(model, stream, opt, cfg).episode_return
        assert last > first


class TestNumericalGuards:
    def test_non_finite_loss_raises(self):
        rng = np.random.default_rng(27)
        model = _tiny_model(np.random.default_rng(28))
        stream = _tiny_stream(rng)
        opt = AdamW(model.named_parameters())
        model.head.proj.weight.data[...] = np.nan
        with pytest.raises(NumericalError):
            supervised_episode(model, stream, opt, TrainerConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainerConfig(mode="q-learning")
        with pytest.raises(ValueError):
            TrainerConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainerConfig(ce_norm="mean")


class TestEvaluateModel:
    def test_report_covers_all_streams(self):
        rng = np.random.default_rng(29)
        model = _tiny_model(np.random.default_rng(30))
        streams = [_tiny_stream(rng, frames=f) for f in (14, 20)]
        report = evaluate_model(model, streams)
        assert len(report.per_video) == 2
        assert 0.0 <= report.acc <= 100.0
