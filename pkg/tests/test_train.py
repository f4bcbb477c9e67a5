"""Optimizer math, schedule, training loop, evaluation, and the sweep."""

import numpy as np
import pytest

from crowdloc.data import SyntheticConfig, generate_scene, render_instance_mask
from crowdloc.gradcheck import gradient_check
from crowdloc.metrics import f1_from_pr
from crowdloc.model import (
    CrowdLocalizer,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)
from crowdloc.tensor import Tensor
from crowdloc.train import (
    DEFAULT_GRID,
    AdamW,
    TrainConfig,
    adamw_step,
    evaluate,
    evaluate_scores,
    init_adamw_state,
    load_training_checkpoint,
    lr_at,
    mse_loss,
    param_groups,
    threshold_sweep,
    train,
)


def tiny_model_config(img=32, use_dcb=True):
    return ModelConfig(
        base_channels=8,
        depths=(1, 1, 1, 1),
        heads=(1, 2, 4, 8),
        window=4,
        img_h=img,
        img_w=img,
        lateral_dim=16,
        use_dcb=use_dcb,
    )


def tiny_scenes(n, seed=5, size=32):
    cfg = SyntheticConfig(
        height=size, width=size, count_range=(2, 5), radius_range=(2.0, 4.0),
        seed=seed,
    )
    return [generate_scene(cfg, i) for i in range(n)]


class TestMseLoss:
    def test_zero_when_equal(self, rng):
        x = Tensor(rng.uniform(0, 1, (2, 1, 4, 4)).astype(np.float32))
        assert mse_loss(x, Tensor(x.data.copy())).item() == 0.0

    def test_constant_half_against_zeros(self):
        score = Tensor(np.full((1, 1, 8, 8), 0.5, dtype=np.float32))
        label = Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32))
        assert mse_loss(score, label).item() == pytest.approx(0.25)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="shape"):
            mse_loss(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 5))))

    def test_gradient_formula(self, rng):
        score = Tensor(
            rng.uniform(0, 1, (2, 1, 5, 5)).astype(np.float32),
            requires_grad=True,
        )
        label = rng.integers(0, 2, (2, 1, 5, 5)).astype(np.float32)
        loss = mse_loss(score, Tensor(label))
        loss.backward()
        expected = 2.0 * (score.data - label) / score.data.size
        np.testing.assert_allclose(score.grad, expected, rtol=1e-5, atol=1e-8)

    def test_gradient_against_finite_differences(self, rng):
        label = Tensor(rng.integers(0, 2, (1, 1, 4, 4)).astype(np.float32))
        score = Tensor(
            rng.uniform(0.2, 0.8, (1, 1, 4, 4)).astype(np.float32),
            requires_grad=True,
        )
        errs = gradient_check(
            lambda: mse_loss(score, label), {"score": score}, rng
        )
        assert errs["score"] < 1e-3


class TestLrSchedule:
    def test_zero_at_start(self):
        assert lr_at(0, 1e-3, 1500) == 0.0

    def test_half_at_midpoint(self):
        assert lr_at(750, 4e-4, 1500) == pytest.approx(2e-4)

    def test_exact_base_at_warmup_end(self):
        assert lr_at(1500, 3e-4, 1500) == 3e-4

    def test_flat_after_warmup(self):
        assert lr_at(10_000, 3e-4, 1500) == 3e-4

    def test_piecewise_linear_increments(self):
        base, warm = 1e-3, 200
        vals = [lr_at(i, base, warm) for i in range(warm + 1)]
        steps = np.diff(vals)
        np.testing.assert_allclose(steps, base / warm, rtol=1e-9)

    def test_zero_warmup_means_no_ramp(self):
        assert lr_at(0, 1e-3, 0) == 1e-3


class TestAdamwStep:
    def test_first_step_moves_by_signed_lr(self, rng):
        g = rng.uniform(0.1, 1.0, 6).astype(np.float32)
        g *= rng.choice([-1, 1], 6).astype(np.float32)
        p0 = rng.normal(0, 1, 6).astype(np.float32)
        params = {"w": p0.copy()}
        state = init_adamw_state(params)
        adamw_step(params, {"w": g}, state, lr=0.01, weight_decay=0.0)
        # t=1 bias correction gives m_hat/sqrt(v_hat) = g/|g|
        np.testing.assert_allclose(
            params["w"], p0 - 0.01 * np.sign(g), atol=1e-6
        )

    def test_zero_grad_no_decay_is_identity(self, rng):
        p0 = rng.normal(0, 1, 4).astype(np.float32)
        params = {"w": p0.copy()}
        state = init_adamw_state(params)
        for _ in range(3):
            adamw_step(params, {"w": np.zeros(4, np.float32)}, state,
                       lr=0.05, weight_decay=0.0)
        np.testing.assert_array_equal(params["w"], p0)

    def test_decay_is_decoupled_from_gradient(self, rng):
        p0 = rng.normal(0, 1, 4).astype(np.float32)
        params = {"w": p0.copy()}
        state = init_adamw_state(params)
        adamw_step(params, {"w": np.zeros(4, np.float32)}, state,
                   lr=0.1, weight_decay=0.5)
        np.testing.assert_allclose(params["w"], p0 * (1 - 0.1 * 0.5), rtol=1e-6)

    def test_quadratic_bowl_converges(self, rng):
        x = rng.uniform(-1.0, 1.0, 5).astype(np.float32)
        params = {"x": x}
        state = init_adamw_state(params)
        for _ in range(200):
            adamw_step(params, {"x": 2.0 * params["x"]}, state,
                       lr=1e-2, weight_decay=0.0)
        assert np.abs(params["x"]).max() < 1e-2

    def test_wd_zero_matches_plain_adam(self, rng):
        """With decay off the update must be textbook Adam, step for step."""
        x_mine = rng.uniform(-1, 1, 8).astype(np.float32)
        x_ref = x_mine.copy()
        params = {"x": x_mine}
        state = init_adamw_state(params)
        m = np.zeros(8, np.float32)
        v = np.zeros(8, np.float32)
        b1, b2, lr, eps = 0.9, 0.999, 1e-2, 1e-8
        for t in range(1, 51):
            g = (2.0 * x_ref).astype(np.float32)
            adamw_step(params, {"x": (2.0 * params["x"]).astype(np.float32)},
                       state, lr=lr, betas=(b1, b2), eps=eps, weight_decay=0.0)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            x_ref = x_ref - np.float32(lr) * m_hat / (np.sqrt(v_hat) + eps)
            np.testing.assert_allclose(params["x"], x_ref, atol=1e-7)


class TestParamGroups:
    def test_partition_is_exact(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(0))
        groups = param_groups(model)
        main = set(groups["main"]["params"])
        dcb = set(groups["dcb"]["params"])
        everything = {name for name, _ in model.named_parameters()}
        assert main | dcb == everything
        assert not main & dcb
        assert dcb and all(n.startswith("encoder.context.") for n in dcb)

    def test_no_dcb_model_has_empty_group(self):
        model = CrowdLocalizer(
            tiny_model_config(use_dcb=False), np.random.default_rng(0)
        )
        assert not param_groups(model)["dcb"]["params"]

    def test_group_rates_touch_only_their_params(self):
        """Stepping with lr 0 for main and 1 for dcb moves only the dcb."""
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(0))
        groups = param_groups(model)
        opt = AdamW(groups, weight_decay=0.0)
        before = {n: p.data.copy() for n, p in model.named_parameters()}
        for group in groups.values():
            for p in group["params"].values():
                p.grad = np.ones_like(p.data)
        opt.step({"main": 0.0, "dcb": 0.5})
        for name, p in model.named_parameters():
            if name.startswith("encoder.context."):
                assert not np.array_equal(p.data, before[name]), name
            else:
                np.testing.assert_array_equal(p.data, before[name], err_msg=name)


class TestTrainingLoop:
    def test_loss_trends_down(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(3))
        cfg = TrainConfig(
            base_lr=2e-3, dcb_lr=2e-4, warmup_iters=20, batch_size=2,
            total_iters=300, seed=3,
        )
        result = train(model, tiny_scenes(16, seed=6), cfg)
        first = result.losses[:50].mean()
        last = result.losses[-50:].mean()
        assert last < first

    def test_bit_reproducible_runs(self):
        cfg = TrainConfig(base_lr=1e-3, warmup_iters=5, batch_size=2,
                          total_iters=5, seed=9)
        scenes = tiny_scenes(6, seed=2)
        states = []
        for _ in range(2):
            model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(1))
            train(model, scenes, cfg)
            states.append(model.state_dict())
        for name, arr in states[0].items():
            np.testing.assert_array_equal(arr, states[1][name], err_msg=name)

    def test_resume_continues_exact_trajectory(self, tmp_path):
        scenes = tiny_scenes(6, seed=4)
        make = lambda: CrowdLocalizer(tiny_model_config(), np.random.default_rng(7))

        straight = make()
        cfg10 = TrainConfig(base_lr=1e-3, warmup_iters=4, batch_size=2,
                            total_iters=10, seed=11)
        res_straight = train(straight, scenes, cfg10)

        ckpt = str(tmp_path / "half.ckpt")
        halted = make()
        cfg5 = TrainConfig(base_lr=1e-3, warmup_iters=4, batch_size=2,
                           total_iters=5, seed=11)
        train(halted, scenes, cfg5, checkpoint_path=ckpt)

        resumed, opt, start = load_training_checkpoint(ckpt, cfg10)
        assert start == 5
        res_tail = train(resumed, scenes, cfg10, start_iter=start, optimizer=opt)

        np.testing.assert_array_equal(res_straight.losses[5:], res_tail.losses)
        ref = straight.state_dict()
        got = resumed.state_dict()
        for name in ref:
            np.testing.assert_array_equal(ref[name], got[name], err_msg=name)

    def test_nan_loss_aborts_with_iteration(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(0))
        bad = dict(model.named_parameters())["head.up2.bias"]
        bad.data[:] = np.nan
        cfg = TrainConfig(total_iters=3, batch_size=1)
        with pytest.raises(FloatingPointError, match="iteration 0"):
            train(model, tiny_scenes(2), cfg)

    def test_empty_dataset_rejected(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(0))
        with pytest.raises(ValueError, match="empty"):
            train(model, [], TrainConfig(total_iters=1))

    def test_periodic_checkpoints_written(self, tmp_path):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(0))
        ckpt = str(tmp_path / "run.ckpt")
        cfg = TrainConfig(base_lr=1e-3, total_iters=2, batch_size=1,
                          checkpoint_every=1, seed=0)
        train(model, tiny_scenes(2), cfg, checkpoint_path=ckpt)
        assert (tmp_path / "run.ckpt").exists()
        assert (tmp_path / "run.ckpt.cfg").exists()
        _, _, start = load_training_checkpoint(ckpt, cfg)
        assert start == 2


class TestCheckpointRoundtrip:
    def test_state_survives_save_load(self, tmp_path):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(5))
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model, extras={"train.iter": np.float32(7)})
        loaded, extras = load_checkpoint(path)
        assert int(extras["train.iter"]) == 7
        ref = model.state_dict()
        got = loaded.state_dict()
        assert set(ref) == set(got)
        for name in ref:
            np.testing.assert_array_equal(ref[name], got[name], err_msg=name)

    def test_architecture_rebuilt_from_sidecar(self, tmp_path):
        cfg = tiny_model_config(img=32, use_dcb=False)
        model = CrowdLocalizer(cfg, np.random.default_rng(5))
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        assert loaded.cfg == cfg

    def test_forward_identical_after_reload(self, tmp_path, rng):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(5))
        model.eval()
        path = str(tmp_path / "m.ckpt")
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        loaded.eval()
        x = Tensor(rng.uniform(0, 1, (1, 3, 32, 32)).astype(np.float32))
        np.testing.assert_array_equal(model(x).data, loaded(x).data)


class TestEvaluation:
    def test_perfect_scores_are_perfect(self):
        scenes = tiny_scenes(4, seed=8)
        scores = [render_instance_mask(s)[0] for s in scenes]
        loc, cnt = evaluate_scores(scores, scenes, threshold=0.5)
        assert loc.f1 == 1.0 and loc.precision == 1.0 and loc.recall == 1.0
        assert cnt.mae == 0.0 and cnt.mse == 0.0 and cnt.nae == 0.0

    def test_blank_scores_are_degenerate(self):
        scenes = tiny_scenes(3, seed=8)
        scores = [np.zeros((32, 32), np.float32) for _ in scenes]
        loc, cnt = evaluate_scores(scores, scenes, threshold=0.4)
        counts = [len(s.heads) for s in scenes]
        assert loc.precision == 0.0 and loc.recall == 0.0 and loc.f1 == 0.0
        assert cnt.mae == pytest.approx(np.mean(counts))

    def test_f1_recomputes_from_pr(self):
        scenes = tiny_scenes(4, seed=12)
        # half-correct scores: mask for even images, blank for odd
        scores = [
            render_instance_mask(s)[0] if i % 2 == 0 else np.zeros((32, 32), np.float32)
            for i, s in enumerate(scenes)
        ]
        loc, _ = evaluate_scores(scores, scenes, threshold=0.5)
        assert loc.f1 == pytest.approx(f1_from_pr(loc.precision, loc.recall))
        assert 0.0 < loc.f1 < 1.0

    def test_evaluate_runs_full_pipeline(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(2))
        scenes = tiny_scenes(2, seed=3)
        loc, cnt = evaluate(model, scenes, threshold=0.4)
        assert 0.0 <= loc.f1 <= 1.0
        assert cnt.mae >= 0.0


class TestThresholdSweep:
    def test_default_grid_definition(self):
        assert len(DEFAULT_GRID) == 11
        assert DEFAULT_GRID[0] == 0.30 and DEFAULT_GRID[-1] == 0.50
        np.testing.assert_allclose(np.diff(DEFAULT_GRID), 0.02)

    def test_rows_agree_with_per_threshold_evaluate(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(4))
        scenes = tiny_scenes(3, seed=21)
        sweep = threshold_sweep(model, scenes, grid=(0.3, 0.4, 0.5))
        assert len(sweep.rows) == 3
        for t, f1, mae in sweep.rows:
            loc, cnt = evaluate(model, scenes, t)
            assert f1 == loc.f1 and mae == cnt.mae

    def test_single_element_grid(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(4))
        sweep = threshold_sweep(model, tiny_scenes(2), grid=(0.37,))
        assert sweep.best_f1_threshold == 0.37
        assert sweep.best_mae_threshold == 0.37

    def test_bad_grids_rejected(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(4))
        with pytest.raises(ValueError, match="empty"):
            threshold_sweep(model, tiny_scenes(1), grid=())
        with pytest.raises(ValueError, match="outside"):
            threshold_sweep(model, tiny_scenes(1), grid=(0.5, 1.2))

    def test_csv_layout(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(4))
        sweep = threshold_sweep(model, tiny_scenes(2), grid=(0.3, 0.5))
        lines = sweep.to_csv().strip().split("\n")
        assert lines[0] == "threshold,f1,mae"
        assert len(lines) == 3

    def test_argmax_argmin_consistency(self):
        model = CrowdLocalizer(tiny_model_config(), np.random.default_rng(4))
        scenes = tiny_scenes(3, seed=30)
        sweep = threshold_sweep(model, scenes)
        by_f1 = {t: f1 for t, f1, _ in sweep.rows}
        by_mae = {t: mae for t, _, mae in sweep.rows}
        assert by_f1[sweep.best_f1_threshold] == max(by_f1.values())
        assert by_mae[sweep.best_mae_threshold] == min(by_mae.values())
