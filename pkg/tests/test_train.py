"""Optimizer, config parsing, training loops, inference, benchmarking."""

import numpy as np
import pytest

from srdrm import train as train_mod
from srdrm.checkpoint import load_checkpoint, save_checkpoint
from srdrm.data import load_image
from srdrm.errors import ContractViolation, NumericError
from srdrm.losses import LossWeights
from srdrm.models import (
    DiscriminatorConfig,
    GeneratorConfig,
    TINY_DISCRIMINATOR,
    TINY_GENERATOR,
    build_discriminator,
    build_generator,
)
from srdrm.optim import AdamState, adam_step, adam_step_all, init_adam
from srdrm.train import (
    BenchReport,
    TrainConfig,
    TrainLog,
    bench,
    eval_report,
    infer,
    load_train_config,
    train_adversarial,
    train_generative,
)

from conftest import build_overfit_dataset, synthetic_image


@pytest.fixture
def dataset(tmp_path):
    return build_overfit_dataset(tmp_path / "ds", n_pairs=8)


def tiny_config(**kw):
    base = dict(mode="gen", scale=2, epochs=2, batch_size=4, learning_rate=1e-3,
                seed=5, tiny_profile=True)
    base.update(kw)
    return TrainConfig(**base)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0], np.float32)
        s = AdamState(np.zeros_like(p), np.zeros_like(p))
        new_p, _ = adam_step(p, np.zeros_like(p), s, lr=0.1)
        assert np.array_equal(new_p, p)

    def test_first_step_magnitude(self):
        p = np.zeros(1)
        s = AdamState(np.zeros(1), np.zeros(1))
        new_p, s2 = adam_step(p, np.ones(1), s, lr=0.1, eps=1e-8)
        assert np.isclose(-new_p[0], 0.1 / (1 + 1e-8), rtol=1e-9)
        assert s2.t == 1

    def test_deterministic_trajectory(self, rng):
        p = rng.standard_normal(6).astype(np.float32)
        grads = [rng.standard_normal(6).astype(np.float32) for _ in range(5)]
        def run():
            q, s = p.copy(), AdamState(np.zeros(6, np.float32), np.zeros(6, np.float32))
            for g in grads:
                q, s = adam_step(q, g, s, lr=1e-2)
            return q
        assert np.array_equal(run(), run())

    def test_shape_mismatch(self):
        s = AdamState(np.zeros(2), np.zeros(2))
        with pytest.raises(ContractViolation):
            adam_step(np.zeros(2), np.zeros(3), s, lr=0.1)

    def test_step_all_key_mismatch(self):
        params = {"a": np.zeros(2)}
        states = init_adam(params)
        with pytest.raises(ContractViolation):
            adam_step_all(params, {"b": np.zeros(2)}, states, lr=0.1)


class TestTrainConfig:
    def test_defaults_match_documented_values(self):
        c = TrainConfig()
        assert (c.epochs, c.batch_size, c.learning_rate) == (20, 4, 1e-4)
        assert (c.adam_beta1, c.adam_beta2, c.adam_epsilon) == (0.9, 0.999, 1e-8)

    @pytest.mark.parametrize("bad", [dict(mode="x"), dict(scale=3), dict(epochs=0),
                                     dict(batch_size=0), dict(learning_rate=0.0)])
    def test_invalid_fields(self, bad):
        with pytest.raises(ContractViolation):
            TrainConfig(**bad)

    def test_config_file_round_trip(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text(
            "# overfit profile\n"
            "mode = gan\nscale = 4\nepochs = 7\nbatch_size = 2\n"
            "learning_rate = 0.002\nadam_beta1 = 0.8\nadam_beta2 = 0.98\n"
            "adam_epsilon = 1e-7\nlambda_c = 0.5\nlambda_p = 0.25\n"
            "lambda_2 = 2.0\nlambda_adv = 0.125\nseed = 9\n"
            "checkpoint_every = 3\ntiny_profile = true\n"
        )
        c = load_train_config(p)
        assert (c.mode, c.scale, c.epochs, c.batch_size) == ("gan", 4, 7, 2)
        assert (c.adam_beta1, c.adam_beta2, c.adam_epsilon) == (0.8, 0.98, 1e-7)
        assert c.weights == LossWeights(0.5, 0.25, 2.0, 0.125)
        assert c.checkpoint_every == 3 and c.tiny_profile

    def test_unknown_key_is_error(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("momentum = 0.9\n")
        with pytest.raises(ContractViolation, match="momentum"):
            load_train_config(p)

    def test_profile_configs(self):
        c = tiny_config(scale=8)
        assert c.generator_config() == GeneratorConfig(scale_exp=3, **TINY_GENERATOR)
        assert c.discriminator_config() == DiscriminatorConfig(**TINY_DISCRIMINATOR)


class TestTrainLog:
    def test_monotone_steps_enforced(self):
        log = TrainLog()
        log.add_step(1, {"l2": 1.0}, 0.0)
        with pytest.raises(ContractViolation):
            log.add_step(3, {"l2": 1.0}, 0.0)

    def test_non_finite_rejected(self):
        log = TrainLog()
        with pytest.raises(NumericError):
            log.add_step(1, {"l2": float("nan")}, 0.0)

    def test_text_excludes_wall_time(self):
        log = TrainLog()
        log.add_step(1, {"l2": 0.5, "total": 0.75}, wall_ms=123.4)
        log.add_epoch(1, 31.5, 0.9)
        text = log.to_text()
        assert "123.4" not in text
        assert text.splitlines() == ["step 1 l2=0.5 total=0.75",
                                     "epoch 1 val_psnr=31.5 val_ssim=0.9"]


class TestTrainGenerative:
    def test_loss_drops_and_log_written(self, dataset, tmp_path):
        out = tmp_path / "run"
        cfg = tiny_config(epochs=15)
        ckpts, log = train_generative(cfg, dataset, out)
        l2 = [s.terms["l2"] for s in log.steps]
        assert len(log.steps) == 30  # 2 steps/epoch
        assert l2[-1] < 0.6 * l2[0]
        assert (out / "train_log.txt").read_text() == log.to_text()
        assert ckpts[-1].name == "gen_final.ckpt"

    def test_checkpoint_count_arithmetic(self, dataset, tmp_path):
        cfg = tiny_config(epochs=4, checkpoint_every=2)
        ckpts, _ = train_generative(cfg, dataset, tmp_path / "r")
        assert len(ckpts) == 4 // 2 + 1
        assert [p.name for p in ckpts] == ["gen_e0002.ckpt", "gen_e0004.ckpt",
                                           "gen_final.ckpt"]

    def test_seeded_rerun_reproduces_everything(self, dataset, tmp_path):
        cfg = tiny_config(epochs=5)
        _, log_a = train_generative(cfg, dataset, tmp_path / "a")
        _, log_b = train_generative(cfg, dataset, tmp_path / "b")
        assert log_a.to_text() == log_b.to_text()
        assert (tmp_path / "a" / "gen_final.ckpt").read_bytes() == \
               (tmp_path / "b" / "gen_final.ckpt").read_bytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")  # intentional blow-up
    def test_nan_abort_names_step(self, dataset, tmp_path):
        cfg = tiny_config(epochs=20, learning_rate=1e12)
        with pytest.raises(NumericError, match=r"step \d+"):
            train_generative(cfg, dataset, tmp_path / "boom")

    def test_wrong_mode_rejected(self, dataset, tmp_path):
        with pytest.raises(ContractViolation):
            train_generative(tiny_config(mode="gan"), dataset, tmp_path / "x")

    def test_validation_metrics_recorded(self, tmp_path):
        ds = build_overfit_dataset(tmp_path / "dsv", n_pairs=4, with_val=True)
        cfg = tiny_config(epochs=2, batch_size=4)
        _, log = train_generative(cfg, ds, tmp_path / "rv")
        assert len(log.epochs) == 2
        assert all(e.val_psnr is not None and e.val_ssim is not None
                   for e in log.epochs)

    def test_feature_extractor_never_trained(self, dataset, tmp_path):
        from srdrm.losses import build_feature_extractor
        fx = build_feature_extractor("default")
        before = {k: v.copy() for k, v in fx.named_arrays().items()}
        train_generative(tiny_config(epochs=3), dataset, tmp_path / "fx",
                         extractor=fx)
        for k, v in fx.named_arrays().items():
            assert np.array_equal(v, before[k]), k


class TestTrainAdversarial:
    def test_short_run_all_finite(self, dataset, tmp_path):
        cfg = tiny_config(mode="gan", epochs=5, learning_rate=1e-4)
        ckpts, log = train_adversarial(cfg, dataset, tmp_path / "gan")
        assert len(log.steps) == 10
        for s in log.steps:
            assert set(s.terms) >= {"d_loss", "l2", "ladv", "total"}
            assert all(np.isfinite(v) for v in s.terms.values())
        assert (tmp_path / "gan" / "disc_final.ckpt").is_file()

    def test_zero_adv_weight_matches_generative_bitwise(self, dataset, tmp_path):
        w = LossWeights(lambda_adv=0.0)
        cfg_gen = tiny_config(epochs=4, weights=w, seed=21)
        cfg_gan = tiny_config(mode="gan", epochs=4, weights=w, seed=21)
        _, log_gen = train_generative(cfg_gen, dataset, tmp_path / "g")
        _, log_gan = train_adversarial(cfg_gan, dataset, tmp_path / "a")
        gen_terms = [s.terms["total"] for s in log_gen.steps]
        gan_terms = [s.terms["total"] for s in log_gan.steps]
        assert gen_terms == gan_terms
        assert (tmp_path / "g" / "gen_final.ckpt").read_bytes()[8:] == \
               (tmp_path / "a" / "gan_final.ckpt").read_bytes()[8:]

    def test_initial_d_loss_two_ln_two_at_half_output(self, dataset, tmp_path,
                                                      monkeypatch):
        # force the discriminator's last conv to zero: sigmoid(0) = 0.5 exactly
        captured = {}
        orig_init = train_mod.Discriminator.__init__
        def patched(self, config, seed, dtype=np.float32):
            orig_init(self, config, seed, dtype)
            last = f"layer{config.layers}.conv"
            self.set_param(f"{last}.weight",
                           np.zeros_like(self.named_params()[f"{last}.weight"]))
            captured["done"] = True
        monkeypatch.setattr(train_mod.Discriminator, "__init__", patched)
        cfg = tiny_config(mode="gan", epochs=1, learning_rate=1e-9)
        _, log = train_adversarial(cfg, dataset, tmp_path / "half")
        assert captured["done"]
        assert np.isclose(log.steps[0].terms["d_loss"], 2 * np.log(2), atol=1e-5)

    def test_saturation_collapse_aborts(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setattr(train_mod, "_SATURATION_LIMIT", 3)
        orig_init = train_mod.Discriminator.__init__
        def patched(self, config, seed, dtype=np.float32):
            orig_init(self, config, seed, dtype)
            last = f"layer{config.layers}.conv"
            self.set_param(f"{last}.weight",
                           np.zeros_like(self.named_params()[f"{last}.weight"]))
            self.set_param(f"{last}.bias",
                           np.full_like(self.named_params()[f"{last}.bias"], 200.0))
        monkeypatch.setattr(train_mod.Discriminator, "__init__", patched)
        cfg = tiny_config(mode="gan", epochs=10, learning_rate=1e-12)
        with pytest.raises(NumericError, match="saturated"):
            train_adversarial(cfg, dataset, tmp_path / "sat")


class TestInfer:
    @pytest.fixture
    def ckpt(self, tmp_path):
        gen = build_generator(GeneratorConfig(scale_exp=1, **TINY_GENERATOR), seed=2)
        p = tmp_path / "g.ckpt"
        save_checkpoint(gen, p)
        return p

    @pytest.fixture
    def image(self, tmp_path):
        from srdrm.data import save_image
        p = tmp_path / "in.png"
        save_image(p, synthetic_image(4, 40, 30))
        return p

    def test_whole_image_scaled(self, ckpt, image, tmp_path):
        out = tmp_path / "out.png"
        result = infer(ckpt, image, out_path=out)
        assert result.shape == (60, 80, 3)
        assert load_image(out).shape == (60, 80, 3)

    def test_roi_crop_scaled(self, ckpt, image, tmp_path):
        result = infer(ckpt, image, roi=(4, 2, 16, 12))
        assert result.shape == (24, 32, 3)

    def test_roi_out_of_bounds_fails_before_compute(self, ckpt, image):
        with pytest.raises(ContractViolation, match="out of bounds"):
            infer(ckpt, image, roi=(30, 0, 16, 16))

    def test_roi_too_small(self, ckpt, image):
        with pytest.raises(ContractViolation, match=">= 8"):
            infer(ckpt, image, roi=(0, 0, 4, 4))

    def test_byte_identical_reruns(self, ckpt, image, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        infer(ckpt, image, out_path=a)
        infer(ckpt, image, out_path=b)
        assert a.read_bytes() == b.read_bytes()

    def test_non_generator_checkpoint_rejected(self, image, tmp_path):
        d = build_discriminator(DiscriminatorConfig(**TINY_DISCRIMINATOR), seed=0)
        p = tmp_path / "d.ckpt"
        save_checkpoint(d, p)
        with pytest.raises(ContractViolation, match="generator"):
            infer(p, image)

    def test_quadruple_scale_patch_to_full_frame(self, tmp_path):
        from srdrm.data import save_image
        gen = build_generator(GeneratorConfig(scale_exp=2, **TINY_GENERATOR), seed=1)
        ckpt = tmp_path / "g4.ckpt"
        save_checkpoint(gen, ckpt)
        src = tmp_path / "wide.png"
        save_image(src, synthetic_image(6, 320, 240))
        out = infer(ckpt, src, roi=(80, 60, 160, 120))
        assert out.shape == (480, 640, 3)


class TestBench:
    @pytest.fixture
    def ckpt(self, tmp_path):
        gen = build_generator(GeneratorConfig(scale_exp=1, **TINY_GENERATOR), seed=2)
        p = tmp_path / "g.ckpt"
        save_checkpoint(gen, p)
        return p

    def test_iters_minimum(self, ckpt):
        with pytest.raises(ContractViolation):
            bench(ckpt, (16, 12), iters=5)

    def test_report_fields_and_fps_arithmetic(self, ckpt):
        rep = bench(ckpt, (16, 12), iters=10)
        assert rep.iters == 10
        assert rep.p95_ms >= rep.median_ms > 0
        assert np.isclose(rep.fps, 1000.0 / rep.mean_ms, rtol=1e-9)
        machine = rep.to_machine()
        assert "latency_ms_mean=" in machine and "fps=" in machine
        assert f"{rep.width}x{rep.height}" in rep.to_text()

    def test_median_latency_stable_between_runs(self, ckpt):
        # loose 20% band; one retry absorbs scheduler noise
        for attempt in range(2):
            a = bench(ckpt, (32, 24), iters=40).median_ms
            b = bench(ckpt, (32, 24), iters=40).median_ms
            if abs(a - b) / min(a, b) <= 0.20:
                break
        else:
            pytest.fail(f"median latency unstable: {a:.3f} vs {b:.3f} ms")


class TestEvalReport:
    def test_rows_match_split_size_and_files_written(self, dataset, tmp_path):
        cfg = tiny_config(epochs=2)
        ckpts, _ = train_generative(cfg, dataset, tmp_path / "r")
        report = eval_report(ckpts[-1], dataset, "train",
                             report_path=tmp_path / "report.txt")
        assert len(report.rows) == 8
        assert report.scale_tag == "2x"
        assert (tmp_path / "report.txt").is_file()
        csv = (tmp_path / "report.txt.csv").read_text().splitlines()
        assert csv[0] == "id,psnr,ssim,uiqm"
        assert len(csv) == 9

    def test_empty_split_rejected(self, dataset, tmp_path):
        cfg = tiny_config(epochs=1)
        ckpts, _ = train_generative(cfg, dataset, tmp_path / "r")
        with pytest.raises(ContractViolation):
            eval_report(ckpts[-1], dataset, "val")
