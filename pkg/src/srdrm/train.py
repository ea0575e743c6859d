"""Training loops, inference, benchmarking and evaluation reports.

Both loops are fully deterministic: the generator is built from
``config.seed``, the discriminator from ``seed + 1``, and the batch stream
from ``seed + 2``, so equal configurations reproduce every logged number
and every checkpoint byte.  The serialized log deliberately omits wall
times (kept only in memory) so log files compare byte-for-byte across
runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DatasetManifest,
    batch_iter,
    image_to_tensor,
    load_image,
    save_image,
    tensor_to_image,
)
from .errors import ContractViolation, NumericError
from .losses import (
    FeatureExtractor,
    LossWeights,
    adversarial_pair_grads,
    build_feature_extractor,
    generator_total_loss_grad,
)
from .metrics import MetricReport, MetricRow, psnr, ssim, uiqm
from .models import (
    TINY_DISCRIMINATOR,
    TINY_GENERATOR,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    forward_discriminator,
)
from .ops import upsample_bicubic
from .optim import adam_step_all, init_adam

__all__ = [
    "TrainConfig",
    "TrainLog",
    "load_train_config",
    "train_generative",
    "train_adversarial",
    "infer",
    "bench",
    "BenchReport",
    "eval_report",
]

_SCALE_TO_EXP = {2: 1, 4: 2, 8: 3}
_SATURATION_LIMIT = 100


@dataclass
class TrainConfig:
    mode: str = "gen"               # gen | gan
    scale: int = 2                  # 2 | 4 | 8
    epochs: int = 20
    batch_size: int = 4
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 0       # epochs between periodic checkpoints; 0 = final only
    tiny_profile: bool = False

    def __post_init__(self):
        if self.mode not in ("gen", "gan"):
            raise ContractViolation(f"mode must be 'gen' or 'gan', got {self.mode!r}")
        if self.scale not in _SCALE_TO_EXP:
            raise ContractViolation(f"scale must be one of {sorted(_SCALE_TO_EXP)}, "
                                    f"got {self.scale}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractViolation(
                f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}"
            )
        if not self.learning_rate > 0:
            raise ContractViolation(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.checkpoint_every < 0:
            raise ContractViolation("checkpoint_every must be >= 0")

    def generator_config(self) -> GeneratorConfig:
        extra = TINY_GENERATOR if self.tiny_profile else {}
        return GeneratorConfig(scale_exp=_SCALE_TO_EXP[self.scale], **extra)

    def discriminator_config(self) -> DiscriminatorConfig:
        extra = TINY_DISCRIMINATOR if self.tiny_profile else {}
        return DiscriminatorConfig(**extra)


_CONFIG_KEYS = {
    "mode": str,
    "scale": int,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_epsilon": float,
    "lambda_c": float,
    "lambda_p": float,
    "lambda_2": float,
    "lambda_adv": float,
    "seed": int,
    "checkpoint_every": int,
    "tiny_profile": bool,
}


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise ContractViolation(f"expected a boolean, got {v!r}")


def load_train_config(path) -> TrainConfig:
    """Parse the plain-text 'key = value' training config; unknown keys
    are errors."""
    fields = {}
    lam = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(),
                                 start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ContractViolation(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ContractViolation(f"{path}:{lineno}: unknown config key {key!r}")
        caster = _CONFIG_KEYS[key]
        parsed = _parse_bool(value) if caster is bool else caster(value)
        if key.startswith("lambda_"):
            lam[key] = parsed
        else:
            fields[key] = parsed
    if lam:
        fields["weights"] = LossWeights(**lam)
    return TrainConfig(**fields)


@dataclass
class StepRecord:
    step: int
    terms: dict
    wall_ms: float  # in-memory only; not serialized


@dataclass
class EpochRecord:
    epoch: int
    val_psnr: float | None = None
    val_ssim: float | None = None


class TrainLog:
    """Per-step loss records plus per-epoch validation metrics.

    ``to_text`` is byte-deterministic for a fixed run: wall times stay in
    memory only.
    """

    def __init__(self):
        self.steps: list[StepRecord] = []
        self.epochs: list[EpochRecord] = []

    def add_step(self, step: int, terms: dict, wall_ms: float):
        if self.steps and step != self.steps[-1].step + 1:
            raise ContractViolation(
                f"non-monotone step numbering: {step} after {self.steps[-1].step}"
            )
        for k, v in terms.items():
            if not math.isfinite(v):
                raise NumericError(f"non-finite loss term {k}={v} at step {step}")
        self.steps.append(StepRecord(step, dict(terms), wall_ms))

    def add_epoch(self, epoch: int, val_psnr=None, val_ssim=None):
        self.epochs.append(EpochRecord(epoch, val_psnr, val_ssim))

    def to_text(self) -> str:
        lines = []
        for rec in self.steps:
            terms = " ".join(f"{k}={v:.9g}" for k, v in sorted(rec.terms.items()))
            lines.append(f"step {rec.step} {terms}")
        for er in self.epochs:
            vp = "none" if er.val_psnr is None else f"{er.val_psnr:.9g}"
            vs = "none" if er.val_ssim is None else f"{er.val_ssim:.9g}"
            lines.append(f"epoch {er.epoch} val_psnr={vp} val_ssim={vs}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _validate_split(gen: Generator, manifest: DatasetManifest, scale: int):
    """Mean PSNR/SSIM of the generator over the val split (None if empty)."""
    pairs = manifest.pairs("val", scale)
    if not pairs:
        return None, None
    ps, ss = [], []
    for lr_path, hr_path in pairs:
        lr = image_to_tensor(load_image(lr_path))[None]
        out = tensor_to_image(gen.forward(lr)[0])
        hr = load_image(hr_path)
        ps.append(psnr(out, hr))
        ss.append(ssim(out, hr))
    return float(np.mean(ps)), float(np.mean(ss))


def _abort_if_nonfinite(terms: dict, step: int):
    for k, v in terms.items():
        if not math.isfinite(v):
            raise NumericError(f"aborting: non-finite loss {k}={v} at step {step}")


def _checkpoint_path(out_dir: Path, mode: str, label) -> Path:
    return out_dir / f"{mode}_{label}.ckpt"


def train_generative(config: TrainConfig, manifest: DatasetManifest, out_dir,
                     extractor: FeatureExtractor | None = None,
                     echo=None):
    """Optimize the generator alone (adversarial weight forced to zero).

    Writes periodic + final checkpoints and the training log under
    ``out_dir``; returns (checkpoint paths, TrainLog).
    """
    if config.mode != "gen":
        raise ContractViolation(f"train_generative needs mode='gen', got {config.mode!r}")
    return _train(config, manifest, out_dir, extractor, echo)


def train_adversarial(config: TrainConfig, manifest: DatasetManifest, out_dir,
                      extractor: FeatureExtractor | None = None,
                      echo=None):
    """Alternate one discriminator step and one generator step per batch."""
    if config.mode != "gan":
        raise ContractViolation(f"train_adversarial needs mode='gan', got {config.mode!r}")
    return _train(config, manifest, out_dir, extractor, echo)


def _train(config, manifest, out_dir, extractor, echo):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    adversarial = config.mode == "gan"
    if extractor is None:
        extractor = build_feature_extractor("default")

    gen = Generator(config.generator_config(), seed=config.seed)
    g_states = init_adam(gen.named_params())
    weights = config.weights if adversarial else replace(config.weights, lambda_adv=0.0)
    use_adv = adversarial and weights.lambda_adv > 0.0

    disc = None
    d_states = None
    if adversarial:
        disc = Discriminator(config.discriminator_config(), seed=config.seed + 1)
        d_states = init_adam(disc.named_params())

    pairs_n = len(manifest.pairs("train", config.scale))
    steps_per_epoch = math.ceil(pairs_n / config.batch_size)
    betas = (config.adam_beta1, config.adam_beta2)

    log = TrainLog()
    ckpts = []
    saturated_run = 0
    step = 0
    stream = batch_iter(manifest, "train", config.scale, config.batch_size,
                        seed=config.seed + 2, epochs=config.epochs)
    for lr_batch, hr_batch in stream:
        step += 1
        t0 = time.perf_counter()
        terms = {}

        fake = gen.forward(lr_batch, train=True)

        if adversarial:
            cond = upsample_bicubic(lr_batch, config.scale)
            real_map = forward_discriminator(disc, hr_batch, cond, train=True)
            real_caches = disc.net.snapshot_caches()
            fake_map = forward_discriminator(disc, fake, cond, train=True)
            d_loss, _, d_dreal, d_dfake, _ = adversarial_pair_grads(real_map, fake_map)
            disc.backward(d_dfake)
            grads_fake = dict(disc.named_grads())
            disc.net.restore_caches(real_caches)
            disc.backward(d_dreal)
            d_grads = {k: grads_fake[k] + v for k, v in disc.named_grads().items()}
            new_d, d_states = adam_step_all(disc.named_params(), d_grads, d_states,
                                            config.learning_rate, betas,
                                            config.adam_epsilon)
            for k, v in new_d.items():
                disc.set_param(k, v)
            terms["d_loss"] = d_loss

            sat = _is_saturated(real_map) and _is_saturated(fake_map)
            saturated_run = saturated_run + 1 if sat else 0
            if saturated_run >= _SATURATION_LIMIT:
                raise NumericError(
                    f"discriminator outputs saturated at exactly 0/1 for "
                    f"{_SATURATION_LIMIT} consecutive steps (collapse at step {step})"
                )

        val_map = None
        if use_adv:
            val_map = forward_discriminator(disc, fake, cond, train=True,
                                            update_stats=False)
        total, dgen, d_dval, g_terms = generator_total_loss_grad(
            weights, extractor, fake, hr_batch,
            validity_map=val_map if use_adv else None,
        )
        terms.update(g_terms)
        terms["total"] = total
        _abort_if_nonfinite(terms, step)
        if use_adv:
            d_cand, _ = disc.backward(d_dval)
            dgen = dgen + d_cand
        gen.backward(dgen)
        new_g, g_states = adam_step_all(gen.named_params(), gen.named_grads(),
                                        g_states, config.learning_rate, betas,
                                        config.adam_epsilon)
        for k, v in new_g.items():
            gen.set_param(k, v)

        log.add_step(step, terms, (time.perf_counter() - t0) * 1e3)
        if echo and (step == 1 or step % 50 == 0):
            echo(f"step {step}: " + " ".join(f"{k}={v:.5g}" for k, v in sorted(terms.items())))

        if step % steps_per_epoch == 0:
            epoch = step // steps_per_epoch
            vp, vs = _validate_split(gen, manifest, config.scale)
            log.add_epoch(epoch, vp, vs)
            if config.checkpoint_every and epoch % config.checkpoint_every == 0:
                p = _checkpoint_path(out_dir, config.mode, f"e{epoch:04d}")
                save_checkpoint(gen, p)
                ckpts.append(p)

    final = _checkpoint_path(out_dir, config.mode, "final")
    save_checkpoint(gen, final)
    ckpts.append(final)
    if disc is not None:
        save_checkpoint(disc, out_dir / "disc_final.ckpt")
    log.save(out_dir / "train_log.txt")
    return ckpts, log


def _is_saturated(m: np.ndarray) -> bool:
    return bool(np.all((m == 0.0) | (m == 1.0)))


# ---------------------------------------------------------------------------
# inference

def infer(ckpt, input_image, roi=None, out_path=None):
    """Super-resolve an image file (or a region of it) through a checkpoint.

    ``roi`` is (x, y, w, h) in input pixels, validated before any compute;
    returns the output image array and writes PNG to ``out_path`` if given.
    """
    img = load_image(input_image)
    if roi is not None:
        x, y, w, h = (int(v) for v in roi)
        ih, iw = img.shape[:2]
        if w < 8 or h < 8:
            raise ContractViolation(f"roi extents must be >= 8, got w={w} h={h}")
        if x < 0 or y < 0 or x + w > iw or y + h > ih:
            raise ContractViolation(
                f"roi {(x, y, w, h)} out of bounds for {iw}x{ih} input"
            )
        img = img[y : y + h, x : x + w]
    gen = load_checkpoint(ckpt)
    if not isinstance(gen, Generator):
        raise ContractViolation(f"{ckpt} does not hold a generator checkpoint")
    out = gen.forward(image_to_tensor(img)[None])
    result = tensor_to_image(out[0])
    if out_path is not None:
        save_image(out_path, result)
    return result


# ---------------------------------------------------------------------------
# benchmarking

@dataclass
class BenchReport:
    width: int
    height: int
    iters: int
    mean_ms: float
    median_ms: float
    p95_ms: float

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms

    def to_text(self) -> str:
        return (
            f"input size        : {self.width}x{self.height}\n"
            f"timed iterations  : {self.iters}\n"
            f"latency mean (ms) : {self.mean_ms:.3f}\n"
            f"latency median(ms): {self.median_ms:.3f}\n"
            f"latency p95 (ms)  : {self.p95_ms:.3f}\n"
            f"throughput (fps)  : {self.fps:.3f}\n"
        )

    def to_machine(self) -> str:
        return (
            f"width={self.width},height={self.height},iters={self.iters},"
            f"latency_ms_mean={self.mean_ms:.6f},latency_ms_median={self.median_ms:.6f},"
            f"latency_ms_p95={self.p95_ms:.6f},fps={self.fps:.6f}"
        )


def bench(ckpt, size, iters, warmup: int = 3) -> BenchReport:
    """Per-frame latency of a checkpointed generator at the given input size."""
    if iters < 10:
        raise ContractViolation(f"iters must be >= 10, got {iters}")
    w, h = size
    gen = load_checkpoint(ckpt)
    x = np.random.default_rng(0).uniform(-1.0, 1.0, (1, 3, h, w)).astype(np.float32)
    for _ in range(warmup):
        gen.forward(x)
    lat = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter()
        gen.forward(x)
        lat[i] = (time.perf_counter() - t0) * 1e3
    return BenchReport(
        width=w, height=h, iters=iters,
        mean_ms=float(lat.mean()),
        median_ms=float(np.median(lat)),
        p95_ms=float(np.percentile(lat, 95)),
    )


# ---------------------------------------------------------------------------
# evaluation report

def eval_report(ckpt, manifest: DatasetManifest, split: str,
                report_path=None) -> MetricReport:
    """Run the checkpointed generator over a split and score every pair.

    Writes the aligned text table to ``report_path`` and the CSV twin to
    ``report_path + '.csv'`` when a path is given.
    """
    gen = load_checkpoint(ckpt) if not isinstance(ckpt, Generator) else ckpt
    if not isinstance(gen, Generator):
        raise ContractViolation(f"{ckpt} does not hold a generator checkpoint")
    scale = gen.config.scale
    pairs = manifest.pairs(split, scale)
    if not pairs:
        raise ContractViolation(f"split {split!r} is empty")
    report = MetricReport(scale_tag=f"{scale}x")
    for lr_path, hr_path in pairs:
        lr = image_to_tensor(load_image(lr_path))[None]
        out = tensor_to_image(gen.forward(lr)[0])
        hr = load_image(hr_path)
        report.rows.append(MetricRow(
            id=Path(hr_path).name,
            psnr=psnr(out, hr),
            ssim=ssim(out, hr),
            uiqm=uiqm(out).uiqm,
        ))
    report.rows.sort(key=lambda r: r.id)
    if report_path is not None:
        report.write(report_path, str(report_path) + ".csv")
    return report
