"""Three-phase adaptation pipeline and the ablation runner.

Phase 0 trains a class-balanced source model on color-perturbed source
images (SGD + momentum). Phase 1 adapts it to unlabeled target images by
minimizing a confidence regularizer, MSL by default (AdamW). Phase 2
generates pseudo labels once, then self-trains with positive learning on
confident pixels and negative learning on the invalid mask, redrawing
complementary labels every step. A naive self-training baseline (drop
invalid pixels, regenerate labels each round) exists for the ablation table.

Adaptation phases only ever see label-stripped image views and a model
handle exposing forward / backward / parameters / lr_multipliers, so
source-freeness is structural.
"""

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import TargetImages, class_frequencies, color_perturb, generate_pair
from .errors import (
    ConfigError,
    EmptyEvaluationError,
    MissingLabelsError,
    NoSignalError,
    PartialResultsError,
    TrainingError,
)
from .losses import (
    cbce_loss,
    class_weights,
    entropy_loss,
    masked_pl_loss,
    msl_loss,
    plnl_loss,
)
from .metrics import ConfusionMatrix, iou_report
from .model import (
    Model,
    ModelConfig,
    clone_model,
    init_model,
    make_optimizer,
    model_hash,
    poly_lr,
    save_checkpoint,
)
from .pseudo import complementary_labels, make_pseudo_set, pseudo_set_hash
from .seeding import derive_rng

ABLATION_ARMS = (
    "SO",
    "SO+AUG",
    "SO+AUG+ENT",
    "SO+AUG+MSL",
    "SO+AUG+MSL+ST",
    "SO+AUG+MSL+NLPL",
)
LAMBDA_SWEEP = (0.1, 0.5, 1.0)


@dataclass(frozen=True)
class PhaseConfig:
    source_epochs: int = 25
    adapt_epochs: int = 1
    selftrain_epochs: int = 10
    batch_size: int = 2
    source_lr: float = 1e-2
    target_lr: float = 3e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    betas: tuple = (0.9, 0.99)
    lr_power: float = 0.9
    lambda_nl: float = 1.0
    confidence_threshold: float = 0.6
    augment_strength: float = 0.2
    regularizer: str = "msl"
    patch_size: int = 3
    hidden_sizes: tuple = (32, 32)
    head_lr_multiplier: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if min(self.source_epochs, self.adapt_epochs, self.selftrain_epochs) < 1:
            raise ConfigError("epoch counts must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if not 0.0 < self.confidence_threshold < 1.0:
            raise ConfigError("confidence threshold must lie in (0, 1)")
        if self.lambda_nl < 0:
            raise ConfigError("lambda_nl must be non-negative")
        if self.regularizer not in ("msl", "ent"):
            raise ConfigError(f"regularizer must be 'msl' or 'ent', got {self.regularizer!r}")
        if self.augment_strength < 0:
            raise ConfigError("augment_strength must be non-negative")
        object.__setattr__(self, "betas", tuple(self.betas))
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))

    def to_dict(self):
        d = dict(self.__dict__)
        d["betas"] = list(self.betas)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown phase config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "betas" in kwargs:
            kwargs["betas"] = tuple(kwargs["betas"])
        if "hidden_sizes" in kwargs:
            kwargs["hidden_sizes"] = tuple(kwargs["hidden_sizes"])
        return cls(**kwargs)

    def model_config(self, num_classes, in_channels):
        return ModelConfig(
            num_classes=num_classes,
            patch_size=self.patch_size,
            in_channels=in_channels,
            hidden_sizes=self.hidden_sizes,
            head_lr_multiplier=self.head_lr_multiplier,
        )


def config_hash(domain_spec, phase_cfg):
    payload = json.dumps(
        {"domain": domain_spec.to_dict(), "phases": phase_cfg.to_dict()}, sort_keys=True
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunRecord:
    phase: str
    loss_curve: list = field(default_factory=list)
    report: object = None
    checkpoint_path: str = None
    wall_clock: float = 0.0
    extras: dict = field(default_factory=dict)


def _require_label_free(target):
    if getattr(target, "has_labels", False):
        raise ConfigError(
            "adaptation phases accept only label-stripped views; pass dataset.images_only()"
        )
    return target.images


def _train_epochs(model, n_images, epochs, cfg, optimizer, base_lr, shuffle_rng,
                  batch_loss_and_grads, on_epoch_start=None, phase=""):
    """Shared mini-batch loop: shuffle, poly LR per step, mean grads per batch."""
    params = model.parameters()
    mults = model.lr_multipliers()
    steps_per_epoch = math.ceil(n_images / cfg.batch_size)
    total_steps = epochs * steps_per_epoch
    curve = []
    step = 0
    for epoch in range(epochs):
        if on_epoch_start is not None:
            on_epoch_start(epoch)
        order = shuffle_rng.permutation(n_images)
        epoch_loss = 0.0
        for b in range(steps_per_epoch):
            batch = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            lr = poly_lr(step, total_steps, base_lr, cfg.lr_power)
            value, grads = batch_loss_and_grads(batch, epoch, step)
            if not np.isfinite(value):
                raise TrainingError(f"{phase}: non-finite loss at epoch {epoch}")
            optimizer.step(params, grads, lr, mults)
            epoch_loss += value
            step += 1
        curve.append(epoch_loss / steps_per_epoch)
    return curve


def _loss_and_grads(model, image, loss_on_probs):
    """Fused forward/backward when the handle offers it, else the plain pair."""
    fused = getattr(model, "forward_backward", None)
    if fused is not None:
        return fused(image, loss_on_probs)
    out = loss_on_probs(model.forward(image))
    return out.value, model.backward(image, out.grad_probs)


def _mean_image_grads(model, items):
    """Average (loss value, parameter grads) over per-image (value, grads) pairs."""
    total = 0.0
    acc = None
    for value, grads in items:
        total += value
        if acc is None:
            acc = [g.copy() for g in grads]
        else:
            for a, g in zip(acc, grads):
                a += g
    scale = 1.0 / len(items)
    for a in acc:
        a *= scale
    return total * scale, acc


def train_source(source_train, cfg, num_classes=None, source_val=None,
                 checkpoint_path=None, model=None):
    """Phase 0: CBCE over color-perturbed source images with SGD momentum."""
    if not source_train.has_labels:
        raise MissingLabelsError("source training requires labels")
    t0 = time.monotonic()
    if num_classes is None:
        num_classes = int(max(lab.max() for lab in source_train.labels)) + 1
    in_channels = source_train.images[0].shape[-1]
    if model is None:
        model = init_model(cfg.model_config(num_classes, in_channels), cfg.seed)
    freqs = class_frequencies(source_train, num_classes)
    weights = class_weights(freqs)
    optimizer = make_optimizer("sgd", momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    shuffle_rng = derive_rng(cfg.seed, "source", "shuffle")

    def batch_fn(batch, epoch, step):
        items = []
        for j, idx in enumerate(batch):
            image = source_train.images[idx]
            if cfg.augment_strength > 0:
                aug_rng = derive_rng(cfg.seed, "source", "aug", step, j)
                image = color_perturb(image, cfg.augment_strength, aug_rng)
            label = source_train.labels[idx]
            items.append(_loss_and_grads(model, image,
                                         lambda p: cbce_loss(p, label, weights)))
        return _mean_image_grads(model, items)

    curve = _train_epochs(model, len(source_train), cfg.source_epochs, cfg, optimizer,
                          cfg.source_lr, shuffle_rng, batch_fn, phase="train_source")
    record = RunRecord(phase="train_source", loss_curve=curve,
                       extras={"class_weights": weights.w.tolist()})
    if source_val is not None:
        record.report = evaluate(model, source_val, metadata={"phase": "train_source"})
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)
        record.checkpoint_path = str(checkpoint_path)
    record.wall_clock = time.monotonic() - t0
    return model, record


def mean_confidence(model, images):
    """Mean per-pixel max probability over a list of images."""
    return float(np.mean([model.forward(img).max(axis=2).mean() for img in images]))


def adapt_unsupervised(model, target_images, cfg, checkpoint_path=None):
    """Phase 1: minimize MSL (or normalized entropy) on unlabeled target images."""
    images = _require_label_free(target_images)
    t0 = time.monotonic()
    loss_fn = msl_loss if cfg.regularizer == "msl" else entropy_loss
    optimizer = make_optimizer("adamw", weight_decay=cfg.weight_decay, betas=cfg.betas)
    shuffle_rng = derive_rng(cfg.seed, "adapt", cfg.regularizer, "shuffle")
    conf_before = mean_confidence(model, images)

    def batch_fn(batch, epoch, step):
        items = []
        for idx in batch:
            items.append(_loss_and_grads(model, images[idx], loss_fn))
        return _mean_image_grads(model, items)

    curve = _train_epochs(model, len(images), cfg.adapt_epochs, cfg, optimizer,
                          cfg.target_lr, shuffle_rng, batch_fn, phase="adapt_unsupervised")
    record = RunRecord(
        phase=f"adapt_{cfg.regularizer}",
        loss_curve=curve,
        extras={"conf_before": conf_before, "conf_after": mean_confidence(model, images)},
    )
    if checkpoint_path is not None and isinstance(model, Model):
        save_checkpoint(model, checkpoint_path)
        record.checkpoint_path = str(checkpoint_path)
    record.wall_clock = time.monotonic() - t0
    return model, record


def self_train_plnl(model, target_images, cfg, checkpoint_path=None):
    """Phase 2: fixed pseudo labels + invalid masks, per-step complementary
    labels, masked PL/NL objective with AdamW."""
    images = _require_label_free(target_images)
    t0 = time.monotonic()
    first_probs = model.forward(images[0])
    num_classes = first_probs.shape[-1]
    pseudo_sets = [make_pseudo_set(model.forward(img), cfg.confidence_threshold)
                   for img in images]
    if cfg.lambda_nl == 0 and all(ps.invalid_mask.all() for ps in pseudo_sets):
        raise NoSignalError("every pixel is invalid and lambda_nl is 0; nothing to learn")
    optimizer = make_optimizer("adamw", weight_decay=cfg.weight_decay, betas=cfg.betas)
    shuffle_rng = derive_rng(cfg.seed, "plnl", "shuffle")
    comp_hashes = []

    def batch_fn(batch, epoch, step):
        items = []
        for j, idx in enumerate(batch):
            image = images[idx]
            ps = pseudo_sets[idx]
            comp_rng = derive_rng(cfg.seed, "plnl", "comp", step, j)
            comp = complementary_labels(ps.labels, num_classes, comp_rng)
            if j == 0:
                comp_hashes.append(hashlib.sha256(comp.tobytes()).hexdigest()[:16])
            items.append(_loss_and_grads(
                model, image,
                lambda p, ps=ps, comp=comp: plnl_loss(
                    p, ps.labels, comp, ps.invalid_mask, cfg.lambda_nl)))
        return _mean_image_grads(model, items)

    curve = _train_epochs(model, len(images), cfg.selftrain_epochs, cfg, optimizer,
                          cfg.target_lr, shuffle_rng, batch_fn, phase="self_train_plnl")
    record = RunRecord(
        phase="self_train_plnl",
        loss_curve=curve,
        extras={
            "pseudo_hashes": [pseudo_set_hash(ps) for ps in pseudo_sets],
            "comp_hashes": comp_hashes,
            "lambda_nl": cfg.lambda_nl,
        },
    )
    if checkpoint_path is not None and isinstance(model, Model):
        save_checkpoint(model, checkpoint_path)
        record.checkpoint_path = str(checkpoint_path)
    record.wall_clock = time.monotonic() - t0
    return model, record


def naive_self_train(model, target_images, cfg, checkpoint_path=None):
    """Baseline ST: drop invalid pixels, regenerate pseudo labels every epoch."""
    images = _require_label_free(target_images)
    t0 = time.monotonic()
    optimizer = make_optimizer("adamw", weight_decay=cfg.weight_decay, betas=cfg.betas)
    shuffle_rng = derive_rng(cfg.seed, "naive_st", "shuffle")
    pseudo_sets = [None] * len(images)
    valid_fractions = []

    def regenerate(epoch):
        total_valid = 0.0
        for i, img in enumerate(images):
            pseudo_sets[i] = make_pseudo_set(model.forward(img), cfg.confidence_threshold)
            total_valid += 1.0 - pseudo_sets[i].invalid_mask.mean()
        valid_fractions.append(total_valid / len(images))

    def batch_fn(batch, epoch, step):
        items = []
        for idx in batch:
            ps = pseudo_sets[idx]
            items.append(_loss_and_grads(
                model, images[idx],
                lambda p, ps=ps: masked_pl_loss(p, ps.labels, 1.0 - ps.invalid_mask)))
        return _mean_image_grads(model, items)

    curve = _train_epochs(model, len(images), cfg.selftrain_epochs, cfg, optimizer,
                          cfg.target_lr, shuffle_rng, batch_fn,
                          on_epoch_start=regenerate, phase="naive_self_train")
    record = RunRecord(phase="naive_self_train", loss_curve=curve,
                       extras={"valid_fractions": valid_fractions})
    if checkpoint_path is not None and isinstance(model, Model):
        save_checkpoint(model, checkpoint_path)
        record.checkpoint_path = str(checkpoint_path)
    record.wall_clock = time.monotonic() - t0
    return model, record


def evaluate(model, eval_split, metadata=None):
    """Target-truth entry point: confusion over the split, IoU report."""
    if not eval_split.has_labels:
        raise MissingLabelsError("evaluation requires a labeled split")
    if len(eval_split) == 0:
        raise EmptyEvaluationError("evaluation split is empty")
    num_classes = model.forward(eval_split.images[0]).shape[-1]
    cm = ConfusionMatrix.zeros(num_classes)
    for img, gt in zip(eval_split.images, eval_split.labels):
        pred = np.argmax(model.forward(img), axis=2)
        cm.add(pred, gt)
    meta = dict(metadata or {})
    if isinstance(model, Model):
        meta.setdefault("model_hash", model_hash(model))
    return iou_report(cm, metadata=meta)


@dataclass
class AblationResult:
    rows: list          # (arm, seed, miou)
    lambda_rows: list   # (lambda, seed, miou)
    records: dict       # (arm, seed) -> RunRecord
    arm_means: dict
    lambda_means: dict


def _write_rows_csv(path, header, rows, means, chash):
    lines = [",".join(header)]
    for key, seed, miou in rows:
        lines.append(f"{key},{seed},{miou:.6f},{chash}")
    for key, miou in means.items():
        lines.append(f"{key},mean,{miou:.6f},{chash}")
    path.write_text("\n".join(lines) + "\n")


def run_ablation(spec, cfg, out_dir, seeds=(0, 1, 2, 3, 4), jobs=1):
    """Table-2/3 analogue: six phase arms plus a lambda sweep, per seed.

    Downstream arms branch from shared upstream checkpoints. Emits
    ablation.csv and lambda.csv under out_dir; raises PartialResultsError
    (listing completed arms) if any arm fails.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    chash = config_hash(spec, cfg)
    rows, lambda_rows, records = [], [], {}
    completed = []

    def run_seed(seed):
        seed_rows, seed_lrows, seed_records = [], [], {}
        seed_dir = out_dir / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        pair = generate_pair(replace(spec, seed=seed))
        target_view = pair.target_train  # already label-stripped
        base = replace(cfg, seed=seed)
        meta = {"seed": seed, "config_hash": chash}

        def finish(arm, model, record):
            record.report = evaluate(model, pair.target_eval, metadata=dict(meta, arm=arm))
            seed_records[(arm, seed)] = record
            seed_rows.append((arm, seed, record.report.miou))
            completed.append(arm)
            return model

        so_model, so_rec = train_source(
            pair.source_train, replace(base, augment_strength=0.0),
            num_classes=spec.num_classes, source_val=pair.source_val,
            checkpoint_path=seed_dir / "so.ckpt")
        finish("SO", so_model, so_rec)

        aug_model, aug_rec = train_source(
            pair.source_train, base, num_classes=spec.num_classes,
            source_val=pair.source_val, checkpoint_path=seed_dir / "so_aug.ckpt")
        finish("SO+AUG", aug_model, aug_rec)

        ent_model, ent_rec = adapt_unsupervised(
            clone_model(aug_model), target_view.images_only(),
            replace(base, regularizer="ent"), checkpoint_path=seed_dir / "ent.ckpt")
        ent_rec.extras["base_checkpoint"] = str(seed_dir / "so_aug.ckpt")
        finish("SO+AUG+ENT", ent_model, ent_rec)

        msl_model, msl_rec = adapt_unsupervised(
            clone_model(aug_model), target_view.images_only(),
            replace(base, regularizer="msl"), checkpoint_path=seed_dir / "msl.ckpt")
        msl_rec.extras["base_checkpoint"] = str(seed_dir / "so_aug.ckpt")
        finish("SO+AUG+MSL", msl_model, msl_rec)

        st_model, st_rec = naive_self_train(
            clone_model(msl_model), target_view.images_only(), base,
            checkpoint_path=seed_dir / "st.ckpt")
        st_rec.extras["base_checkpoint"] = str(seed_dir / "msl.ckpt")
        finish("SO+AUG+MSL+ST", st_model, st_rec)

        for lam in LAMBDA_SWEEP:
            nlpl_model, nlpl_rec = self_train_plnl(
                clone_model(msl_model), target_view.images_only(),
                replace(base, lambda_nl=lam),
                checkpoint_path=seed_dir / f"nlpl_lam{lam}.ckpt")
            nlpl_rec.extras["base_checkpoint"] = str(seed_dir / "msl.ckpt")
            nlpl_rec.report = evaluate(
                nlpl_model, pair.target_eval, metadata=dict(meta, arm=f"NLPL(lam={lam})"))
            seed_lrows.append((lam, seed, nlpl_rec.report.miou))
            seed_records[(f"NLPL(lam={lam})", seed)] = nlpl_rec
            if lam == cfg.lambda_nl:
                seed_records[("SO+AUG+MSL+NLPL", seed)] = nlpl_rec
                seed_rows.append(("SO+AUG+MSL+NLPL", seed, nlpl_rec.report.miou))
        return seed_rows, seed_lrows, seed_records

    def collect(result):
        seed_rows, seed_lrows, seed_records = result
        rows.extend(seed_rows)
        lambda_rows.extend(seed_lrows)
        records.update(seed_records)

    try:
        if jobs > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for result in pool.map(run_seed, seeds):
                    collect(result)
        else:
            for seed in seeds:
                collect(run_seed(seed))
    except (TrainingError, EmptyEvaluationError) as exc:
        raise PartialResultsError(f"ablation arm failed: {exc}", sorted(set(completed))) from exc

    arm_means = {
        arm: float(np.mean([m for a, _, m in rows if a == arm])) for arm in ABLATION_ARMS
    }
    lambda_means = {
        str(lam): float(np.mean([m for l, _, m in lambda_rows if l == lam]))
        for lam in LAMBDA_SWEEP
    }
    order = {arm: i for i, arm in enumerate(ABLATION_ARMS)}
    rows.sort(key=lambda r: (order[r[0]], r[1]))
    lambda_rows.sort()
    _write_rows_csv(out_dir / "ablation.csv", ["arm", "seed", "miou", "config_hash"],
                    rows, arm_means, chash)
    _write_rows_csv(out_dir / "lambda.csv", ["lambda_nl", "seed", "miou", "config_hash"],
                    [(str(l), s, m) for l, s, m in lambda_rows],
                    lambda_means, chash)
    return AblationResult(rows, lambda_rows, records, arm_means, lambda_means)
