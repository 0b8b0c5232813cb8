"""Training loop: batched forward, matched loss with deep supervision,
Adam updates, validation-PPS model selection."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import RunConfig
from .csi import SynthConfig, split_dataset, synth_dataset
from .matching import matching_loss, pad_targets, pairwise_loss
from .metrics import MetricReport, evaluate_counts, standardize
from .model import ActivityModel
from .optim import Adam
from .tensor import Tensor


class NumericError(RuntimeError):
    """Training hit a non-finite loss."""


def synth_config_for(cfg: RunConfig, seed: int) -> SynthConfig:
    return SynthConfig(
        T=cfg.T,
        n_sc=cfg.n_sc,
        n_rx=cfg.n_rx,
        n_tx=cfg.n_tx,
        n_act=cfg.n_act,
        max_occupancy=cfg.max_occupancy,
        noise_std=cfg.noise_std,
        seed=seed,
    )


def build_dataset(cfg: RunConfig, seed: int):
    scfg = synth_config_for(cfg, seed)
    samples = synth_dataset(scfg, cfg.n_samples, seed=seed)
    return split_dataset(samples, (0.8, 0.1, 0.1), seed)


def batch_total_loss(
    layer_probs: list[Tensor],
    padded_targets: list[tuple[int, ...]],
    n_act: int,
    alpha_aux: float,
    rvq_term: Tensor | None,
    aux_independent: bool = False,
) -> Tensor:
    """Mean per-sample matched loss over the batch, plus the quantizer term."""
    b = layer_probs[0].shape[0]
    total = None
    for i in range(b):
        sample_probs = [T.embedding(p, np.int64(i)) for p in layer_probs]
        final_loss, assign = matching_loss(padded_targets[i], sample_probs[-1], n_act)
        s = final_loss
        if alpha_aux:
            for probs in sample_probs[:-1]:
                if aux_independent:
                    aux, _ = matching_loss(padded_targets[i], probs, n_act)
                else:
                    aux = pairwise_loss(padded_targets[i], probs, assign, n_act)
                s = s + alpha_aux * aux
        total = s if total is None else total + s
    total = total * (1.0 / b)
    if rvq_term is not None:
        total = total + rvq_term
    return total


def counts_of(samples, n_act: int) -> list[np.ndarray]:
    return [standardize(s.labels, n_act) for s in samples]


def evaluate_model(model: ActivityModel, samples, use_rvq=None, per_sample=False) -> MetricReport:
    amps = np.stack([s.amplitude for s in samples])
    if per_sample:
        preds = [model.predict_counts(a, use_rvq) for a in amps]
    else:
        preds = model.predict_counts_batch(amps, use_rvq)
    return evaluate_counts(counts_of(samples, model.cfg.n_act), preds)


class TrainResult:
    def __init__(self, model, history, best_val_pps, best_epoch):
        self.model = model
        self.history = history
        self.best_val_pps = best_val_pps
        self.best_epoch = best_epoch


def train(cfg: RunConfig, seed: int | None = None, log=None, dataset=None) -> TrainResult:
    """Run the full training phase and leave the model at its best-PPS state."""
    seed = cfg.seed if seed is None else seed
    log = log or (lambda msg: None)
    if dataset is None:
        train_set, val_set, test_set = build_dataset(cfg, seed)
    else:
        train_set, val_set, test_set = dataset
    model = ActivityModel(cfg, seed=seed)
    params = model.parameters()
    books = {k: v for k, v in params.items() if k.startswith("rvq.")}
    rest = {k: v for k, v in params.items() if k not in books}
    opt = Adam(
        rest,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        clip_norm=cfg.grad_clip if cfg.grad_clip > 0 else None,
    )
    opt_books = Adam(books, lr=cfg.codebook_lr or cfg.lr) if books else None
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
    drop_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(3,)))

    if cfg.use_rvq and train_set:
        first = np.stack([s.amplitude for s in train_set[: cfg.batch_size]])
        model.set_training(False)
        z0 = model.features(first).data
        model.set_training(True)
        model.quantizer.init_from_data(
            z0, np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(4,)))
        )

    history = []
    best_pps = -1.0
    best_epoch = -1
    best_snap = model.state_snapshot()
    stale = 0
    for epoch in range(cfg.epochs):
        if cfg.cosine_lr and cfg.epochs > 1:
            frac = epoch / (cfg.epochs - 1)
            scale = cfg.lr_floor + (1 - cfg.lr_floor) * 0.5 * (
                1 + np.cos(np.pi * frac)
            )
            opt.lr = cfg.lr * scale
            if opt_books:
                opt_books.lr = (cfg.codebook_lr or cfg.lr) * scale
        model.set_training(True)
        order = shuffle_rng.permutation(len(train_set))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(train_set), cfg.batch_size):
            batch = [train_set[i] for i in order[start : start + cfg.batch_size]]
            amps = np.stack([s.amplitude for s in batch])
            padded = [pad_targets(s.labels, cfg.n_queries) for s in batch]
            layer_probs, rvq_term = model.forward_train(
                amps, drop_rng, quantize=epoch >= cfg.rvq_warmup
            )
            if not np.isfinite(layer_probs[-1].data).all():
                raise NumericError(
                    f"non-finite class probabilities at epoch {epoch}, "
                    f"batch {n_batches}"
                )
            loss = batch_total_loss(
                layer_probs,
                padded,
                cfg.n_act,
                cfg.alpha_aux,
                rvq_term,
                cfg.aux_independent_matching,
            )
            if not np.isfinite(loss.data):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            opt.zero_grad()
            if opt_books:
                opt_books.zero_grad()
            loss.backward()
            opt.step()
            if opt_books and cfg.use_rvq:
                opt_books.step()
            epoch_loss += loss.item()
            n_batches += 1
        val = evaluate_model(model, val_set) if val_set else None
        val_pps = val.pps if val else 0.0
        history.append({"epoch": epoch, "loss": epoch_loss / max(n_batches, 1), "val_pps": val_pps})
        log(f"epoch {epoch:3d} loss {history[-1]['loss']:.4f} val_pps {val_pps:.3f}")
        if val_pps > best_pps:
            best_pps = val_pps
            best_epoch = epoch
            best_snap = model.state_snapshot()
            stale = 0
        else:
            stale += 1
        if best_pps >= cfg.early_stop_pps:
            log(f"early stop: val PPS {best_pps:.3f} at epoch {best_epoch}")
            break
        if cfg.patience and stale >= cfg.patience:
            log(f"early stop: no val improvement for {stale} epochs")
            break
    model.restore_snapshot(best_snap)
    model.set_training(False)
    return TrainResult(model, history, best_pps, best_epoch)
