"""The assembled pipeline: backbone -> RVQ -> encoder -> decoder.

A trained model is a named parameter dict plus batch-norm running state and
frozen codebooks; the whole thing round-trips through one checkpoint file.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .backbone import Backbone, BackboneConfig, ConvSpec
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .config import RunConfig
from .matching import NO_PERSON
from .metrics import standardize
from .rvq import RvqCodebooks, rvq_encode, rvq_loss, straight_through
from .tensor import Tensor
from .transformer import Decoder, Encoder


def backbone_for(cfg: RunConfig) -> BackboneConfig:
    if cfg.d == 64 and cfg.channels >= 64:
        dsc = [ConvSpec(5, 2, 32), ConvSpec(5, 2, 48), ConvSpec(5, 2, 64)]
        ac = [64, 64, 64]
        ac_kernel = 5
    else:
        w = max(cfg.d, 16)
        dsc = [ConvSpec(5, 2, w), ConvSpec(5, 2, w), ConvSpec(5, 2, w)]
        ac = [w, w, w]
        ac_kernel = 3
    return BackboneConfig(
        in_channels=cfg.channels,
        dsc=dsc,
        ac_kernel=ac_kernel,
        ac_channels=ac,
        final=ConvSpec(5, 2, cfg.d),
    )


class ActivityModel:
    def __init__(self, cfg: RunConfig, seed: int | None = None):
        self.cfg = cfg
        seed = cfg.seed if seed is None else seed
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
        self.backbone = Backbone(backbone_for(cfg), rng)
        self.seq_len = self.backbone.cfg.output_length(cfg.T)
        self.quantizer = RvqCodebooks(
            cfg.rvq_layers,
            cfg.codebook_size,
            cfg.d,
            rng,
            commitment_cost=cfg.commitment_cost,
            dropout_prob=cfg.rvq_dropout,
            squared_norms=cfg.squared_rvq_norms,
            encoder_pull=cfg.rvq_encoder_pull,
        )
        self.encoder = Encoder(cfg.d, cfg.n_heads, cfg.n_enc, rng)
        self.decoder = Decoder(
            cfg.d,
            cfg.n_heads,
            cfg.n_dec,
            cfg.n_queries,
            cfg.n_classes,
            rng,
            queries_in_self_attn=cfg.queries_in_self_attn,
        )
        self.training = True

    # -- modes -----------------------------------------------------------------

    def set_training(self, training: bool):
        self.training = training
        self.backbone.set_training(training)

    # -- parameter registry ------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.backbone.parameters("backbone"))
        out.update(self.quantizer.parameters("rvq"))
        out.update(self.encoder.parameters("encoder"))
        out.update(self.decoder.parameters("decoder"))
        return out

    def parameter_counts(self) -> dict[str, int]:
        counts = {"backbone": 0, "rvq": 0, "encoder": 0, "decoder": 0}
        for name, p in self.parameters().items():
            counts[name.split(".", 1)[0]] += p.size
        counts["total"] = sum(counts.values())
        return counts

    # -- checkpointing -------------------------------------------------------------

    def _geometry(self) -> np.ndarray:
        c = self.cfg
        return np.array(
            [
                c.T,
                c.channels,
                c.d,
                self.seq_len,
                c.rvq_layers,
                c.codebook_size,
                c.n_queries,
                c.n_act,
                c.n_enc,
                c.n_dec,
                c.n_heads,
            ],
            dtype=np.float64,
        )

    def save(self, path: str):
        tensors = {name: p.data for name, p in self.parameters().items()}
        tensors.update(self.backbone.state("backbone"))
        tensors["meta.geometry"] = self._geometry()
        save_tensors(tensors, path)

    def load(self, path: str):
        tensors = load_tensors(path)
        geom = tensors.get("meta.geometry")
        if geom is None or not np.array_equal(geom, self._geometry()):
            raise CheckpointError(
                f"checkpoint geometry {geom} does not match configuration "
                f"{self._geometry()}"
            )
        params = self.parameters()
        for name, p in params.items():
            if name not in tensors:
                raise CheckpointError(f"checkpoint missing tensor {name!r}")
            if tensors[name].shape != p.data.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {tensors[name].shape}, "
                    f"expected {p.data.shape}"
                )
            p.data = tensors[name].copy()
        self.backbone.load_state("backbone", tensors)

    def state_snapshot(self) -> dict[str, np.ndarray]:
        snap = {name: p.data.copy() for name, p in self.parameters().items()}
        snap.update({k: v.copy() for k, v in self.backbone.state("backbone").items()})
        return snap

    def restore_snapshot(self, snap: dict[str, np.ndarray]):
        for name, p in self.parameters().items():
            p.data = snap[name].copy()
        self.backbone.load_state("backbone", snap)

    # -- forward passes ---------------------------------------------------------------

    def features(self, amps: np.ndarray) -> Tensor:
        """Backbone features for an amplitude batch (B, T, C) -> (B, l, d)."""
        return self.backbone(Tensor(amps))

    def forward_train(
        self,
        amps: np.ndarray,
        dropout_rng: np.random.Generator | None,
        quantize: bool = True,
    ):
        """Training-time pass; returns (per-layer probs, rvq loss term).

        With ``quantize=False`` the features pass through unquantized while
        the codebook loss is still computed, letting the codebooks fit the
        feature distribution before quantization noise reaches the decoder.
        """
        z = self.features(amps)
        if self.cfg.use_rvq:
            mask = None
            if dropout_rng is not None and self.quantizer.dropout_prob > 0:
                mask = dropout_rng.random(self.cfg.rvq_layers) < self.quantizer.dropout_prob
            encoding = rvq_encode(z.data, self.quantizer, mask)
            rvq_term = rvq_loss(z, encoding, self.quantizer)
            feats = straight_through(z, encoding.quantized) if quantize else z
        else:
            rvq_term = None
            feats = z
        enc = self.encoder(feats)
        layer_logits = self.decoder(enc)
        layer_probs = [T.softmax(lg) for lg in layer_logits]
        return layer_probs, rvq_term

    def forward_monolithic(self, amp: np.ndarray, use_rvq: bool | None = None) -> np.ndarray:
        """Single-sample inference; returns final-layer logits (N_q, classes).

        The quantized path reconstructs features as the per-layer prototype
        sum, matching the cloud-side reconstruction bit for bit.
        """
        use_rvq = self.cfg.use_rvq if use_rvq is None else use_rvq
        was_training = self.training
        self.set_training(False)
        try:
            z = self.features(amp[None]).data[0]
            feats = rvq_encode(z, self.quantizer).quantized if use_rvq else z
            return self._cloud_forward(feats)
        finally:
            self.set_training(was_training)

    def _cloud_forward(self, feats: np.ndarray) -> np.ndarray:
        """Transformer pass over (l, d) features; returns final logits."""
        enc = self.encoder(Tensor(feats[None]))
        logits = self.decoder(enc)[-1]
        return logits.data[0]

    def logits_to_ids(self, logits: np.ndarray) -> list[int]:
        """Per-query argmax; the last column is the "no person" class."""
        ids = []
        for row in logits:
            k = int(np.argmax(row))
            ids.append(NO_PERSON if k == self.cfg.n_act else k + 1)
        return ids

    def predict_counts(self, amp: np.ndarray, use_rvq: bool | None = None) -> np.ndarray:
        logits = self.forward_monolithic(amp, use_rvq)
        return standardize(self.logits_to_ids(logits), self.cfg.n_act)

    def predict_counts_batch(
        self, amps: np.ndarray, use_rvq: bool | None = None, batch_size: int = 64
    ) -> list[np.ndarray]:
        """Batched inference for bulk evaluation (not bit-matched to the
        per-sample path; use forward_monolithic where exact framing matters)."""
        use_rvq = self.cfg.use_rvq if use_rvq is None else use_rvq
        was_training = self.training
        self.set_training(False)
        out = []
        try:
            for start in range(0, len(amps), batch_size):
                chunk = np.asarray(amps[start : start + batch_size])
                z = self.features(chunk).data
                feats = rvq_encode(z, self.quantizer).quantized if use_rvq else z
                enc = self.encoder(Tensor(feats))
                logits = self.decoder(enc)[-1].data
                for row in logits:
                    out.append(standardize(self.logits_to_ids(row), self.cfg.n_act))
        finally:
            self.set_training(was_training)
        return out
