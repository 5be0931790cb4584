"""Sequence autoencoder over origin vectors: the architecture simulator and decoder.

The encoder (simulator) reads an origin vector as ``L`` tokens through one
LSTM layer and projects the final hidden state to an ``n``-dimensional
embedding. The decoder linearly maps the embedding to the initial ``(h, c)``
of a mirrored LSTM, unrolls ``L`` steps feeding back its previous output
token, and emits each token through a sigmoid head.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import NumericError, ParamSet, ShapeError, adam_step
from .nn.layers import (
    dense,
    dense_backward,
    lstm_step,
    lstm_step_backward,
    mse,
    sigmoid,
    sigmoid_backward,
)
from .nn.params import atomic_write
from .space import SpaceConfig, encode_origin, random_architecture

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = 64


def default_embed_dim(cfg: SpaceConfig) -> int:
    return max(2, min(32, cfg.origin_dim // 4))


def glorot_uniform(rng, shape):
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal_blocks(rng, shape):
    """Stack of independent orthogonal (H, H) blocks, one per gate."""
    H = shape[1]
    return np.concatenate([np.linalg.qr(rng.normal(size=(H, H)))[0] for _ in range(shape[0] // H)])


def _lstm_params(rng, token_width, hidden):
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget gate
    return {
        "Wx": glorot_uniform(rng, (4 * hidden, token_width)),
        "Wh": orthogonal_blocks(rng, (4 * hidden, hidden)),
        "b": b,
    }


def init_encoder(token_width, hidden, embed_dim, rng) -> ParamSet:
    return ParamSet(
        {
            **_lstm_params(rng, token_width, hidden),
            "Wp": glorot_uniform(rng, (embed_dim, hidden)),
            "bp": np.zeros(embed_dim),
        }
    )


def init_decoder(token_width, hidden, embed_dim, rng) -> ParamSet:
    return ParamSet(
        {
            "Ws": glorot_uniform(rng, (2 * hidden, embed_dim)),
            "bs": np.zeros(2 * hidden),
            **_lstm_params(rng, token_width, hidden),
            "Wo": glorot_uniform(rng, (token_width, hidden)),
            "bo": np.zeros(token_width),
        }
    )


# -- encoder / decoder passes -------------------------------------------------


def encoder_forward(enc: ParamSet, x):
    """``x`` of shape (B, L, T) -> embeddings (B, n) and a cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != enc["Wx"].shape[1]:
        raise ShapeError(f"encoder expects (batch, L, {enc['Wx'].shape[1]}), got {x.shape}")
    B, L, _ = x.shape
    H = enc["Wh"].shape[1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    caches = []
    for t in range(L):
        h, c, cache = lstm_step(enc["Wx"], enc["Wh"], enc["b"], x[:, t], h, c)
        caches.append(cache)
    emb, hin = dense(enc["Wp"], enc["bp"], h)
    return emb, (caches, hin)


def encoder_backward(enc: ParamSet, demb, cache):
    caches, hin = cache
    grads = {k: np.zeros_like(v) for k, v in enc.items()}
    grads["Wp"], grads["bp"], dh = dense_backward(demb, enc["Wp"], hin)
    dc = np.zeros_like(dh)
    for lc in reversed(caches):
        dWx, dWh, db, _, dh, dc = lstm_step_backward(dh, dc, enc["Wx"], enc["Wh"], lc)
        grads["Wx"] += dWx
        grads["Wh"] += dWh
        grads["b"] += db
    return grads


def decoder_forward(dec: ParamSet, emb, steps: int):
    """Embeddings (B, n) -> reconstruction (B, steps, T) in (0, 1)."""
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != dec["Ws"].shape[1]:
        raise ShapeError(f"decoder expects (batch, {dec['Ws'].shape[1]}), got {emb.shape}")
    B = emb.shape[0]
    H = dec["Wh"].shape[1]
    T = dec["Wo"].shape[0]
    s, ein = dense(dec["Ws"], dec["bs"], emb)
    h, c = s[:, :H], s[:, H:]
    y = np.zeros((B, T))
    outs, caches = [], []
    for _ in range(steps):
        h, c, lc = lstm_step(dec["Wx"], dec["Wh"], dec["b"], y, h, c)
        y = sigmoid(dense(dec["Wo"], dec["bo"], h)[0])
        outs.append(y)
        caches.append((lc, h))
    return np.stack(outs, axis=1), (ein, caches, outs)


def decoder_backward(dec: ParamSet, drec, cache):
    """Backprop through the unrolled decoder. Returns (grads, d_embedding)."""
    ein, caches, outs = cache
    grads = {k: np.zeros_like(v) for k, v in dec.items()}
    B, steps, T = drec.shape
    H = dec["Wh"].shape[1]
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    dy_next = np.zeros((B, T))
    for t in reversed(range(steps)):
        lc, h = caches[t]
        dy = drec[:, t] + dy_next
        dz = sigmoid_backward(dy, outs[t])
        dWo, dbo, dh_out = dense_backward(dz, dec["Wo"], h)
        grads["Wo"] += dWo
        grads["bo"] += dbo
        dWx, dWh, db, dx, dh, dc = lstm_step_backward(dh + dh_out, dc, dec["Wx"], dec["Wh"], lc)
        grads["Wx"] += dWx
        grads["Wh"] += dWh
        grads["b"] += db
        dy_next = dx
    ds = np.concatenate([dh, dc], axis=1)
    grads["Ws"], grads["bs"], demb = dense_backward(ds, dec["Ws"], ein)
    return grads, demb


# -- model --------------------------------------------------------------------


@dataclass
class AutoencoderModel:
    space: SpaceConfig
    embed_dim: int
    encoder: ParamSet
    decoder: ParamSet
    hidden: int = DEFAULT_HIDDEN
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.embed_dim < self.origin_dim:
            raise ValueError(
                f"embedding dimension {self.embed_dim} must be below origin dimension {self.origin_dim}"
            )

    @classmethod
    def create(cls, space: SpaceConfig, embed_dim=None, hidden=DEFAULT_HIDDEN, seed=0):
        embed_dim = embed_dim or default_embed_dim(space)
        rng = np.random.default_rng(seed)
        T = space.token_width
        return cls(
            space,
            embed_dim,
            init_encoder(T, hidden, embed_dim, rng),
            init_decoder(T, hidden, embed_dim, rng),
            hidden,
            {"init_seed": seed},
        )

    @property
    def origin_dim(self) -> int:
        return self.space.origin_dim

    @property
    def layer_count(self) -> int:
        return self.space.layer_count

    @property
    def token_width(self) -> int:
        return self.space.token_width

    def as_tokens(self, x):
        """Reshape origin vectors (m,) / (B, m) / (B, L, T) to (B, L, T)."""
        x = np.asarray(x, dtype=np.float64)
        L, T = self.layer_count, self.token_width
        if x.shape[-2:] == (L, T) and x.ndim == 3:
            return x
        if x.ndim == 1 and x.size == L * T:
            return x.reshape(1, L, T)
        if x.ndim == 2 and x.shape[1] == L * T:
            return x.reshape(-1, L, T)
        raise ShapeError(f"cannot read shape {x.shape} as {L} tokens of width {T}")

    def forward(self, x):
        """Returns (embeddings (B, n), reconstructions (B, L, T))."""
        emb, _ = encoder_forward(self.encoder, self.as_tokens(x))
        rec, _ = decoder_forward(self.decoder, emb, self.layer_count)
        return emb, rec

    def loss_and_grads(self, x):
        x = self.as_tokens(x)
        emb, ecache = encoder_forward(self.encoder, x)
        rec, dcache = decoder_forward(self.decoder, emb, self.layer_count)
        loss, drec = mse(rec, x)
        dgrads, demb = decoder_backward(self.decoder, drec, dcache)
        egrads = encoder_backward(self.encoder, demb, ecache)
        return loss, egrads, dgrads

    def mse(self, x) -> float:
        x = self.as_tokens(x)
        return mse(self.forward(x)[1], x)[0]

    # -- persistence ----------------------------------------------------------

    def sidecar(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "origin_dim": self.origin_dim,
            "layer_count": self.layer_count,
            "skips_enabled": self.space.skips_enabled,
            "hidden": self.hidden,
            "seed": self.meta.get("seed"),
            "epochs": self.meta.get("epochs", 0),
        }

    def save(self, directory) -> None:
        d = Path(directory)
        self.encoder.save(d / "encoder.bin")
        self.decoder.save(d / "decoder.bin")
        atomic_write(d / "autoencoder.json", json.dumps(self.sidecar(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "AutoencoderModel":
        d = Path(directory)
        meta = json.loads((d / "autoencoder.json").read_text())
        space = SpaceConfig(meta["layer_count"], meta.get("skips_enabled", True))
        model = cls(
            space,
            meta["embed_dim"],
            ParamSet.load(d / "encoder.bin"),
            ParamSet.load(d / "decoder.bin"),
            meta.get("hidden", DEFAULT_HIDDEN),
            {k: meta.get(k) for k in ("seed", "epochs")},
        )
        if model.origin_dim != meta["origin_dim"]:
            raise ShapeError("checkpoint origin_dim does not match its layer count")
        return model


def simulate(model: AutoencoderModel, noise):
    """Simulator half: uniform noise of origin shape -> embeddings."""
    return encoder_forward(model.encoder, model.as_tokens(noise))[0]


def encode(model: AutoencoderModel, origin):
    return simulate(model, origin)


def decode(model: AutoencoderModel, emb):
    """Embedding(s) -> origin vector(s) with every coordinate in (0, 1)."""
    emb = np.asarray(emb, dtype=np.float64)
    single = emb.ndim == 1
    rec, _ = decoder_forward(model.decoder, emb.reshape(1, -1) if single else emb, model.layer_count)
    flat = rec.reshape(rec.shape[0], -1)
    return flat[0] if single else flat


# -- pretraining --------------------------------------------------------------


def sample_pretrain_batch(batch: int, cfg: SpaceConfig, seed, one_hot: bool = False):
    """``batch`` origin-shaped samples of shape (batch, L, T).

    Default: i.i.d. Uniform[0, 1] over every coordinate. With ``one_hot``,
    encodings of uniformly random valid architectures instead.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (batch, cfg.layer_count, cfg.token_width)
    if not one_hot:
        return rng.random(shape)
    seeds = rng.integers(0, 2**63 - 1, size=batch)
    return np.stack([encode_origin(random_architecture(cfg, int(s)), cfg) for s in seeds]).reshape(shape)


@dataclass
class PretrainReport:
    epochs: int
    initial_holdout_mse: float
    final_train_mse: float
    final_holdout_mse: float
    loss_curve: list  # (epoch, mean train mse)
    holdout_curve: list  # (epoch, holdout mse)

    @property
    def improved(self) -> bool:
        return self.final_holdout_mse < self.initial_holdout_mse

    @property
    def relative_reduction(self) -> float:
        return 1.0 - self.final_holdout_mse / self.initial_holdout_mse

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "initial_holdout_mse": self.initial_holdout_mse,
            "final_train_mse": self.final_train_mse,
            "final_holdout_mse": self.final_holdout_mse,
            "improved": self.improved,
            "loss_curve": self.loss_curve,
            "holdout_curve": self.holdout_curve,
        }


def pretrain(
    model: AutoencoderModel,
    epochs: int = 50,
    batch: int = 64,
    lr: float = 1e-5,
    seed: int = 0,
    batches_per_epoch: int = 256,
    holdout_size: int = 4096,
    one_hot: bool = False,
    checkpoint_dir=None,
) -> PretrainReport:
    """Fit the autoencoder with Adam on reconstruction MSE.

    Epoch 0 of the holdout curve is the untrained model. On a non-finite
    loss the parameters are rolled back to the last completed epoch and
    NumericError is raised.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    train_seq, hold_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(train_seq)
    holdout = sample_pretrain_batch(holdout_size, model.space, np.random.default_rng(hold_seq), one_hot)

    initial = model.mse(holdout)
    holdout_curve = [(0, initial)]
    loss_curve = []
    good = (model.encoder.copy(), model.decoder.copy())
    for epoch in range(1, epochs + 1):
        total = 0.0
        for _ in range(batches_per_epoch):
            x = sample_pretrain_batch(batch, model.space, rng, one_hot)
            loss, eg, dg = model.loss_and_grads(x)
            if not math.isfinite(loss):
                model.encoder, model.decoder = good
                raise NumericError(f"non-finite pretraining loss at epoch {epoch}")
            adam_step(model.encoder, eg, lr)
            adam_step(model.decoder, dg, lr)
            total += loss
        loss_curve.append((epoch, total / batches_per_epoch))
        holdout_curve.append((epoch, model.mse(holdout)))
        good = (model.encoder.copy(), model.decoder.copy())
        model.meta.update(seed=seed, epochs=epoch)
        if checkpoint_dir is not None:
            model.save(checkpoint_dir)
        log.info("epoch %d train_mse=%.6f holdout_mse=%.6f", epoch, loss_curve[-1][1], holdout_curve[-1][1])

    report = PretrainReport(
        epochs, initial, loss_curve[-1][1], holdout_curve[-1][1], loss_curve, holdout_curve
    )
    if not report.improved:
        log.warning("pretraining did not improve holdout MSE (%.6f -> %.6f)", initial, report.final_holdout_mse)
    return report
