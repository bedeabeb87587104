"""Stage-1 image auto-encoders: VQVAE, and the VQGAN variant.

The encoder downsamples by 8 with strided convolutions into a D-channel
feature grid; each cell is snapped to its nearest codebook row (squared
Euclidean distance, ties to the lowest index) and decoded back. Training
follows the three-term quantization objective — codebook pull, commitment
pull, reconstruction — with the straight-through estimator carrying the
reconstruction gradient past the discrete bottleneck. The VQGAN variant
adds a patch discriminator: non-saturating adversarial loss plus an L1
feature-matching perceptual term over discriminator activations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as T
from .nn import Conv2d
from .optim import Adam
from .tensor import Tensor

DEFAULT_BETA = 0.25


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


@dataclass
class VQConfig:
    variant: str = "vqvae"  # vqvae | vqgan
    image_size: int = 64
    codebook_size: int = 512
    embed_dim: int = 64
    downsample: int = 8  # spatial reduction; one strided conv per factor of 2
    channels: tuple[int, ...] = (16, 32, 64)
    beta: float = DEFAULT_BETA
    lr: float = 1e-3
    lr_decay: float = 0.99
    epochs: int = 40
    batch_size: int = 16
    seed: int = 0
    holdout_fraction: float = 0.1
    gan_weight: float = 0.1
    perceptual_weight: float = 0.1
    disc_warmup_steps: int = 2000
    target_holdout_psnr: float = 0.0  # early stop when exceeded (0 = never)

    def __post_init__(self):
        levels = int(self.downsample).bit_length() - 1
        if 2**levels != self.downsample or levels < 1:
            raise ValueError(f"downsample must be a power of two >= 2, got {self.downsample}")
        if len(self.channels) != levels:
            raise ValueError(
                f"channels {self.channels} must list one width per downsample "
                f"level ({levels} for downsample={self.downsample})"
            )

    @property
    def grid(self) -> int:
        return self.image_size // self.downsample

    @classmethod
    def from_dict(cls, values: dict) -> "VQConfig":
        kwargs = {}
        for name in cls.__dataclass_fields__:
            if name in values:
                kwargs[name] = values[name]
        if "channels" in kwargs and isinstance(kwargs["channels"], str):
            kwargs["channels"] = tuple(int(c) for c in kwargs["channels"].split(","))
        return cls(**kwargs)


def nearest_indices(features: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Snap (N, D, G, G) features to nearest codebook rows -> (N, G, G) ids.

    Distances are evaluated in float64 so ties resolve identically to a
    direct |f - c|^2 scan; argmin picks the lowest index on exact ties.
    """
    n, d, g1, g2 = features.shape
    flat = features.transpose(0, 2, 3, 1).reshape(-1, d).astype(np.float64)
    cb = codebook.astype(np.float64)
    d2 = (
        (flat * flat).sum(axis=1, keepdims=True)
        - 2.0 * (flat @ cb.T)
        + (cb * cb).sum(axis=1)
    )
    return d2.argmin(axis=1).reshape(n, g1, g2)


class VQModel:
    """Encoder, codebook, decoder (and discriminator for the vqgan variant)."""

    def __init__(self, config: VQConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(config.seed)
        chans = config.channels
        d = config.embed_dim
        widths = (3,) + tuple(chans)
        self.enc = [
            Conv2d(rng, widths[i], widths[i + 1], 4, stride=2, padding=1)
            for i in range(len(chans))
        ]
        self.enc.append(Conv2d(rng, chans[-1], d, 3, stride=1, padding=1))
        self.dec = [Conv2d(rng, d, chans[-1], 3, stride=1, padding=1)]
        self.dec.extend(
            Conv2d(rng, widths[i + 1], widths[i], 4, stride=2, padding=1, transpose=True)
            for i in reversed(range(len(chans)))
        )
        k = config.codebook_size
        self.codebook = Tensor(
            rng.uniform(-1.0 / k, 1.0 / k, size=(k, d)), requires_grad=True
        )
        self.disc = (
            PatchDiscriminator(rng, config.channels) if config.variant == "vqgan" else None
        )

    def encode_features(self, images: Tensor) -> Tensor:
        x = images
        for conv in self.enc[:-1]:
            x = T.relu(conv(x))
        return self.enc[-1](x)

    def decode_features(self, quantized: Tensor) -> Tensor:
        x = quantized
        for conv in self.dec[:-1]:
            x = T.relu(conv(x))
        return T.sigmoid(self.dec[-1](x))

    def quantize(self, features: Tensor):
        """Return (indices, codebook rows on the graph, straight-through features)."""
        idx = nearest_indices(features.data, self.codebook.data)
        rows = T.embedding(self.codebook, idx)  # (N, G, G, D): grads reach the codebook
        quantized_nchw = Tensor(rows.data.transpose(0, 3, 1, 2).copy())
        st = T.straight_through(features, quantized_nchw)
        return idx, rows, st

    def vq_loss(self, images: Tensor, features: Tensor, rows: Tensor, recon: Tensor):
        """Three-term objective; per-cell squared distances summed over channels."""
        feats_nhwc = features.transpose(0, 2, 3, 1)
        l_codebook = ((T.stop_gradient(feats_nhwc) - rows) ** 2.0).sum(axis=-1).mean()
        l_commit = ((T.stop_gradient(rows) - feats_nhwc) ** 2.0).sum(axis=-1).mean()
        l_rec = ((images - recon) ** 2.0).sum(axis=1).mean()
        total = l_codebook + self.config.beta * l_commit + l_rec
        return total, {
            "l_codebook": float(l_codebook.data),
            "l_commit": float(l_commit.data),
            "l_rec": float(l_rec.data),
        }

    def generator_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {"codebook": self.codebook}
        for i, conv in enumerate(self.enc):
            out.update(conv.params(f"enc{i}"))
        for i, conv in enumerate(self.dec):
            out.update(conv.params(f"dec{i}"))
        return out

    def params(self) -> dict[str, Tensor]:
        out = self.generator_params()
        if self.disc is not None:
            out.update(self.disc.params("disc"))
        return out

    def encoder_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.enc):
            out.update(conv.params(f"enc{i}"))
        return out

    # -- inference ------------------------------------------------------------

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        """uint8 (H, W, 3) image -> (G, G) int code grid. Deterministic."""
        batch = _to_batch(image)
        with T.no_grad():
            feats = self.encode_features(Tensor(batch))
        return nearest_indices(feats.data, self.codebook.data)[0]

    def decode_latents(self, latents: np.ndarray) -> np.ndarray:
        """(G, G) code grid -> uint8 (H, W, 3) image."""
        latents = np.asarray(latents)
        if latents.min() < 0 or latents.max() >= self.config.codebook_size:
            raise ValueError(
                f"latent indices out of range [0, {self.config.codebook_size})"
            )
        rows = self.codebook.data[latents]  # (G, G, D)
        quantized = rows.transpose(2, 0, 1)[None]
        with T.no_grad():
            recon = self.decode_features(Tensor(quantized))
        img = np.clip(recon.data[0] * 255.0, 0, 255).astype(np.uint8)
        return img.transpose(1, 2, 0)


class PatchDiscriminator:
    """Conv stack emitting a grid of real/fake patch logits."""

    def __init__(self, rng, channels: tuple[int, ...]):
        c0, c1, c2 = channels
        self.convs = [
            Conv2d(rng, 3, c0, 4, stride=2, padding=1),
            Conv2d(rng, c0, c1, 4, stride=2, padding=1),
            Conv2d(rng, c1, c2, 4, stride=1, padding=1),
            Conv2d(rng, c2, 1, 4, stride=1, padding=1),
        ]

    def __call__(self, images: Tensor) -> Tensor:
        return self.features(images)[-1]

    def features(self, images: Tensor) -> list[Tensor]:
        acts = []
        x = images
        for conv in self.convs[:-1]:
            x = T.leaky_relu(conv(x), 0.2)
            acts.append(x)
        acts.append(self.convs[-1](x))
        return acts

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.convs):
            out.update(conv.params(f"{prefix}.c{i}"))
        return out


def gan_loss(real_logits: Tensor, fake_logits: Tensor):
    """Non-saturating patch losses: (discriminator, generator)."""
    disc = T.softplus(-real_logits).mean() + T.softplus(fake_logits).mean()
    gen = T.softplus(-fake_logits).mean()
    return disc, gen


def perceptual_loss(disc: PatchDiscriminator, real: Tensor, fake: Tensor) -> Tensor:
    """L1 feature matching over discriminator activations (fixed D)."""
    real_acts = disc.features(Tensor(real.data))
    fake_acts = disc.features(fake)
    total = T.abs_(fake_acts[0] - Tensor(real_acts[0].data)).mean()
    for ra, fa in zip(real_acts[1:-1], fake_acts[1:-1]):
        total = total + T.abs_(fa - Tensor(ra.data)).mean()
    return total


def _to_batch(image: np.ndarray) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (1, 3, H, W) in [0, 1]."""
    arr = np.asarray(image, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)[None]


def images_to_batch(images: np.ndarray) -> np.ndarray:
    """uint8 (N, H, W, 3) -> float32 (N, 3, H, W) in [0, 1]."""
    return np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2) / 255.0


def holdout_split(n: int, fraction: float):
    n_hold = max(1, int(round(n * fraction))) if fraction > 0 else 0
    idx = np.arange(n)
    return idx[: n - n_hold], idx[n - n_hold :]


def reconstruction_mse(model: VQModel, batch: np.ndarray) -> float:
    """Per-pixel-per-channel MSE of decode(quantize(encode(x))) in [0, 1] units."""
    total, count = 0.0, 0
    for lo in range(0, batch.shape[0], 32):
        chunk = batch[lo : lo + 32]
        with T.no_grad():
            feats = model.encode_features(Tensor(chunk))
            idx = nearest_indices(feats.data, model.codebook.data)
            rows = model.codebook.data[idx].transpose(0, 3, 1, 2)
            recon = model.decode_features(Tensor(rows))
        total += float(((recon.data - chunk) ** 2).sum())
        count += chunk.size
    return total / count


def mse_to_psnr(mse: float) -> float:
    if mse <= 0:
        return 100.0
    return float(10.0 * np.log10(1.0 / mse))


def train_stage1(
    images: np.ndarray,
    config: VQConfig,
    out_dir,
    log_cb=None,
) -> Path:
    """Train the stage-1 auto-encoder; returns the checkpoint path.

    ``images`` is uint8 (N, H, W, 3). Writes ``stage1.atvc`` plus a
    ``stage1.log.jsonl`` training log and a config sidecar. Aborts on
    non-finite loss, keeping the last good checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "stage1.atvc"
    log_path = out_dir / "stage1.log.jsonl"

    rng = np.random.default_rng(config.seed)
    model = VQModel(config, rng)
    # start the sigmoid output at the data's per-channel mean; the flat
    # background dominates pixels and this skips hundreds of lift-off steps
    mean = images_to_batch(images[:256]).mean(axis=(0, 2, 3)).clip(1e-3, 1 - 1e-3)
    model.dec[-1].b.data[:] = np.log(mean / (1.0 - mean))
    gen_opt = Adam(model.generator_params(), lr=config.lr)
    disc_opt = (
        Adam(model.disc.params("disc"), lr=config.lr) if model.disc is not None else None
    )

    data = images_to_batch(images)
    train_idx, hold_idx = holdout_split(len(data), config.holdout_fraction)
    train = data[train_idx]
    hold = data[hold_idx] if len(hold_idx) else train[:1]

    step = 0
    saved_once = False
    log_f = open(log_path, "w", encoding="utf-8")

    def emit(record):
        log_f.write(json.dumps(record) + "\n")
        log_f.flush()
        if log_cb:
            log_cb(record)

    try:
        for epoch in range(config.epochs):
            lr = config.lr * config.lr_decay**epoch
            gen_opt.lr = lr
            if disc_opt is not None:
                disc_opt.lr = lr
            order = rng.permutation(len(train))
            used_codes = np.zeros(config.codebook_size, dtype=bool)
            last_feats = None
            last_loss = None
            batch_size = min(config.batch_size, len(train))
            for lo in range(0, len(order) - batch_size + 1, batch_size):
                batch = train[order[lo : lo + batch_size]]
                x = Tensor(batch)
                feats = model.encode_features(x)
                idx, rows, st = model.quantize(feats)
                used_codes[np.unique(idx)] = True
                last_feats = feats.data
                recon = model.decode_features(st)
                loss, parts = model.vq_loss(x, feats, rows, recon)
                if model.disc is not None and step >= config.disc_warmup_steps:
                    _, gen_adv = gan_loss(model.disc(Tensor(batch)), model.disc(recon))
                    perc = perceptual_loss(model.disc, x, recon)
                    loss = loss + config.gan_weight * gen_adv + config.perceptual_weight * perc
                    parts["l_gen_adv"] = float(gen_adv.data)
                    parts["l_perceptual"] = float(perc.data)
                if not np.isfinite(loss.data):
                    log_f.close()
                    raise TrainingDiverged(
                        f"non-finite stage-1 loss at step {step}",
                        ckpt_path if saved_once else None,
                    )
                gen_opt.zero_grad()
                loss.backward()
                gen_opt.step()

                if model.disc is not None and step >= config.disc_warmup_steps:
                    with T.no_grad():
                        feats_d = model.encode_features(Tensor(batch))
                        idx_d = nearest_indices(feats_d.data, model.codebook.data)
                        rows_d = model.codebook.data[idx_d].transpose(0, 3, 1, 2)
                        fake = model.decode_features(Tensor(rows_d))
                    disc_loss, _ = gan_loss(
                        model.disc(Tensor(batch)), model.disc(Tensor(fake.data))
                    )
                    disc_opt.zero_grad()
                    disc_loss.backward()
                    disc_opt.step()
                    parts["l_disc"] = float(disc_loss.data)

                step += 1
                last_loss = float(loss.data)
                if step % 50 == 0:
                    emit({"step": step, "epoch": epoch, "lr": lr,
                          "loss": last_loss, **parts})

            # re-seed codes unused for a full epoch from recent encoder outputs
            dead = np.flatnonzero(~used_codes)
            if dead.size and last_feats is not None:
                pool = last_feats.transpose(0, 2, 3, 1).reshape(-1, config.embed_dim)
                picks = rng.integers(0, len(pool), size=dead.size)
                model.codebook.data[dead] = pool[picks] + rng.normal(
                    0, 1e-3, size=(dead.size, config.embed_dim)
                ).astype(np.float32)

            hold_mse = reconstruction_mse(model, hold)
            record = {"step": step, "epoch": epoch, "lr": lr, "holdout_mse": hold_mse,
                      "holdout_psnr_db": mse_to_psnr(hold_mse)}
            if last_loss is not None:
                record["loss"] = last_loss
            emit(record)
            checkpoint.save(ckpt_path, model.params())
            saved_once = True
            if (
                config.target_holdout_psnr > 0
                and mse_to_psnr(hold_mse) > config.target_holdout_psnr
            ):
                break
    finally:
        if not log_f.closed:
            log_f.close()
    (out_dir / "stage1.config.json").write_text(
        json.dumps(config.__dict__, default=list, indent=1) + "\n"
    )
    return ckpt_path


def load_stage1(out_dir) -> VQModel:
    out_dir = Path(out_dir)
    cfg_path = out_dir / "stage1.config.json"
    if not cfg_path.exists():
        raise checkpoint.CheckpointError(
            f"missing stage-1 config {cfg_path}; run the stage-1 trainer first"
        )
    values = json.loads(cfg_path.read_text())
    values["channels"] = tuple(values["channels"])
    config = VQConfig(**values)
    model = VQModel(config)
    checkpoint.restore(out_dir / "stage1.atvc", model.params())
    return model
