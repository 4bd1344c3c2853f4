"""Permutation invariant training for the separation and counting models."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .audio import StftConfig, read_wav, stft, magnitude_tensor
from .checkpoint import save_model
from .counting import CountModel
from .sepmodel import SepModel

logger = logging.getLogger(__name__)

_PERMS = ((0, 1), (1, 0))


class TrainingError(ValueError):
    pass


@dataclass
class PitResult:
    loss: float
    permutation: tuple[int, int]
    grad: np.ndarray  # d loss / d masks, shape (2, T, F)


def pit_mse_loss(masks: np.ndarray, mix_mag: np.ndarray, ref_mags: np.ndarray) -> PitResult:
    """Amplitude-spectrum MSE under the best output/reference assignment.

    loss(perm) = mean over (i, t, f) of (masks[i] * mix_mag - ref_mags[perm[i]])^2
    """
    masks = np.asarray(masks, dtype=np.float64)
    mix_mag = np.asarray(mix_mag, dtype=np.float64)
    ref_mags = np.asarray(ref_mags, dtype=np.float64)
    if masks.shape[0] != 2 or ref_mags.shape[0] != 2:
        raise TrainingError("expected exactly two masks and two references")
    if masks.shape[1:] != mix_mag.shape or ref_mags.shape[1:] != mix_mag.shape:
        raise TrainingError(
            f"shape mismatch: masks {masks.shape}, mix {mix_mag.shape}, refs {ref_mags.shape}")
    est = masks * mix_mag[None]
    losses = []
    for perm in _PERMS:
        diff = est - ref_mags[list(perm)]
        losses.append(np.mean(diff ** 2))
    best = int(np.argmin(losses))
    perm = _PERMS[best]
    diff = est - ref_mags[list(perm)]
    grad = 2.0 * diff * mix_mag[None] / diff.size
    return PitResult(float(losses[best]), perm, grad)


def vad_pit_loss(vad: np.ndarray, activity: np.ndarray):
    """PIT MSE between two VAD tracks (T, 2) and activity labels (2, T).

    Returns (loss, permutation, grad w.r.t. vad).
    """
    vad = np.asarray(vad, dtype=np.float64)
    labels = np.asarray(activity, dtype=np.float64).T  # (T, 2)
    if vad.shape != labels.shape:
        raise TrainingError(f"shape mismatch: vad {vad.shape}, labels {labels.shape}")
    losses = [np.mean((vad - labels[:, list(perm)]) ** 2) for perm in _PERMS]
    best = int(np.argmin(losses))
    perm = _PERMS[best]
    diff = vad - labels[:, list(perm)]
    return float(losses[best]), perm, 2.0 * diff / diff.size


class Adam:
    """Bias-corrected adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {k!r}")
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    ref_channel: int = 0
    crop_frames: int = 250       # 4 s at the 16 ms hop
    patience: int | None = None  # early stop on validation loss, if set
    checkpoint_every: int = 1


@dataclass
class TrainSample:
    mix_mag: np.ndarray    # (C, T, F)
    ref_mags: np.ndarray   # (2, T, F) reverberant images at the reference channel
    activity: np.ndarray   # (2, T) frame activity per speaker
    counts: np.ndarray     # (T,) active-speaker count
    sample_id: str = ""


def load_manifest_samples(manifest_path, stft_cfg: StftConfig | None = None,
                          ref_channel: int = 0) -> list[TrainSample]:
    """Read a simulation manifest (JSON lines) into in-memory samples."""
    if stft_cfg is None:
        stft_cfg = StftConfig()
    base = os.path.dirname(os.path.abspath(manifest_path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    samples = []
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            try:
                mix = [np.abs(stft(read_wav(resolve(p)), stft_cfg))
                       for p in rec["mixture"]]
                refs = [np.abs(stft(read_wav(resolve(p)), stft_cfg))
                        for p in rec["refs"]]
                labels = np.load(resolve(rec["labels"]))
            except (OSError, ValueError) as exc:
                logger.warning("skipping unreadable sample %s: %s", rec.get("id"), exc)
                continue
            t = mix[0].shape[0]
            ref_mags = np.zeros((2, t, stft_cfg.num_bins))
            for i, r in enumerate(refs[:2]):
                ref_mags[i, :r.shape[0]] = r[:t]
            activity = np.zeros((2, t))
            act = labels["activity"]
            activity[:act.shape[0], :min(t, act.shape[1])] = act[:2, :t]
            counts = np.zeros(t)
            counts[:min(t, len(labels["counts"]))] = labels["counts"][:t]
            samples.append(TrainSample(np.stack(mix), ref_mags, activity, counts,
                                       sample_id=str(rec.get("id", len(samples)))))
    if not samples:
        raise TrainingError(f"{manifest_path}: no readable samples")
    return samples


def _crop(sample: TrainSample, crop_frames: int, rng) -> TrainSample:
    t = sample.mix_mag.shape[1]
    if t <= crop_frames:
        return sample
    start = int(rng.integers(0, t - crop_frames + 1))
    sl = slice(start, start + crop_frames)
    return TrainSample(sample.mix_mag[:, sl], sample.ref_mags[:, sl],
                       sample.activity[:, sl], sample.counts[sl], sample.sample_id)


def _log_metrics(out_dir, record):
    if out_dir is None:
        return
    with open(os.path.join(out_dir, "metrics.jsonl"), "a") as f:
        f.write(json.dumps(record) + "\n")


def train_separation(model: SepModel, train_samples, cfg: TrainConfig,
                     val_samples=None, out_dir=None):
    """Trains in place; returns the per-epoch history list."""
    if not train_samples:
        raise TrainingError("empty training set")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    opt = Adam(model.named_params(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = []
    best = (np.inf, -1)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        order = rng.permutation(len(train_samples))
        total = 0.0
        for idx in order:
            s = _crop(train_samples[idx], cfg.crop_frames, rng)
            ref_mag = s.mix_mag[cfg.ref_channel]
            masks = model.forward(s.mix_mag)
            pit = pit_mse_loss(masks, ref_mag, s.ref_mags)
            model.zero_grad()
            model.backward(pit.grad)
            opt.step()
            total += pit.loss
        train_loss = total / len(train_samples)
        val_loss = None
        if val_samples:
            val_loss = float(np.mean([
                pit_mse_loss(model.forward(s.mix_mag), s.mix_mag[cfg.ref_channel],
                             s.ref_mags).loss
                for s in val_samples]))
        record = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                  "wall_s": round(time.time() - t0, 3)}
        history.append(record)
        _log_metrics(out_dir, record)
        logger.info("sep epoch %d: train %.6g val %s", epoch, train_loss, val_loss)
        if out_dir and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            save_model(os.path.join(out_dir, f"epoch_{epoch:03d}.ckpt"), model,
                       "separation", {"epoch": epoch})
        monitor = val_loss if val_loss is not None else train_loss
        if monitor < best[0]:
            best = (monitor, epoch)
            if out_dir:
                save_model(os.path.join(out_dir, "best.ckpt"), model,
                           "separation", {"epoch": epoch})
        elif cfg.patience is not None and epoch - best[1] >= cfg.patience:
            logger.info("early stop at epoch %d (best epoch %d)", epoch, best[1])
            break
    if out_dir:
        save_model(os.path.join(out_dir, "final.ckpt"), model, "separation",
                   {"epoch": history[-1]["epoch"], "best_epoch": best[1]})
    return history


def count_loss(model: CountModel, count_out, aux_masks, sample: TrainSample,
               chan_mag: np.ndarray):
    """Equal-weighted multi-task loss; counting and separation permutations
    are chosen independently for the s1 head.

    Returns (total_loss, d_count, d_masks, parts).
    """
    if np.any(sample.counts > 2):
        raise TrainingError("count labels above 2 are unsupported")
    sep = pit_mse_loss(aux_masks, chan_mag, sample.ref_mags)
    if model.cfg.head == "s1":
        c_loss, _, d_count = vad_pit_loss(count_out, sample.activity)
    else:
        diff = count_out - sample.counts
        c_loss = float(np.mean(diff ** 2))
        d_count = 2.0 * diff / diff.size
    total = 0.5 * c_loss + 0.5 * sep.loss
    return total, 0.5 * d_count, 0.5 * sep.grad, {"count": c_loss, "sep": sep.loss}


def train_counting(model: CountModel, train_samples, cfg: TrainConfig,
                   val_samples=None, out_dir=None):
    """Multi-task training of a counting model on randomly chosen channels."""
    if not train_samples:
        raise TrainingError("empty training set")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    opt = Adam(model.named_params(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = []
    best = (np.inf, -1)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        order = rng.permutation(len(train_samples))
        total = 0.0
        for idx in order:
            s = _crop(train_samples[idx], cfg.crop_frames, rng)
            chan = int(rng.integers(0, s.mix_mag.shape[0]))
            mag = s.mix_mag[chan]
            count_out, aux_masks = model.forward(mag)
            loss, d_count, d_masks, _ = count_loss(model, count_out, aux_masks, s, mag)
            model.zero_grad()
            model.backward(d_count, d_masks)
            opt.step()
            total += loss
        train_loss = total / len(train_samples)
        val_loss = None
        if val_samples:
            vals = []
            for s in val_samples:
                mag = s.mix_mag[0]
                count_out, aux_masks = model.forward(mag)
                vals.append(count_loss(model, count_out, aux_masks, s, mag)[0])
            val_loss = float(np.mean(vals))
        record = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                  "wall_s": round(time.time() - t0, 3)}
        history.append(record)
        _log_metrics(out_dir, record)
        logger.info("count epoch %d: train %.6g val %s", epoch, train_loss, val_loss)
        if out_dir and (epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs):
            save_model(os.path.join(out_dir, f"epoch_{epoch:03d}.ckpt"), model,
                       "counting", {"epoch": epoch})
        monitor = val_loss if val_loss is not None else train_loss
        if monitor < best[0]:
            best = (monitor, epoch)
            if out_dir:
                save_model(os.path.join(out_dir, "best.ckpt"), model,
                           "counting", {"epoch": epoch})
        elif cfg.patience is not None and epoch - best[1] >= cfg.patience:
            logger.info("early stop at epoch %d (best epoch %d)", epoch, best[1])
            break
    if out_dir:
        save_model(os.path.join(out_dir, "final.ckpt"), model, "counting",
                   {"epoch": history[-1]["epoch"], "best_epoch": best[1]})
    return history
