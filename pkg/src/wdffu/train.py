"""AdamW optimization, the training loop, and evaluation/prediction drivers."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import _decode_gray, _nearest_index, _resize_plane_bilinear, \
    augment as augment_sample, resize_to, save_mask_png
from .errors import ConfigError, ContractError, DataError, NumericError
from .metrics import SegReport, combined_loss, confusion_metrics, hd95
from .network import build_model
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class AdamW:
    """Adam with decoupled weight decay over named parameter tensors.

    The decay term is applied directly to the parameters, outside the
    moment estimates: p <- p - lr*wd*p - lr*mhat/(sqrt(vhat)+eps).
    """

    def __init__(self, named_params, lr=1e-3, weight_decay=1e-2,
                 betas=(0.9, 0.999), eps=1e-8):
        self.named = list(named_params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self.named}
        self.v = {name: np.zeros_like(t.data) for name, t in self.named}

    def step(self, lr=None):
        """Consume the gradients left by backward() and clear them."""
        if lr is None:
            lr = self.lr
        for name, param in self.named:
            if param.grad is None:
                raise ContractError(
                    f"no gradient for parameter '{name}'; run backward() first")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, param in self.named:
            g = param.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            param.data = param.data - lr * self.weight_decay * param.data - update
            param.grad = None

    def state_dict(self):
        return self.step_count, {name: (self.m[name].copy(), self.v[name].copy())
                                 for name, _ in self.named}

    def load_state(self, state):
        step, moments = state
        if set(moments) != {name for name, _ in self.named}:
            raise ContractError("optimizer state does not match the parameter set")
        self.step_count = int(step)
        for name, param in self.named:
            m, v = moments[name]
            if m.shape != param.data.shape or v.shape != param.data.shape:
                raise ContractError(f"moment shape mismatch for '{name}'")
            self.m[name] = np.array(m, dtype=np.float64)
            self.v[name] = np.array(v, dtype=np.float64)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_dice: float
    val_hd95: float


@dataclass
class TrainResult:
    checkpoint_path: Path
    history_path: Path
    best_epoch: int
    best_val_dice: float
    history: list = field(default_factory=list)


def _prepare(samples, model_cfg, what):
    if not samples:
        raise ConfigError(f"{what} set is empty")
    size = tuple(model_cfg.input_size)
    out = []
    for s in samples:
        if s.image.shape[0] != model_cfg.in_channels:
            raise ConfigError(
                f"model expects {model_cfg.in_channels}-channel input, sample "
                f"'{s.id}' has {s.image.shape[0]}")
        out.append(s if s.image.shape[1:] == size else resize_to(s, size))
    return out


def _epoch_lr(cfg, epoch):
    if cfg.lr_schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


def _forward_binary(model, samples, batch_size):
    """Thresholded predictions (probability 0.5, i.e. logit 0) per sample."""
    preds = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            x = Tensor(np.stack([s.image for s in chunk]))
            logits = model(x)
            for i in range(len(chunk)):
                preds.append((logits.data[i, 0] >= 0.0).astype(np.float64))
    return preds


def _validate(model, samples, batch_size):
    preds = _forward_binary(model, samples, batch_size)
    dices, hds = [], []
    for s, pred in zip(samples, preds):
        _, m = confusion_metrics(pred, s.mask[0])
        dices.append(m["dice"])
        hds.append(hd95(pred, s.mask[0]))
    return float(np.mean(dices)), float(np.mean(hds))


def train(cfg, train_samples, val_samples, out_dir):
    """Run the full loop and keep the checkpoint with the best val Dice."""
    cfg.validate()
    train_set = _prepare(train_samples, cfg.model, "training")
    val_set = _prepare(val_samples, cfg.model, "validation")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "best.ckpt"
    history_path = out_dir / "history.csv"

    model = build_model(cfg.model)
    opt = AdamW(model.named_params(), lr=cfg.lr, weight_decay=cfg.weight_decay,
                betas=cfg.betas, eps=cfg.eps_adam)
    shuffle_rng = np.random.default_rng(cfg.seed)
    best_dice = -math.inf
    best_epoch = -1
    history = []

    for epoch in range(cfg.epochs):
        lr = _epoch_lr(cfg, epoch)
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            idxs = order[start:start + cfg.batch_size]
            batch = [train_set[i] for i in idxs]
            if cfg.augment:
                batch = [augment_sample(s, np.random.default_rng([cfg.seed, epoch, int(i)]))
                         for s, i in zip(batch, idxs)]
            x = Tensor(np.stack([s.image for s in batch]))
            y = Tensor(np.stack([s.mask for s in batch]))
            loss = combined_loss(T.sigmoid(model(x)), y)
            value = loss.item()
            if not math.isfinite(value):
                ids = ", ".join(s.id for s in batch)
                raise NumericError(
                    f"non-finite loss {value} at epoch {epoch}, batch {batch_index} "
                    f"(samples: {ids})")
            loss.backward()
            opt.step(lr)
            losses.append(value)

        val_dice, val_hd = _validate(model, val_set, cfg.batch_size)
        stats = EpochStats(epoch, float(np.mean(losses)), val_dice, val_hd)
        history.append(stats)
        log.info("epoch %d: train loss %.4f, val dice %.4f, val hd95 %.2f",
                 epoch, stats.train_loss, val_dice, val_hd)
        if val_dice > best_dice:
            best_dice = val_dice
            best_epoch = epoch
            save_checkpoint(ckpt_path, model, opt.state_dict())

    with open(history_path, "w", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", "train_loss", "val_dice", "val_hd95"))
        for s in history:
            writer.writerow((s.epoch, f"{s.train_loss:.6f}", f"{s.val_dice:.6f}",
                             f"{s.val_hd95:.6f}"))
    return TrainResult(checkpoint_path=ckpt_path, history_path=history_path,
                       best_epoch=best_epoch, best_val_dice=best_dice,
                       history=history)


def evaluate(model, samples, batch_size=4):
    """Per-image segmentation metrics against each sample's mask."""
    prepared = _prepare(samples, model.config, "evaluation")
    preds = _forward_binary(model, prepared, batch_size)
    report = SegReport()
    for s, pred in zip(prepared, preds):
        _, m = confusion_metrics(pred, s.mask[0])
        m["hd95"] = hd95(pred, s.mask[0])
        report.add(s.id, m, note=s.class_label)
    return report


def predict(model, image_path, out_path, prob_path=None):
    """Segment one grayscale image and write a {0, 255} mask PNG at its
    original extents; optionally also an 8-bit probability map."""
    plane = _decode_gray(image_path) / 255.0
    size = tuple(model.config.input_size)
    resized = _resize_plane_bilinear(plane, size)
    with no_grad():
        logits = model(Tensor(resized[None, None]))
    prob = 1.0 / (1.0 + np.exp(-logits.data[0, 0]))
    mask = (prob >= 0.5).astype(np.float64)
    rows = _nearest_index(mask.shape[0], plane.shape[0])
    cols = _nearest_index(mask.shape[1], plane.shape[1])
    try:
        save_mask_png(out_path, mask[np.ix_(rows, cols)])
        if prob_path is not None:
            back = _resize_plane_bilinear(prob, plane.shape)
            arr = np.clip(np.rint(back * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(prob_path)
    except OSError as exc:
        raise DataError(f"cannot write prediction output: {exc}") from exc
