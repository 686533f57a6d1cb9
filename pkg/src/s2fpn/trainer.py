"""Training loop: deterministic batch assembly, logging, checkpoints."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, SampleRecord, augment, rng_for_sample
from .config import RunConfig
from .dataset import SegDataset
from .errors import DataError
from .losses import OhemConfig, total_loss
from .metrics import ConfusionMatrix
from .model import S2FPN
from .optim import Adam, poly_lr
from .serialize import read_checkpoint, write_checkpoint
from .tensor import Tensor, no_grad, tape


def evaluate_model(model: S2FPN, dataset: SegDataset, split: str) -> ConfusionMatrix:
    """Eval-mode forward over a split, accumulating a confusion matrix."""
    matrix = ConfusionMatrix(model.num_classes)
    was_training = model.training
    model.eval()
    mean = model.input_mean.data
    std = model.input_std.data
    try:
        with no_grad():
            for name in dataset.split(split):
                image, label = dataset.load(name)
                x = Tensor(((image[None] - mean) / std).astype(np.float32))
                logits = model(x)
                pred = logits.data.argmax(axis=1)[0]
                matrix.add(pred, label)
    finally:
        model.train(was_training)
    return matrix


class Trainer:
    def __init__(self, cfg: RunConfig, dataset: SegDataset, out_dir=None):
        self.cfg = cfg
        self.dataset = dataset
        self.out_dir = Path(out_dir if out_dir is not None else cfg.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.out_dir / "train.log"
        self.model = S2FPN(
            backbone=cfg.backbone,
            pyramid_width=cfg.pyramid_width,
            num_classes=cfg.num_classes,
            dropout_p=cfg.dropout,
            seed=cfg.seed,
        )
        mean, std = dataset.compute_normalization("train")
        self.model.input_mean.data[...] = mean.reshape(1, 3, 1, 1)
        self.model.input_std.data[...] = np.maximum(std, 1e-3).reshape(1, 3, 1, 1)
        self.optimizer = Adam(
            self.model.parameters(),
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.adam_eps,
            weight_decay=cfg.weight_decay,
        )
        self.ohem = OhemConfig(cfg.ohem_threshold, cfg.min_kept(), cfg.ignore_index)
        self.augment_cfg = AugmentConfig(
            scales=cfg.scales,
            flip_prob=cfg.flip_prob,
            crop=(cfg.crop_h, cfg.crop_w),
            ignore_index=cfg.ignore_index,
        )
        self.train_names = dataset.split("train")
        if not self.train_names:
            raise DataError("training split is empty")
        self.iters_per_epoch = max(1, math.ceil(len(self.train_names) / cfg.batch_size))
        self.max_iter = cfg.epochs * self.iters_per_epoch
        self.start_iter = 0
        self.best_miou = -1.0
        self.loss_history: list[float] = []

    # -- deterministic batch assembly ------------------------------------

    def _epoch_order(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 1000003, epoch]))
        return rng.permutation(len(self.train_names))

    def batch_for(self, iteration: int) -> tuple[Tensor, np.ndarray]:
        cfg = self.cfg
        epoch = iteration // self.iters_per_epoch
        order = self._epoch_order(epoch)
        offset = (iteration % self.iters_per_epoch) * cfg.batch_size
        images, labels = [], []
        for j in range(cfg.batch_size):
            name = self.train_names[order[(offset + j) % len(self.train_names)]]
            image, label = self.dataset.load(name)
            record = augment(
                SampleRecord(image, label),
                rng_for_sample(cfg.seed, iteration * cfg.batch_size + j),
                self.augment_cfg,
            )
            images.append(record.image)
            labels.append(record.label)
        stack = np.stack(images)
        stack = (stack - self.model.input_mean.data) / self.model.input_std.data
        return Tensor(stack.astype(np.float32)), np.stack(labels)

    # -- checkpointing ----------------------------------------------------

    def save_checkpoint(self, path, iteration: int) -> None:
        entries = {name: arr for name, arr, _ in self.model.state_entries()}
        for name, arr in self.optimizer.state_entries():
            entries[name] = arr
        entries["trainer.iter"] = np.asarray([float(iteration)], dtype=np.float64)
        entries["trainer.best_miou"] = np.asarray([self.best_miou], dtype=np.float64)
        write_checkpoint(path, entries)

    def load_checkpoint(self, path) -> int:
        entries = read_checkpoint(path)
        self.model.load_state_dict(entries)
        self.optimizer.load_state(entries)
        it = entries.get("trainer.iter")
        best = entries.get("trainer.best_miou")
        if best is not None:
            self.best_miou = float(np.asarray(best).reshape(-1)[0])
        self.start_iter = int(np.asarray(it).reshape(-1)[0]) if it is not None else 0
        return self.start_iter

    # -- the loop ----------------------------------------------------------

    def _reseed_dropout(self, iteration: int) -> None:
        # masks become a pure function of (seed, iteration), so a resumed
        # run draws exactly what the uninterrupted run would have drawn
        from .nn import Dropout

        drops = [m for m in self.model.modules() if isinstance(m, Dropout)]
        for k, module in enumerate(drops):
            module.rng = np.random.default_rng(
                np.random.SeedSequence([self.cfg.seed, 7919, iteration, k])
            )

    def train_step(self, iteration: int) -> tuple[float, list[float]]:
        cfg = self.cfg
        lr = poly_lr(iteration, self.max_iter, cfg.base_lr, cfg.power)
        x, labels = self.batch_for(iteration)
        self._reseed_dropout(iteration)
        self.model.train()
        recorder = tape()
        recorder.reset()
        main, aux = self.model(x)
        loss, terms = total_loss(
            main, aux, labels, self.ohem, cfg.aux_weight, cfg.aux_ohem, return_terms=True
        )
        self.optimizer.zero_grad()
        recorder.backward(loss)
        self.optimizer.step(lr)
        recorder.reset()
        return lr, [loss.item()] + [t.item() for t in terms[1:]]

    def run(self, resume=None, log_every: int = 1) -> dict:
        if resume is not None:
            self.load_checkpoint(resume)
        has_val = "val" in self.dataset.splits
        with open(self.log_path, "a") as log_file:
            for iteration in range(self.start_iter, self.max_iter):
                lr, losses = self.train_step(iteration)
                self.loss_history.append(losses[0])
                if iteration % log_every == 0 or iteration == self.max_iter - 1:
                    aux_part = ""
                    if len(losses) > 1:
                        aux_part = " aux " + " ".join(f"{v:.6f}" for v in losses[1:])
                    log_file.write(
                        f"iter {iteration} lr {lr:.8f} loss {losses[0]:.6f}{aux_part}\n"
                    )
                    log_file.flush()
                epoch_done = (iteration + 1) % self.iters_per_epoch == 0
                epoch = (iteration + 1) // self.iters_per_epoch
                if epoch_done and epoch % self.cfg.checkpoint_every == 0:
                    self.save_checkpoint(self.out_dir / "last.ckpt", iteration + 1)
                    if has_val:
                        matrix = evaluate_model(self.model, self.dataset, "val")
                        miou = matrix.mean_iou()
                        log_file.write(f"epoch {epoch} val_miou {miou:.6f}\n")
                        log_file.flush()
                        if miou > self.best_miou:
                            self.best_miou = miou
                            self.save_checkpoint(self.out_dir / "best.ckpt", iteration + 1)
            self.save_checkpoint(self.out_dir / "final.ckpt", self.max_iter)
        return {
            "iterations": self.max_iter - self.start_iter,
            "final_loss": self.loss_history[-1] if self.loss_history else None,
            "best_miou": self.best_miou,
        }
