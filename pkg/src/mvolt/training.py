"""SGD training, variation-resilient fine-tuning, adversarial training.

Plain constant-rate SGD, no momentum, cross-entropy loss. All three
entry points share one minibatch loop parameterized by two hooks: a view
builder (which weights the forward/backward pass sees) and an input
perturbation. Determinism: a single Generator seeded from the config
drives shuffling, view sampling, and attack restarts in a fixed order,
so identical configs give bit-identical weight trajectories.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attacks import pgd_batch
from .autodiff import batch_cross_entropy_backward
from .datasets import DatasetHandle, iterate_minibatches
from .errors import LabelError, TrainingDivergedError
from .graph import ModelGraph
from .variation import VariationConfig, apply_map_to_weights, sample_weight_deviations


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    batch_size: int = 64
    epochs: int = 3
    seed: int = 0
    adv_eps: float = 0.3
    adv_steps: int = 7
    adv_step_size: Optional[float] = None  # defaults to eps/4
    adv_ratio: float = 1.0  # fraction of each minibatch replaced by PGD examples

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise LabelError("lr, batch_size must be positive; epochs >= 0")
        if self.adv_eps < 0 or self.adv_steps < 1 or not (0 <= self.adv_ratio <= 1):
            raise LabelError("bad adversarial-training parameters")


def _check_labels(model: ModelGraph, data: DatasetHandle):
    if len(data) and int(data.labels.max()) >= model.num_classes:
        raise LabelError(
            f"label {int(data.labels.max())} outside model range {model.num_classes}"
        )


def _run_sgd(model, data, cfg, make_view=None, perturb=None, history=None):
    _check_labels(model, data)
    rng = np.random.default_rng(cfg.seed)
    ws = [np.array(w, dtype=np.float32) for w in model.weights()]
    bs = [np.array(b, dtype=np.float32) for b in model.biases()]
    for _ in range(cfg.epochs):
        epoch_loss = 0.0
        n_batches = 0
        for xb, yb in iterate_minibatches(data, cfg.batch_size, rng):
            if make_view is not None:
                view = make_view(ws, bs, rng)
            else:
                view = model.with_params(ws, bs)
            if perturb is not None:
                xb = perturb(view, xb, yb, rng)
            loss, _, _, gws, gbs = batch_cross_entropy_backward(view, xb, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss}")
            for k in range(len(ws)):
                ws[k] -= np.float32(cfg.lr) * gws[k]
                bs[k] -= np.float32(cfg.lr) * gbs[k]
            epoch_loss += loss
            n_batches += 1
        if history is not None and n_batches:
            history.append(epoch_loss / n_batches)
    return model.with_params(ws, bs)


def train_sgd(model: ModelGraph, data: DatasetHandle, cfg: TrainConfig, history=None):
    """Plain SGD on cross-entropy; deterministic for a fixed seed."""
    return _run_sgd(model, data, cfg, history=history)


def variation_resilient_finetune(
    model: ModelGraph,
    sampler: VariationConfig,
    data: DatasetHandle,
    cfg: TrainConfig,
    history=None,
):
    """Fine-tune under freshly sampled deviations each minibatch.

    The forward/backward pass runs on the deviated effective weights;
    updates land on the underlying clean weights. A zero sampler draws
    nothing and reproduces plain fine-tuning bit-exactly.
    """

    def make_view(ws, bs, rng):
        if sampler.is_zero:
            return model.with_params(ws, bs)
        limits = [float(np.abs(w).max()) for w in ws]
        vmap = sample_weight_deviations(ws, limits, sampler, rng)
        return model.with_params(apply_map_to_weights(ws, vmap), bs)

    return _run_sgd(model, data, cfg, make_view=make_view, history=history)


def _pgd_perturb(cfg):
    def perturb(view, xb, yb, rng):
        if cfg.adv_eps == 0:
            return xb
        k = int(round(cfg.adv_ratio * len(xb)))
        if k == 0:
            return xb
        adv = pgd_batch(
            view, xb[:k], yb[:k], cfg.adv_eps, cfg.adv_steps, cfg.adv_step_size, rng
        )
        if k == len(xb):
            return adv
        return np.concatenate([adv, xb[k:]])

    return perturb


def adversarial_train(model: ModelGraph, data: DatasetHandle, cfg: TrainConfig, history=None):
    """Train on PGD-perturbed minibatches crafted against the live weights."""
    return _run_sgd(model, data, cfg, perturb=_pgd_perturb(cfg), history=history)
