"""Input- and parameter-space attacks against deployed models.

Four attack primitives:

* pgd_attack — standard L_inf projected gradient ascent on the
  classification loss; the basic adversarial example.
* vsp_attack — variation-sensitive sparse perturbation: greedily selects
  the input elements where the deployed and variation-free input
  gradients disagree the most (their difference vanishes without
  deviations) and pushes only those elements until the deployed model
  flips or the pixel budget runs out.
* gsp_attack — the hardware-unaware ablation of vsp_attack: the same
  sparse greedy loop driven by the variation-free gradient alone.
* fault_injection_attack — greedy victim-parameter selection: per target
  layer, repeatedly conscript the weight with the largest gradient
  toward a chosen label and descend on the victims until the deployed
  prediction matches the target.

Largest gradient always means largest absolute value; ties break toward
the lowest flat index.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .autodiff import backward, forward, loss_logits_backward
from .errors import LabelError, ModelPairError, ShapeError
from .graph import ModelGraph
from .variation import DeployedModel, WeightWrite, apply_parameter_writes


@dataclass(frozen=True)
class AttackBudget:
    outer_cap: int = 50  # victim rounds (fault injection)
    inner_cap: int = 50  # gradient steps per convergence loop
    loss_tol: float = 1e-4  # |loss change| treated as converged
    eps: float = 0.3  # PGD ball radius
    steps: int = 40  # PGD iterations

    def __post_init__(self):
        if self.outer_cap < 1 or self.inner_cap < 1:
            raise ShapeError("iteration caps must be positive")


@dataclass
class PerturbationResult:
    base_example: np.ndarray  # the starting adversarial example
    delta: np.ndarray  # sparse refinement, zero outside pixel_set
    pixel_set: List[int]  # flat input indices, selection order
    budget: int  # max pixels allowed
    succeeded: bool
    iterations: int  # total inner gradient steps

    @property
    def adversarial_example(self):
        return np.clip(self.base_example + self.delta, 0.0, 1.0).astype(np.float32)


@dataclass
class VictimSet:
    target_layers: Tuple[int, ...]
    learning_rates: Tuple[float, ...]
    victims: Dict[int, List[int]] = field(default_factory=dict)  # layer -> flat idx
    original: Dict[int, List[float]] = field(default_factory=dict)
    perturbed: Dict[int, List[float]] = field(default_factory=dict)
    succeeded: bool = False
    iterations: int = 0

    @property
    def modified_params(self) -> int:
        return sum(len(v) for v in self.victims.values())

    def write_records(self):
        out = []
        for layer in self.target_layers:
            for idx, val in zip(self.victims.get(layer, []), self.perturbed.get(layer, [])):
                out.append(WeightWrite(layer, idx, val))
        return out

    def undo_records(self):
        out = []
        for layer in self.target_layers:
            for idx, val in zip(self.victims.get(layer, []), self.original.get(layer, [])):
                out.append(WeightWrite(layer, idx, val))
        return out


def _as_graph(view) -> ModelGraph:
    return view.graph if isinstance(view, DeployedModel) else view


def pgd_batch(view, xb, yb, eps, steps, step_size=None, rng=None, random_start=True):
    """L_inf PGD on a batch; ascends the cross-entropy of the true labels."""
    from .autodiff import batch_cross_entropy_backward

    graph = _as_graph(view)
    xb = np.asarray(xb, dtype=np.float32)
    if eps == 0:
        return xb.copy()
    if step_size is None:
        step_size = eps / 4.0
    if random_start:
        if rng is None:
            rng = np.random.default_rng(0)
        x_adv = xb + rng.uniform(-eps, eps, size=xb.shape).astype(np.float32)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    else:
        x_adv = xb.copy()
    for _ in range(steps):
        _, _, gx, _, _ = batch_cross_entropy_backward(graph, x_adv, yb)
        x_adv = x_adv + np.float32(step_size) * np.sign(gx)
        x_adv = np.clip(x_adv, xb - np.float32(eps), xb + np.float32(eps))
        x_adv = np.clip(x_adv, 0.0, 1.0).astype(np.float32)
    return x_adv


def pgd_attack(view, x, label, eps, steps=40, step_size=None, rng=None, random_start=True):
    """Single-example PGD; returns x_adv with ||x_adv - x||_inf <= eps in [0,1]."""
    graph = _as_graph(view)
    x = np.asarray(x, dtype=np.float32)
    if x.shape != graph.input_shape:
        raise ShapeError(f"input shape {x.shape} != {graph.input_shape}")
    return pgd_batch(graph, x[None], np.array([label]), eps, steps, step_size, rng, random_start)[0]


def gradient_difference(
    free: ModelGraph, deployed: DeployedModel, x, label, loss_kind: str = "cross_entropy"
):
    """Input-gradient gap between the deployed and variation-free views.

    Exactly zero when the deployed map is empty; otherwise every term
    scales with the parameter deviations, which is what makes it a
    variation-sensitivity signal.
    """
    dep_graph = _as_graph(deployed)
    if not free.same_topology(dep_graph):
        raise ModelPairError("free and deployed models differ in topology")
    g_dep = backward(dep_graph, x, loss_kind, label).input_grad
    g_free = backward(free, x, loss_kind, label).input_grad
    return g_dep - g_free


def _select_pixel(score, taken):
    flat = np.abs(score).ravel().copy()
    if taken:
        flat[np.array(taken)] = -1.0
    best = int(np.argmax(flat))  # argmax takes the lowest index on ties
    return best, float(flat[best])


def _sparse_refine(grad_fn, check_view, x_base, label, lr, n_pixels, budget):
    """Shared greedy loop of vsp_attack / gsp_attack.

    grad_fn(x) -> selection/step gradient; check_view is the model whose
    prediction defines success and whose loss drives convergence.
    """
    x_base = np.asarray(x_base, dtype=np.float32)
    if x_base.min() < 0 or x_base.max() > 1:
        raise ShapeError("inputs must lie in [0, 1]")
    if n_pixels < 1:
        raise ShapeError("n_pixels must be >= 1")
    delta = np.zeros_like(x_base)
    pixels: List[int] = []
    steps_used = 0

    def misled(xa):
        logits, _ = forward(_as_graph(check_view), xa)
        return int(np.argmax(logits)) != int(label)

    if misled(x_base):
        return PerturbationResult(x_base, delta, pixels, n_pixels, True, 0)

    shape = x_base.shape
    for _ in range(n_pixels):
        g = grad_fn(np.clip(x_base + delta, 0.0, 1.0))
        idx, magnitude = _select_pixel(g, pixels)
        if magnitude <= 0.0:
            break  # gradient signal vanished; no sensitive pixel to add
        pixels.append(idx)
        sel = np.array(pixels)
        prev_loss = None
        for _ in range(budget.inner_cap):
            step = np.float32(lr) * np.sign(g.ravel()[sel])
            delta.ravel()[sel] += step
            np.clip(x_base + delta, 0.0, 1.0, out=delta)
            delta -= x_base  # keep x_base + delta inside [0,1]
            steps_used += 1
            xa = x_base + delta
            loss, logits, bundle = loss_logits_backward(
                _as_graph(check_view), xa, "cross_entropy", label
            )
            if int(np.argmax(logits)) != int(label):
                return PerturbationResult(
                    x_base, delta.reshape(shape), pixels, n_pixels, True, steps_used
                )
            g = grad_fn(xa)
            if prev_loss is not None and abs(loss - prev_loss) < budget.loss_tol:
                break
            prev_loss = loss
    return PerturbationResult(x_base, delta.reshape(shape), pixels, n_pixels, False, steps_used)


def vsp_attack(
    x_adv,
    deployed: DeployedModel,
    free: ModelGraph,
    label: int,
    lr: float = 0.05,
    n_pixels: int = 10,
    budget: AttackBudget = AttackBudget(),
) -> PerturbationResult:
    """Variation-sensitive sparse refinement of an adversarial example.

    Success means the deployed model misclassifies; the selection and
    step direction come from the deployed-vs-free gradient difference,
    so an empty variation map leaves the input unchanged.
    """
    if not free.same_topology(_as_graph(deployed)):
        raise ModelPairError("free and deployed models differ in topology")

    def grad_fn(xa):
        return gradient_difference(free, deployed, xa, label)

    return _sparse_refine(grad_fn, deployed, x_adv, label, lr, n_pixels, budget)


def gsp_attack(
    x_adv,
    free: ModelGraph,
    label: int,
    lr: float = 0.05,
    n_pixels: int = 10,
    budget: AttackBudget = AttackBudget(),
) -> PerturbationResult:
    """Hardware-unaware ablation: the same loop driven by the clean gradient.

    Never reads a deployed view; success is judged on the variation-free
    model itself.
    """

    def grad_fn(xa):
        return backward(free, xa, "cross_entropy", label).input_grad

    return _sparse_refine(grad_fn, free, x_adv, label, lr, n_pixels, budget)


def fault_injection_attack(
    x_s,
    y_t: int,
    deployed: DeployedModel,
    target_layers: Sequence[int],
    lr: Sequence[float] = None,
    budget: AttackBudget = AttackBudget(),
) -> VictimSet:
    """Greedy victim-parameter selection toward a target label.

    Per round, each target layer contributes the not-yet-victim weight
    with the largest |dL/dw| (L = cross-entropy toward y_t on the
    deployed view); all victims then take shared descent steps of their
    layer's learning rate until the loss converges. Terminates when the
    deployed prediction on x_s equals y_t, or the round cap is hit
    (succeeded=False). Victim values are clipped to the layer's
    representable range.
    """
    graph = deployed.graph
    n_layers = graph.num_param_layers
    target_layers = tuple(int(t) % n_layers for t in target_layers)
    if len(set(target_layers)) != len(target_layers):
        raise LabelError("duplicate target layers")
    if not (0 <= int(y_t) < graph.num_classes):
        raise LabelError(f"target label {y_t} out of range")
    if lr is None:
        lr = [0.1] * len(target_layers)
    lrs = tuple(float(v) for v in lr)
    if len(lrs) != len(target_layers):
        raise LabelError("need one learning rate per target layer")

    result = VictimSet(target_layers, lrs)
    weights = [np.array(w, dtype=np.float32) for w in graph.weights()]
    limits = [deployed.base.weight_limit(k) for k in range(n_layers)]
    work = graph.with_params(weights)

    logits, _ = forward(work, x_s)
    if int(np.argmax(logits)) == int(y_t):
        result.succeeded = True
        return result

    taken = {layer: set() for layer in target_layers}
    for _ in range(budget.outer_cap):
        # victim localization: one new cell per target layer
        _, _, bundle = loss_logits_backward(work, x_s, "cross_entropy", y_t)
        for layer in target_layers:
            score = np.abs(bundle.weight_grads[layer]).ravel().copy()
            if taken[layer]:
                score[np.array(sorted(taken[layer]))] = -1.0
            idx = int(np.argmax(score))
            taken[layer].add(idx)
            result.victims.setdefault(layer, []).append(idx)
            result.original.setdefault(layer, []).append(
                float(graph.weights()[layer].ravel()[idx])
            )

        # perturbation magnitude: shared descent until the loss settles
        prev_loss = None
        for _ in range(budget.inner_cap):
            loss, logits, bundle = loss_logits_backward(work, x_s, "cross_entropy", y_t)
            result.iterations += 1
            if int(np.argmax(logits)) == int(y_t):
                break
            for layer, rate in zip(target_layers, lrs):
                sel = np.array(result.victims[layer])
                flat = weights[layer].ravel()
                stepped = flat[sel] - np.float32(rate) * bundle.weight_grads[layer].ravel()[sel]
                flat[sel] = np.clip(stepped, -limits[layer], limits[layer])
            work = graph.with_params(weights)
            if prev_loss is not None and abs(loss - prev_loss) < budget.loss_tol:
                break
            prev_loss = loss

        logits, _ = forward(work, x_s)
        if int(np.argmax(logits)) == int(y_t):
            result.succeeded = True
            break

    for layer in target_layers:
        sel = result.victims.get(layer, [])
        flat = weights[layer].ravel()
        result.perturbed[layer] = [float(flat[i]) for i in sel]
    return result
