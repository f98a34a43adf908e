"""Network assembly, training loop, and the dual inference paths.

Architectures are named by compact ids:

* ``mlp-784-200-200-10``: dense stack; every hidden layer is followed by
  batch norm and a quantized activation, the last layer emits real scores.
* ``conv-16c5-mp2-32c5-mp2-128fc``: ``<n>c<k>`` convolution (valid, stride
  1), ``mp<k>`` max pooling, ``<n>fc`` dense; each weighted stage gets batch
  norm plus quantized activation, then a final dense classifier.

Training follows forward -> squared hinge loss -> backward -> one stochastic
grid transition per weight tensor and one Adam step for the batch-norm
parameters, with the learning rate decaying by a fixed factor per epoch.

``evaluate`` runs the float path.  ``packed_evaluate`` reruns inference with
bit-packed gated-XNOR dot products for every dense layer whose operands are
exactly ternary, and must agree with the float path bit for bit.
"""

from __future__ import annotations

import re
import time
from math import prod

import numpy as np

from .config import MetricsRecord
from .data import Dataset, batches
from .dst import AdamOptimizer, DstOptimizer, lr_schedule
from .kernel import OpReport, Architecture, pack_ternary_matrix, packed_dense_forward
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    MaxPool2d,
    QuantAct,
    svm_hinge_loss,
)
from .spaces import DiscreteSpace, PulseShape, SurrogateSpec, make_space

__all__ = [
    "Network",
    "build_network",
    "train_step",
    "evaluate",
    "activation_zero_fractions",
    "packed_evaluate",
    "fit",
]

EVAL_BATCH = 1000
SHUFFLE_DOMAIN = 1 << 20


class Network:
    """A fixed sequence of layers ending in real-valued class scores."""

    def __init__(self, layers: list[Layer], classes: int, input_shape: tuple[int, ...]):
        self.layers = layers
        self.classes = classes
        self.input_shape = tuple(input_shape)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dscores: np.ndarray) -> np.ndarray:
        grad = dscores
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def grid_params(self):
        return [p for layer in self.layers for p in layer.grid_params()]

    def real_params(self):
        return [p for layer in self.layers for p in layer.real_params()]

    def quant_layers(self) -> list[QuantAct]:
        return [layer for layer in self.layers if isinstance(layer, QuantAct)]

    def weights_on_grid(self) -> bool:
        return all(np.isin(p.value, p.space.states()).all() for p in self.grid_params())


def _quant_block(space: DiscreteSpace, spec: SurrogateSpec, features: int):
    return [BatchNorm(features), QuantAct(space, spec)]


def build_network(
    architecture: str,
    *,
    n1: int = 1,
    n2: int = 1,
    h: float = 1.0,
    r: float = 0.5,
    surrogate: str = "rect",
    a: float = 0.5,
    seed: int = 1,
    input_shape: tuple[int, ...] = (1, 28, 28),
    classes: int = 10,
) -> Network:
    """Construct a network from its architecture id; weights start on the grid."""
    w_space = make_space(n1, h)
    a_space = make_space(n2, h)
    spec = SurrogateSpec(shape=PulseShape(surrogate), a=a, r=r)

    if architecture.startswith("mlp-"):
        dims = [int(tok) for tok in architecture[4:].split("-")]
        if len(dims) < 2:
            raise ValueError(f"mlp id needs at least in and out dims: {architecture!r}")
        if dims[0] != prod(input_shape):
            raise ValueError(
                f"architecture expects {dims[0]} inputs, data provides {prod(input_shape)}")
        layers: list[Layer] = [Flatten()]
        widx = 0
        for fan_in, fan_out in zip(dims[:-2], dims[1:-1]):
            layers.append(Dense(fan_in, fan_out, w_space, seed, widx))
            layers += _quant_block(a_space, spec, fan_out)
            widx += 1
        layers.append(Dense(dims[-2], dims[-1], w_space, seed, widx))
        return Network(layers, classes=dims[-1], input_shape=input_shape)

    if architecture.startswith("conv-"):
        chans, height, width = input_shape
        layers = []
        widx = 0
        flat = None
        for token in architecture[5:].split("-"):
            if m := re.fullmatch(r"(\d+)c(\d+)", token):
                out_c, k = int(m.group(1)), int(m.group(2))
                layers.append(Conv2d(chans, out_c, k, w_space, seed, widx))
                widx += 1
                chans, height, width = out_c, height - k + 1, width - k + 1
                layers += _quant_block(a_space, spec, out_c)
            elif m := re.fullmatch(r"mp(\d+)", token):
                k = int(m.group(1))
                layers.append(MaxPool2d(k))
                height, width = height // k, width // k
            elif m := re.fullmatch(r"(\d+)fc", token):
                out_f = int(m.group(1))
                if flat is None:
                    layers.append(Flatten())
                    flat = chans * height * width
                layers.append(Dense(flat, out_f, w_space, seed, widx))
                widx += 1
                layers += _quant_block(a_space, spec, out_f)
                flat = out_f
            else:
                raise ValueError(f"unknown architecture token {token!r}")
        if flat is None:
            raise ValueError("conv architecture needs at least one fc stage")
        layers.append(Dense(flat, classes, w_space, seed, widx))
        return Network(layers, classes=classes, input_shape=input_shape)

    raise ValueError(f"unknown architecture id {architecture!r}")


def train_step(net: Network, images: np.ndarray, labels: np.ndarray,
               grid_opt: DstOptimizer, real_opt: AdamOptimizer) -> float:
    """One mini-batch update; returns the batch loss."""
    scores = net.forward(images, training=True)
    lg = svm_hinge_loss(scores, labels)
    net.backward(lg.dscores)
    grid_opt.step()
    real_opt.step()
    return lg.loss


def evaluate(net: Network, dataset: Dataset,
             batch_size: int = EVAL_BATCH) -> tuple[float, float]:
    """Deterministic float-path accuracy and mean zero-activation fraction."""
    n = len(dataset)
    if n == 0:
        return 0.0, 0.0
    quant = net.quant_layers()
    zero_weighted = np.zeros(len(quant))
    correct = 0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        scores = net.forward(dataset.images[lo:hi], training=False)
        correct += int((np.argmax(scores, axis=1) == dataset.labels[lo:hi]).sum())
        for i, qa in enumerate(quant):
            zero_weighted[i] += qa.last_sparsity * (hi - lo)
    sparsity = float(zero_weighted.mean() / n) if quant else 0.0
    return correct / n, sparsity


def activation_zero_fractions(net: Network, dataset: Dataset,
                              batch_size: int = EVAL_BATCH) -> list[float]:
    """Per-quantized-layer zero fraction over a dataset (inference mode)."""
    quant = net.quant_layers()
    zero = np.zeros(len(quant))
    n = len(dataset)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        net.forward(dataset.images[lo:hi], training=False)
        for i, qa in enumerate(quant):
            zero[i] += qa.last_sparsity * (hi - lo)
    return [float(z / n) for z in zero] if n else [0.0] * len(quant)


def _packed_eligible(net: Network) -> bool:
    ternary_unit = lambda s: s.n == 1 and s.h == 1.0
    return (
        all(ternary_unit(p.space) for p in net.grid_params())
        and all(ternary_unit(qa.space) for qa in net.quant_layers())
        and all(isinstance(l, (Flatten, Dense, BatchNorm, QuantAct)) for l in net.layers)
    )


def packed_evaluate(net: Network, dataset: Dataset,
                    batch_size: int = EVAL_BATCH) -> tuple[float, OpReport]:
    """Accuracy via gated-XNOR dot products wherever both operands are ternary.

    Dense layers fed by a quantized activation run on bit planes; the first
    layer sees continuous pixels and stays on the float path.  Scores equal
    the float path exactly (integer-valued sums are exact in both).
    """
    if not _packed_eligible(net):
        raise ValueError("packed inference needs ternary unit-range weights and activations")
    packed_w = {
        id(layer): pack_ternary_matrix(layer.weight.value)
        for layer in net.layers if isinstance(layer, Dense)
    }
    n = len(dataset)
    correct = 0
    total_xnor = 0
    total_bitcount = 0
    total_lanes = 0
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        x = dataset.images[lo:hi]
        ternary_in = False
        for layer in net.layers:
            if isinstance(layer, Dense) and ternary_in:
                scores, rep = packed_dense_forward(pack_ternary_matrix(x), packed_w[id(layer)])
                x = scores.astype(float)
                total_xnor += rep.xnor_ops
                total_bitcount += rep.bitcount_ops
                total_lanes += (hi - lo) * layer.out_features * layer.in_features
            else:
                x = layer.forward(x, training=False)
            ternary_in = isinstance(layer, QuantAct)
        correct += int((np.argmax(x, axis=1) == dataset.labels[lo:hi]).sum())
    report = OpReport(
        architecture=Architecture.GXNOR,
        xnor_ops=total_xnor,
        bitcount_ops=total_bitcount,
        resting_fraction=1.0 - total_xnor / total_lanes if total_lanes else 0.0,
    )
    return correct / n if n else 0.0, report


def _shuffle_seed(seed: int, epoch: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(SHUFFLE_DOMAIN, epoch))
    return np.random.Generator(np.random.Philox(seq))


def fit(
    net: Network,
    train: Dataset,
    test: Dataset,
    *,
    epochs: int,
    batch_size: int,
    lr_start: float,
    lr_fin: float,
    m: float = 3.0,
    seed: int = 1,
    on_epoch=None,
) -> list[MetricsRecord]:
    """Full training loop; returns one record per epoch."""
    grid_opt = DstOptimizer(net.grid_params(), m=m, lr=lr_start)
    real_opt = AdamOptimizer(net.real_params(), lr=lr_start)
    alpha = lr_schedule(lr_start, lr_fin, epochs)
    records: list[MetricsRecord] = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for images, labels in batches(train, batch_size, _shuffle_seed(seed, epoch)):
            losses.append(train_step(net, images, labels, grid_opt, real_opt))
        accuracy, sparsity = evaluate(net, test)
        grid_opt.lr *= alpha
        real_opt.lr *= alpha
        record = MetricsRecord(
            epoch=epoch,
            train_loss=float(np.mean(losses)) if losses else 0.0,
            test_accuracy=accuracy,
            sparsity=sparsity,
            wall_time=time.perf_counter() - t0,
        )
        records.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return records
