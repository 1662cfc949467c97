"""Dense feed-forward networks with exact reverse-mode gradients.

All math is float64. A network owns its parameters as one flat vector;
the per-layer weight matrices and bias vectors are numpy views into that
vector, so reads and writes through either side stay coherent.

Flat parameter layout (stable across runs, relied on by saved importance
vectors): trunk layers in order, then output heads in order; within each
layer the weight matrix (shape in_dim x out_dim, row-major) comes before
the bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Probability floor applied before any log; keeps softmax output strictly
# positive and makes -log finite even for fully saturated nets.
PROB_FLOOR = 1e-300


@dataclass
class Batch:
    """A minibatch of examples routed to one output head."""

    inputs: np.ndarray
    labels: np.ndarray
    head_id: int = 0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError(f"batch inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.inputs):
            raise ValueError(
                f"labels must be 1-D with one entry per input row "
                f"({len(self.labels)} labels vs {len(self.inputs)} inputs)"
            )
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("batch inputs contain non-finite values")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("batch inputs must lie in [0, 1]")

    def __len__(self):
        return len(self.inputs)


class DenseNet:
    """Fully connected ReLU network with one or more softmax output heads.

    With several heads, exactly one head is active per forward pass
    (selected by ``Batch.head_id``); only that head's parameters receive
    gradients.
    """

    def __init__(self, input_dim: int, hidden: list[int], head_sizes: list[int] = (10,)):
        if input_dim < 1:
            raise ValueError("input_dim must be positive")
        head_sizes = list(head_sizes)
        if not head_sizes:
            raise ValueError("need at least one output head")
        dims = [input_dim] + list(hidden)
        self.input_dim = input_dim
        self.hidden = list(hidden)
        self.head_sizes = head_sizes
        # (in_dim, out_dim) for trunk layers followed by heads.
        self._trunk_shapes = [(dims[i], dims[i + 1]) for i in range(len(hidden))]
        self._head_shapes = [(dims[-1], k) for k in head_sizes]
        n = sum(i * o + o for i, o in self._trunk_shapes + self._head_shapes)
        self.params = np.zeros(n, dtype=np.float64)
        self._trunk, self._heads = self._carve(self.params)
        # Diagnostic counter: how often the probability floor was binding
        # for a label coordinate inside a loss evaluation.
        self.underflow_clamps = 0

    # -- parameter bookkeeping -------------------------------------------

    def _carve(self, flat: np.ndarray):
        """Split a flat vector into (W, b) views matching this net's layout."""
        trunk, heads, off = [], [], 0
        for kind, shapes in (("trunk", self._trunk_shapes), ("head", self._head_shapes)):
            out = trunk if kind == "trunk" else heads
            for i, o in shapes:
                w = flat[off : off + i * o].reshape(i, o)
                off += i * o
                b = flat[off : off + o]
                off += o
                out.append((w, b))
        return trunk, heads

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_heads(self) -> int:
        return len(self._heads)

    def head_classes(self, head_id: int) -> int:
        return self.head_sizes[head_id]

    def layer_views(self, flat: np.ndarray | None = None):
        """(W, b) views into ``flat`` (default: own params), trunk then heads."""
        if flat is None:
            return self._trunk + self._heads
        trunk, heads = self._carve(np.asarray(flat))
        return trunk + heads

    # -- forward / backward ----------------------------------------------

    def _check_batch(self, batch: Batch):
        if batch.inputs.shape[1] != self.input_dim:
            raise ValueError(
                f"input dim mismatch: batch has {batch.inputs.shape[1]} features, "
                f"net expects {self.input_dim}"
            )
        if not 0 <= batch.head_id < self.n_heads:
            raise ValueError(f"head_id {batch.head_id} out of range (net has {self.n_heads} heads)")
        k = self.head_classes(batch.head_id)
        if len(batch.labels) and (batch.labels.min() < 0 or batch.labels.max() >= k):
            raise ValueError(f"labels must lie in [0, {k}) for head {batch.head_id}")

    def _trunk_forward(self, x: np.ndarray) -> list[np.ndarray]:
        """Activations per layer: [input, relu(z_1), ..., relu(z_L)]."""
        acts = [x]
        h = x
        for w, b in self._trunk:
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        return acts

    def logits(self, x: np.ndarray, head_id: int = 0) -> np.ndarray:
        w, b = self._heads[head_id]
        return self._trunk_forward(np.atleast_2d(x))[-1] @ w + b

    def _backward(self, acts: list[np.ndarray], dlogits: np.ndarray, head_id: int) -> np.ndarray:
        """Reverse pass from a logit-space upstream gradient to a flat gradient."""
        grad = np.zeros_like(self.params)
        gtrunk, gheads = self._carve(grad)
        w_h, _ = self._heads[head_id]
        gw, gb = gheads[head_id]
        gw += acts[-1].T @ dlogits
        gb += dlogits.sum(axis=0)
        dh = dlogits @ w_h.T
        for i in range(len(self._trunk) - 1, -1, -1):
            w, _ = self._trunk[i]
            dz = dh * (acts[i + 1] > 0.0)
            gw, gb = gtrunk[i]
            gw += acts[i].T @ dz
            gb += dz.sum(axis=0)
            if i > 0:
                dh = dz @ w.T
        return grad

    def backprop_logits(self, x: np.ndarray, dlogits: np.ndarray, head_id: int = 0) -> np.ndarray:
        """Flat gradient of ``dlogits . logits(x)`` for a single example."""
        acts = self._trunk_forward(np.atleast_2d(x))
        return self._backward(acts, np.atleast_2d(dlogits), head_id)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, floored at PROB_FLOOR so rows stay strictly positive."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return np.maximum(p, PROB_FLOOR)


def forward(net: DenseNet, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Logits and softmax probabilities for a batch."""
    net._check_batch(batch)
    acts = net._trunk_forward(batch.inputs)
    w, b = net._heads[batch.head_id]
    logits = acts[-1] @ w + b
    return logits, softmax(logits)


def loss_and_grad(net: DenseNet, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its exact flat-parameter gradient.

    Label probabilities below PROB_FLOOR are clamped before the log; each
    clamped label is counted in ``net.underflow_clamps``. The gradient is
    the exact derivative of the unclamped loss.
    """
    net._check_batch(batch)
    if len(batch) == 0:
        raise ValueError("cannot evaluate the loss of an empty batch")
    acts = net._trunk_forward(batch.inputs)
    w, b = net._heads[batch.head_id]
    logits = acts[-1] @ w + b
    probs = softmax(logits)
    rows = np.arange(len(batch))
    p_label = probs[rows, batch.labels]
    net.underflow_clamps += int(np.count_nonzero(p_label <= PROB_FLOOR))
    loss = float(-np.mean(np.log(p_label)))
    dlogits = probs.copy()
    dlogits[rows, batch.labels] -= 1.0
    dlogits /= len(batch)
    return loss, net._backward(acts, dlogits, batch.head_id)


def per_example_label_grad(net: DenseNet, x: np.ndarray, y: int, head_id: int = 0) -> np.ndarray:
    """Flat gradient of -log q_x(y) for a single example at current parameters."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    acts = net._trunk_forward(x)
    w, b = net._heads[head_id]
    probs = softmax(acts[-1] @ w + b)
    dlogits = probs.copy()
    dlogits[0, y] -= 1.0
    return net._backward(acts, dlogits, head_id)


def glorot_uniform_init(net: DenseNet, seed: int) -> None:
    """Glorot-uniform weights, U(-a, a) with a = sqrt(6/(fan_in+fan_out)); zero biases.

    Deterministic for a given seed (PCG64 stream).
    """
    rng = np.random.default_rng(seed)
    for w, b in net.layer_views():
        fan_in, fan_out = w.shape
        a = np.sqrt(6.0 / (fan_in + fan_out))
        w[:] = rng.uniform(-a, a, size=w.shape)
        b[:] = 0.0
