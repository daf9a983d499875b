"""
The classifier zoo: fixed architectures over a flat parameter vector θ.

All gradient methods return the exact reverse-mode derivative of softmax
cross-entropy. Computation runs in the dtype of the input; θ is stored in
float32 and cast on the fly, so float64 oracles exercise the same code.
"""
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from sgplab.exceptions import InvalidArgumentError, UnsupportedArchitectureError
from .layers import Conv3x3, Dense, Flatten, MaxPool2, ReLU, CONV3X3, RELU

logger = logging.getLogger(__name__)

CNN_A = 'cnn_a'
CNN_B = 'cnn_b'
MLP = 'mlp'
LINEAR = 'linear'

ARCHITECTURE_CHOICES = [
    (CNN_A, 'conv3x3(16)-relu-maxpool2-conv3x3(32)-relu-maxpool2-flatten-dense'),
    (CNN_B, 'conv3x3(8)-relu-conv3x3(8)-relu-maxpool2-flatten-dense(32)-relu-dense'),
    (MLP, 'flatten-dense(64)-relu-dense'),
    (LINEAR, 'flatten-dense'),
]
ARCHITECTURE_IDS = [arch for arch, _ in ARCHITECTURE_CHOICES]

CNN_B_HIDDEN = 32
MLP_HIDDEN = 64


def build_layers(architecture_id, input_shape, num_classes) -> List:
    """Instantiate the layer stack; consecutive shapes chain by construction"""
    layers = []

    def push(factory):
        shape = layers[-1].output_shape if layers else tuple(input_shape)
        layers.append(factory(shape))

    def conv(name, channels):
        push(lambda shape: Conv3x3(name, shape, channels))

    def dense(name, features):
        push(lambda shape: Dense(name, shape, features))

    if architecture_id == CNN_A:
        conv('conv1', 16)
        push(ReLU)
        push(MaxPool2)
        conv('conv2', 32)
        push(ReLU)
        push(MaxPool2)
        push(Flatten)
        dense('fc', num_classes)
    elif architecture_id == CNN_B:
        conv('conv1', 8)
        push(ReLU)
        conv('conv2', 8)
        push(ReLU)
        push(MaxPool2)
        push(Flatten)
        dense('fc1', CNN_B_HIDDEN)
        push(ReLU)
        dense('fc2', num_classes)
    elif architecture_id == MLP:
        push(Flatten)
        dense('fc1', MLP_HIDDEN)
        push(ReLU)
        dense('fc2', num_classes)
    elif architecture_id == LINEAR:
        push(Flatten)
        dense('fc', num_classes)
    else:
        raise UnsupportedArchitectureError(
            f"unknown architecture {architecture_id!r}; valid ids: {', '.join(ARCHITECTURE_IDS)}"
        )
    return layers


def parameter_layout(layers) -> List[Tuple[str, Tuple[int, ...], int, int]]:
    """(name, shape, offset, count) for every parameter tensor, in θ order"""
    layout = []
    offset = 0
    for layer in layers:
        for name, shape in layer.param_shapes().items():
            count = int(np.prod(shape))
            layout.append((name, tuple(shape), offset, count))
            offset += count
    return layout


def log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels):
    """Per-example loss and d loss / d logits for a (N, K) batch"""
    log_probs = log_softmax(logits)
    rows = np.arange(len(labels))
    losses = -log_probs[rows, labels]
    dlogits = np.exp(log_probs)
    dlogits[rows, labels] -= 1
    return losses, dlogits


@dataclass(eq=False)
class Classifier:
    architecture_id: str
    input_shape: Tuple[int, int, int]
    num_classes: int
    params: np.ndarray = None
    layers: list = field(init=False, repr=False, compare=False)
    layout: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.num_classes = int(self.num_classes)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise InvalidArgumentError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.num_classes < 2:
            raise InvalidArgumentError(f"num_classes must be at least 2, got {self.num_classes}")
        self.layers = build_layers(self.architecture_id, self.input_shape, self.num_classes)
        self.layout = parameter_layout(self.layers)
        if self.params is None:
            self.params = np.zeros(self.parameter_count, dtype=np.float32)
        self.params = np.ascontiguousarray(self.params, dtype=np.float32)
        if self.params.shape != (self.parameter_count,):
            raise InvalidArgumentError(
                f"{self.architecture_id} on {self.input_shape} needs {self.parameter_count} parameters, "
                f"got {self.params.shape}"
            )

    @classmethod
    def initialize(cls, architecture_id, input_shape=(3, 32, 32), num_classes=4, seed=0) -> 'Classifier':
        """Fan-in-scaled uniform weights (He-uniform), zero biases, seeded"""
        model = cls(architecture_id, input_shape, num_classes)
        rng = np.random.default_rng(seed)
        params = np.zeros(model.parameter_count, dtype=np.float32)
        for layer in model.layers:
            bound = np.sqrt(6.0 / layer.fan_in()) if layer.fan_in() else 0.0
            for name, shape in layer.param_shapes().items():
                if name.endswith('.weight'):
                    _, _, offset, count = model._slot(name)
                    params[offset:offset + count] = rng.uniform(-bound, bound, size=count)
        model.params = params
        return model

    @property
    def parameter_count(self) -> int:
        return sum(count for _, _, _, count in self.layout)

    def _slot(self, name):
        for slot in self.layout:
            if slot[0] == name:
                return slot
        raise KeyError(name)

    def tensors(self, dtype=np.float32, theta=None) -> Dict[str, np.ndarray]:
        """Named views into θ (or into an override vector theta), cast to dtype when needed"""
        source = self.params if theta is None else np.asarray(theta)
        params = source if source.dtype == dtype else source.astype(dtype)
        return {
            name: params[offset:offset + count].reshape(shape)
            for name, shape, offset, count in self.layout
        }

    def with_params(self, params) -> 'Classifier':
        return Classifier(self.architecture_id, self.input_shape, self.num_classes, np.array(params, dtype=np.float32))

    def copy(self) -> 'Classifier':
        return self.with_params(self.params.copy())

    def checksum(self) -> str:
        return hashlib.sha256(self.params.tobytes()).hexdigest()

    def describe(self) -> List[dict]:
        return [layer.describe() for layer in self.layers]

    def has_conv(self) -> bool:
        return any(layer.kind == CONV3X3 for layer in self.layers)

    # -- forward / backward -------------------------------------------------

    def _check_batch(self, batch):
        batch = np.asarray(batch)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != self.input_shape:
            raise InvalidArgumentError(
                f"{self.architecture_id} expects inputs of shape (N, {', '.join(map(str, self.input_shape))}), "
                f"got {batch.shape}"
            )
        if not np.issubdtype(batch.dtype, np.floating):
            batch = batch.astype(np.float32)
        return batch

    def _check_labels(self, labels, n):
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != n:
            raise InvalidArgumentError(f"got {labels.shape[0]} labels for {n} inputs")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidArgumentError(f"labels must lie in [0, {self.num_classes}), got {labels.tolist()}")
        return labels

    def forward_with_cache(self, batch, stop_after=None, theta=None):
        """Run the stack; returns (output, caches, params). stop_after truncates after that layer index."""
        x = self._check_batch(batch)
        params = self.tensors(x.dtype, theta)
        caches = []
        for index, layer in enumerate(self.layers):
            x, cache = layer.forward(x, params)
            caches.append(cache)
            if stop_after is not None and index == stop_after:
                break
        return x, caches, params

    def backward(self, dout, caches, params, down_to=0):
        """Pull dout back through layers len(caches)-1 … down_to; returns (d input of layer down_to, param grads)"""
        grads = {}
        for index in range(len(caches) - 1, down_to - 1, -1):
            dout, layer_grads = self.layers[index].backward(dout, caches[index], params)
            grads.update(layer_grads)
        return dout, grads

    def forward_batch(self, batch) -> np.ndarray:
        logits, _, _ = self.forward_with_cache(batch)
        return logits

    def forward(self, x) -> np.ndarray:
        """Logits for one C×H×W image"""
        x = np.asarray(x)
        if x.shape != self.input_shape:
            raise InvalidArgumentError(f"{self.architecture_id} expects input shape {self.input_shape}, got {x.shape}")
        return self.forward_batch(x[None])[0]

    def predict(self, batch) -> np.ndarray:
        return self.forward_batch(batch).argmax(axis=1)

    def accuracy(self, images, labels, batch_size=256) -> float:
        if len(labels) == 0:
            return 0.0
        correct = 0
        for start in range(0, len(labels), batch_size):
            predicted = self.predict(images[start:start + batch_size])
            correct += int(np.sum(predicted == np.asarray(labels[start:start + batch_size])))
        return correct / len(labels)

    def batch_input_grads(self, batch, labels):
        """Per-example losses and ∂loss_k/∂x_k for every example of the batch"""
        logits, caches, params = self.forward_with_cache(batch)
        labels = self._check_labels(labels, logits.shape[0])
        losses, dlogits = cross_entropy(logits, labels)
        dx, _ = self.backward(dlogits, caches, params)
        return losses, dx

    def loss_and_input_grad(self, x, y):
        """Softmax cross-entropy of one image against label y, and its input gradient"""
        x = np.asarray(x)
        if x.shape != self.input_shape:
            raise InvalidArgumentError(f"{self.architecture_id} expects input shape {self.input_shape}, got {x.shape}")
        losses, grads = self.batch_input_grads(x[None], [y])
        return losses[0], grads[0]

    def loss_and_param_grad(self, batch: Sequence, labels=None, theta=None):
        """Mean mini-batch cross-entropy and ∇θ (flat, in θ order)"""
        if labels is None:
            pairs = list(batch)
            if not pairs:
                raise InvalidArgumentError("loss_and_param_grad needs a non-empty batch")
            batch = np.stack([np.asarray(x) for x, _ in pairs])
            labels = [y for _, y in pairs]
        batch = np.asarray(batch)
        if batch.shape[0] == 0:
            raise InvalidArgumentError("loss_and_param_grad needs a non-empty batch")
        logits, caches, params = self.forward_with_cache(batch, theta=theta)
        labels = self._check_labels(labels, logits.shape[0])
        losses, dlogits = cross_entropy(logits, labels)
        n = logits.shape[0]
        _, grads = self.backward(dlogits / n, caches, params)
        flat = np.zeros(self.parameter_count, dtype=logits.dtype)
        for name, _, offset, count in self.layout:
            flat[offset:offset + count] = grads[name].ravel()
        return losses.mean(), flat

    def activation_pattern(self, batch, theta=None) -> Tuple:
        """ReLU masks and max-pool winners; equal patterns mean the same linear piece"""
        _, caches, _ = self.forward_with_cache(batch, theta=theta)
        patterns = (layer.pattern(cache) for layer, cache in zip(self.layers, caches))
        return tuple(pattern for pattern in patterns if pattern is not None)

    def last_conv_activation_index(self) -> int:
        """Index of the layer whose output is the last conv feature map (after its ReLU)"""
        conv_indices = [i for i, layer in enumerate(self.layers) if layer.kind == CONV3X3]
        if not conv_indices:
            raise UnsupportedArchitectureError(f"{self.architecture_id} has no convolutional layer")
        index = conv_indices[-1]
        if index + 1 < len(self.layers) and self.layers[index + 1].kind == RELU:
            index += 1
        return index
