"""
Batched layers with hand-written reverse-mode derivatives.

Activations are (N, C, H, W) or (N, D) arrays. Layers own no state: parameters
arrive as a dict of views into the classifier's flat θ vector, and forward()
returns a cache that backward() consumes.
"""
from typing import Dict, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CONV3X3 = 'conv3x3'
RELU = 'relu'
MAXPOOL2 = 'maxpool2'
DENSE = 'dense'
FLATTEN = 'flatten'

LAYER_KINDS = [CONV3X3, RELU, MAXPOOL2, DENSE, FLATTEN]


class Layer:
    kind = None

    def __init__(self, input_shape):
        self.input_shape = tuple(input_shape)
        self.output_shape = self._output_shape()

    def _output_shape(self):
        return self.input_shape

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def fan_in(self) -> int:
        return 0

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dout, cache, params):
        """Return (d input, {param name: d param})"""
        raise NotImplementedError

    def pattern(self, cache):
        """Discrete state that makes the layer non-smooth (None when smooth)"""
        return None

    def describe(self) -> dict:
        return {
            'kind': self.kind,
            'input_shape': list(self.input_shape),
            'output_shape': list(self.output_shape),
            'params': {name: list(shape) for name, shape in self.param_shapes().items()},
        }


class Conv3x3(Layer):
    """3×3 convolution, stride 1, zero 'same' padding"""

    kind = CONV3X3

    def __init__(self, name, input_shape, out_channels):
        self.name = name
        self.out_channels = out_channels
        super().__init__(input_shape)

    def _output_shape(self):
        _, h, w = self.input_shape
        return self.out_channels, h, w

    def param_shapes(self):
        c = self.input_shape[0]
        return {f'{self.name}.weight': (self.out_channels, c, 3, 3), f'{self.name}.bias': (self.out_channels,)}

    def fan_in(self):
        return self.input_shape[0] * 9

    def forward(self, x, params):
        n, c, h, w = x.shape
        weight = params[f'{self.name}.weight'].reshape(self.out_channels, c * 9)
        bias = params[f'{self.name}.bias']
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        # (N, C, H, W, 3, 3) -> (N·H·W, C·9)
        windows = sliding_window_view(padded, (3, 3), axis=(2, 3))
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9)
        out = cols @ weight.T + bias
        out = out.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, x.shape)

    def backward(self, dout, cache, params):
        cols, (n, c, h, w) = cache
        weight = params[f'{self.name}.weight'].reshape(self.out_channels, c * 9)
        dflat = dout.transpose(0, 2, 3, 1).reshape(n * h * w, self.out_channels)
        grads = {
            f'{self.name}.weight': (dflat.T @ cols).reshape(self.out_channels, c, 3, 3),
            f'{self.name}.bias': dflat.sum(axis=0),
        }
        dcols = (dflat @ weight).reshape(n, h, w, c, 3, 3)
        dpadded = np.zeros((n, c, h + 2, w + 2), dtype=dout.dtype)
        for u in range(3):
            for v in range(3):
                dpadded[:, :, u:u + h, v:v + w] += dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
        return dpadded[:, :, 1:-1, 1:-1], grads


class ReLU(Layer):
    kind = RELU

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, cache, params):
        # derivative at 0 is 0
        return dout * cache, {}

    def pattern(self, cache):
        return cache


class MaxPool2(Layer):
    """2×2 max pooling, stride 2; trailing odd row/column is dropped"""

    kind = MAXPOOL2

    def _output_shape(self):
        c, h, w = self.input_shape
        return c, h // 2, w // 2

    def forward(self, x, params):
        n, c, h, w = x.shape
        h2, w2 = h // 2, w // 2
        blocks = x[:, :, :2 * h2, :2 * w2].reshape(n, c, h2, 2, w2, 2)
        blocks = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
        # ties route to the first maximum
        winner = blocks.argmax(axis=-1)
        out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]
        return out, (winner, x.shape)

    def backward(self, dout, cache, params):
        winner, (n, c, h, w) = cache
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((n, c, h2, w2, 4), dtype=dout.dtype)
        np.put_along_axis(blocks, winner[..., None], dout[..., None], axis=-1)
        blocks = blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
        dx = np.zeros((n, c, h, w), dtype=dout.dtype)
        dx[:, :, :2 * h2, :2 * w2] = blocks
        return dx, {}

    def pattern(self, cache):
        return cache[0]


class Flatten(Layer):
    kind = FLATTEN

    def _output_shape(self):
        return (int(np.prod(self.input_shape)),)

    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache, params):
        return dout.reshape(cache), {}


class Dense(Layer):
    kind = DENSE

    def __init__(self, name, input_shape, out_features):
        self.name = name
        self.out_features = out_features
        super().__init__(input_shape)

    def _output_shape(self):
        return (self.out_features,)

    def param_shapes(self):
        return {
            f'{self.name}.weight': (self.out_features, self.input_shape[0]),
            f'{self.name}.bias': (self.out_features,),
        }

    def fan_in(self):
        return self.input_shape[0]

    def forward(self, x, params):
        weight = params[f'{self.name}.weight']
        return x @ weight.T + params[f'{self.name}.bias'], x

    def backward(self, dout, cache, params):
        weight = params[f'{self.name}.weight']
        grads = {
            f'{self.name}.weight': dout.T @ cache,
            f'{self.name}.bias': dout.sum(axis=0),
        }
        return dout @ weight, grads
