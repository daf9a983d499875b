"""
Linear image operators on C×H×W tensors and their exact adjoints.

Images are plain numpy arrays of shape (C, H, W). The pipeline runs in
float32; every operator preserves a floating input dtype so test oracles can
run the same code in float64. No operator mutates its input.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence, Tuple

import numpy as np

from sgplab.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

Shape = Tuple[int, int, int]

BLUR5X5 = 'blur5x5'
DOWNSAMPLE_RC = 'downsample_rc'
DOWNSAMPLE_R = 'downsample_r'
DOWNSAMPLE_C = 'downsample_c'
RESIZE_BILINEAR = 'resize_bilinear'
RESIZE_NEAREST = 'resize_nearest'
ZERO_PAD = 'zero_pad'

OP_KINDS = [
    (BLUR5X5, '5x5 binomial blur, reflect boundary'),
    (DOWNSAMPLE_RC, 'keep even rows and even columns'),
    (DOWNSAMPLE_R, 'keep even rows'),
    (DOWNSAMPLE_C, 'keep even columns'),
    (RESIZE_BILINEAR, 'bilinear resize, half-pixel centers'),
    (RESIZE_NEAREST, 'nearest-neighbour resize, half-pixel centers'),
    (ZERO_PAD, 'embed into a zero canvas at an offset'),
]

DOWNSAMPLE_KINDS = {'rc': DOWNSAMPLE_RC, 'r': DOWNSAMPLE_R, 'c': DOWNSAMPLE_C}
RESIZE_KINDS = {'bilinear': RESIZE_BILINEAR, 'nearest': RESIZE_NEAREST}

# (1/256) [1 4 6 4 1] ⊗ [1 4 6 4 1]
BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0])
BLUR_KERNEL = np.outer(BINOMIAL_5, BINOMIAL_5) / 256.0
BLUR_KERNEL.flags.writeable = False


def as_image(img, name='image') -> np.ndarray:
    """Validate a C×H×W tensor; integer data is promoted to float32"""
    arr = np.asarray(img)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty C×H×W tensor, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return arr


def _check_shape(shape) -> Shape:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 1:
        raise InvalidArgumentError(f"shape must be (C, H, W) with positive entries, got {shape}")
    return shape


def _check_kernel(kernel) -> np.ndarray:
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise InvalidArgumentError(f"kernel must be a square K×K grid, got shape {k.shape}")
    if k.shape[0] % 2 == 0:
        raise InvalidArgumentError(f"kernel side length must be odd, got {k.shape[0]}")
    return k


@lru_cache(maxsize=None)
def _reflect_index(n: int, pad: int) -> np.ndarray:
    # 2,1 | 0,1,2,...,n-1 | n-2,n-3 ; edge pixel not duplicated
    index = np.pad(np.arange(n), pad, mode='reflect')
    index.flags.writeable = False
    return index


def _flipped(kernel: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(kernel[::-1, ::-1]).astype(dtype)


def conv2d_reflect(img, kernel) -> np.ndarray:
    """2-D convolution of every channel with `kernel` under reflect padding"""
    img = as_image(img)
    k = _check_kernel(kernel)
    side = k.shape[0]
    pad = side // 2
    c, h, w = img.shape
    rows = _reflect_index(h, pad)
    cols = _reflect_index(w, pad)
    padded = img[:, rows][:, :, cols]
    kf = _flipped(k, img.dtype)
    out = np.zeros_like(img)
    for u in range(side):
        for v in range(side):
            out += kf[u, v] * padded[:, u:u + h, v:v + w]
    return out


def conv2d_reflect_adjoint(cotangent, kernel) -> np.ndarray:
    """Transpose of conv2d_reflect for the same kernel"""
    cot = as_image(cotangent, 'cotangent')
    k = _check_kernel(kernel)
    side = k.shape[0]
    pad = side // 2
    c, h, w = cot.shape
    rows = _reflect_index(h, pad)
    cols = _reflect_index(w, pad)
    kf = _flipped(k, cot.dtype)
    padded = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=cot.dtype)
    for u in range(side):
        for v in range(side):
            padded[:, u:u + h, v:v + w] += kf[u, v] * cot
    # scatter the padded frame back onto the pixels it was gathered from
    partial = np.zeros((c, h + 2 * pad, w), dtype=cot.dtype)
    np.add.at(partial, (slice(None), slice(None), cols), padded)
    out = np.zeros((c, h, w), dtype=cot.dtype)
    np.add.at(out, (slice(None), rows), partial)
    return out


def downsample_shape(shape, scheme: str) -> Shape:
    c, h, w = _check_shape(shape)
    if scheme not in DOWNSAMPLE_KINDS:
        raise InvalidArgumentError(f"unknown downsampling scheme {scheme!r}; expected one of rc, r, c")
    rows = (h + 1) // 2 if scheme in ('rc', 'r') else h
    cols = (w + 1) // 2 if scheme in ('rc', 'c') else w
    return c, rows, cols


def downsample(img, scheme: str) -> np.ndarray:
    """Keep pixels at even 0-based indices along the sampled axes"""
    img = as_image(img)
    downsample_shape(img.shape, scheme)
    if scheme == 'rc':
        return img[:, ::2, ::2].copy()
    if scheme == 'r':
        return img[:, ::2, :].copy()
    return img[:, :, ::2].copy()


def downsample_adjoint(cotangent, scheme: str, input_shape) -> np.ndarray:
    cot = as_image(cotangent, 'cotangent')
    input_shape = _check_shape(input_shape)
    expected = downsample_shape(input_shape, scheme)
    if cot.shape != expected:
        raise InvalidArgumentError(f"cotangent shape {cot.shape} does not match {expected}")
    out = np.zeros(input_shape, dtype=cot.dtype)
    if scheme == 'rc':
        out[:, ::2, ::2] = cot
    elif scheme == 'r':
        out[:, ::2, :] = cot
    else:
        out[:, :, ::2] = cot
    return out


@lru_cache(maxsize=256)
def interpolation_matrix(n_in: int, n_out: int, mode: str = 'bilinear') -> np.ndarray:
    """
    Dense (n_out × n_in) 1-D resampling matrix with half-pixel centers.

    Output sample i sits at source coordinate (i + 0.5)·n_in/n_out − 0.5,
    clamped to the valid range. The matrix is read-only and shared.
    """
    if n_in < 1 or n_out < 1:
        raise InvalidArgumentError(f"resize dimensions must be >= 1, got {n_in} -> {n_out}")
    if mode not in RESIZE_KINDS:
        raise InvalidArgumentError(f"unknown resize mode {mode!r}")
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        if mode == 'nearest':
            j = min(int(np.floor((i + 0.5) * scale)), n_in - 1)
            matrix[i, j] = 1.0
            continue
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        j0 = int(np.floor(src))
        j1 = min(j0 + 1, n_in - 1)
        frac = src - j0
        matrix[i, j0] += 1.0 - frac
        matrix[i, j1] += frac
    matrix.flags.writeable = False
    return matrix


def resize(img, out_h: int, out_w: int, mode: str = 'bilinear') -> np.ndarray:
    img = as_image(img)
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"resize target must be at least 1×1, got {out_h}×{out_w}")
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    rows = interpolation_matrix(h, out_h, mode).astype(img.dtype)
    cols = interpolation_matrix(w, out_w, mode).astype(img.dtype)
    return np.einsum('oh,chw,pw->cop', rows, img, cols, optimize=True)


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment"""
    return resize(img, out_h, out_w, 'bilinear')


def resize_adjoint(cotangent, input_shape, mode: str = 'bilinear') -> np.ndarray:
    cot = as_image(cotangent, 'cotangent')
    c, h, w = _check_shape(input_shape)
    out_h, out_w = cot.shape[1:]
    if cot.shape[0] != c:
        raise InvalidArgumentError(f"cotangent has {cot.shape[0]} channels, expected {c}")
    if (h, w) == (out_h, out_w):
        return cot.copy()
    rows = interpolation_matrix(h, out_h, mode).astype(cot.dtype)
    cols = interpolation_matrix(w, out_w, mode).astype(cot.dtype)
    return np.einsum('oh,cop,pw->chw', rows, cot, cols, optimize=True)


def zero_pad(img, out_h: int, out_w: int, top: int, left: int) -> np.ndarray:
    """Place img on an out_h×out_w zero canvas with its corner at (top, left)"""
    img = as_image(img)
    c, h, w = img.shape
    if top < 0 or left < 0 or top + h > out_h or left + w > out_w:
        raise InvalidArgumentError(
            f"cannot place a {h}×{w} image at ({top}, {left}) on a {out_h}×{out_w} canvas"
        )
    out = np.zeros((c, out_h, out_w), dtype=img.dtype)
    out[:, top:top + h, left:left + w] = img
    return out


@dataclass(frozen=True)
class LinearOpDescriptor:
    """One linear stage of a transformation pipeline, with enough metadata for its adjoint"""

    kind: str
    input_shape: Shape
    output_shape: Shape
    offset: Tuple[int, int] = (0, 0)

    @classmethod
    def blur(cls, input_shape) -> 'LinearOpDescriptor':
        shape = _check_shape(input_shape)
        return cls(BLUR5X5, shape, shape)

    @classmethod
    def downsample(cls, input_shape, scheme: str) -> 'LinearOpDescriptor':
        shape = _check_shape(input_shape)
        return cls(DOWNSAMPLE_KINDS.get(scheme, scheme), shape, downsample_shape(shape, scheme))

    @classmethod
    def resize(cls, input_shape, out_h: int, out_w: int, mode: str = 'bilinear') -> 'LinearOpDescriptor':
        shape = _check_shape(input_shape)
        if mode not in RESIZE_KINDS:
            raise InvalidArgumentError(f"unknown resize mode {mode!r}")
        if out_h < 1 or out_w < 1:
            raise InvalidArgumentError(f"resize target must be at least 1×1, got {out_h}×{out_w}")
        return cls(RESIZE_KINDS[mode], shape, (shape[0], int(out_h), int(out_w)))

    @classmethod
    def zero_pad(cls, input_shape, out_h: int, out_w: int, top: int, left: int) -> 'LinearOpDescriptor':
        shape = _check_shape(input_shape)
        if top < 0 or left < 0 or top + shape[1] > out_h or left + shape[2] > out_w:
            raise InvalidArgumentError(
                f"cannot place a {shape[1]}×{shape[2]} image at ({top}, {left}) on a {out_h}×{out_w} canvas"
            )
        return cls(ZERO_PAD, shape, (shape[0], int(out_h), int(out_w)), (int(top), int(left)))

    def __post_init__(self):
        if self.kind not in dict(OP_KINDS):
            raise InvalidArgumentError(f"unknown linear op kind {self.kind!r}")

    @property
    def scheme(self):
        for scheme, kind in DOWNSAMPLE_KINDS.items():
            if kind == self.kind:
                return scheme
        return None

    @property
    def resize_mode(self):
        for mode, kind in RESIZE_KINDS.items():
            if kind == self.kind:
                return mode
        return None


def apply(op: LinearOpDescriptor, img) -> np.ndarray:
    """Forward application L·img"""
    img = as_image(img)
    if img.shape != op.input_shape:
        raise InvalidArgumentError(f"{op.kind} expects input shape {op.input_shape}, got {img.shape}")
    if op.kind == BLUR5X5:
        return conv2d_reflect(img, BLUR_KERNEL)
    if op.scheme is not None:
        return downsample(img, op.scheme)
    if op.resize_mode is not None:
        return resize(img, op.output_shape[1], op.output_shape[2], op.resize_mode)
    top, left = op.offset
    return zero_pad(img, op.output_shape[1], op.output_shape[2], top, left)


def apply_adjoint(op: LinearOpDescriptor, cotangent) -> np.ndarray:
    """Transpose application Lᵀ·cotangent"""
    cot = as_image(cotangent, 'cotangent')
    if cot.shape != op.output_shape:
        raise InvalidArgumentError(
            f"adjoint of {op.kind} expects cotangent shape {op.output_shape}, got {cot.shape}"
        )
    if op.kind == BLUR5X5:
        return conv2d_reflect_adjoint(cot, BLUR_KERNEL)
    if op.scheme is not None:
        return downsample_adjoint(cot, op.scheme, op.input_shape)
    if op.resize_mode is not None:
        return resize_adjoint(cot, op.input_shape, op.resize_mode)
    top, left = op.offset
    _, h, w = op.input_shape
    return cot[:, top:top + h, left:left + w].copy()


def apply_chain(ops: Iterable[LinearOpDescriptor], img) -> np.ndarray:
    out = as_image(img)
    for op in ops:
        out = apply(op, out)
    return out


def pullback_chain(ops: Sequence[LinearOpDescriptor], cotangent) -> np.ndarray:
    """Adjoint of apply_chain: adjoints applied in reverse order"""
    out = as_image(cotangent, 'cotangent')
    for op in reversed(tuple(ops)):
        out = apply_adjoint(op, out)
    return out
