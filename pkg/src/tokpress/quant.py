"""Desk-scale post-training quantization operators.

Weight matrices are stored input-major: ``W`` has shape
``(d_in, d_out)`` and a layer computes ``X @ W`` for activations
``X`` of shape ``(n, d_in)``. The calibration Hessian ``2 * X.T @ X``
therefore indexes rows of ``W``, which is the dimension the
error-compensating sweep walks. Scales follow the same convention:
per-channel means one scale per output column, group granularity
splits the input dimension into contiguous row groups.

Three quantizers are provided: plain round-to-nearest, a
Hessian-compensated weight-only sweep, and activation-outlier scale
migration for 8-bit weight-activation matmuls. Integer matmuls are
simulated in wide integers; no kernels are involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import (
    InvalidParameter,
    NonFiniteValue,
    NonPositiveScale,
    ShapeMismatch,
    SingularHessian,
)

SCALE_CLAMP = (1e-5, 1e5)


class Granularity(str, Enum):
    PER_TENSOR = "per-tensor"
    PER_CHANNEL = "per-channel"
    GROUP = "group"


class QuantScope(str, Enum):
    WEIGHT_ONLY = "weight-only"
    WEIGHT_ACTIVATION = "weight-activation"


@dataclass(frozen=True)
class QuantSpec:
    """How to quantize: bit width, scale granularity, symmetry, scope."""

    bits: int = 8
    granularity: Granularity = Granularity.PER_TENSOR
    group_size: Optional[int] = None
    symmetric: bool = True
    scope: QuantScope = QuantScope.WEIGHT_ONLY

    def __post_init__(self):
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        object.__setattr__(self, "scope", QuantScope(self.scope))
        if self.bits not in (4, 8):
            raise InvalidParameter("bits must be 4 or 8")
        if (self.granularity is Granularity.GROUP) != (self.group_size is not None):
            raise InvalidParameter("group_size goes with group granularity, only")
        if self.group_size is not None and self.group_size < 1:
            raise InvalidParameter("group_size must be >= 1")

    @property
    def qmax(self) -> int:
        return 2 ** (self.bits - 1) - 1 if self.symmetric else 2 ** self.bits - 1


def _check_weight(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeMismatch("weight must be a 2-D matrix")
    if not np.all(np.isfinite(w)):
        raise NonFiniteValue("weight contains non-finite values")
    return w


def _group_rows(w: np.ndarray, spec: QuantSpec) -> int:
    """Rows per scale granule along the input dimension."""
    d_in = w.shape[0]
    if spec.granularity is Granularity.PER_TENSOR:
        return 0  # sentinel: reduce over everything
    if spec.granularity is Granularity.PER_CHANNEL:
        return d_in
    if d_in % spec.group_size != 0:
        raise ShapeMismatch(
            f"group size {spec.group_size} does not divide the grouped dim {d_in}"
        )
    return spec.group_size


def _scale_params(w: np.ndarray, spec: QuantSpec) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Compact (scales, zero_points) per granule. All-zero granules pin scale 1."""
    d_in, d_out = w.shape
    g = _group_rows(w, spec)
    if g == 0:
        blocks = w.reshape(1, d_in * d_out)
    else:
        blocks = w.reshape(d_in // g, g, d_out).transpose(0, 2, 1).reshape(-1, g)
        # block layout: (n_groups * d_out, g); scales reshape back below
    if spec.symmetric:
        amax = np.abs(blocks).max(axis=1)
        scales = np.where(amax > 0, amax / spec.qmax, 1.0)
        zps = None
    else:
        lo = blocks.min(axis=1)
        hi = blocks.max(axis=1)
        span = hi - lo
        scales = np.where(span > 0, span / spec.qmax, 1.0)
        zps = np.clip(np.rint(-lo / scales), 0, spec.qmax)
    if g == 0:
        scales = scales.reshape(1, 1)
        zps = None if zps is None else zps.reshape(1, 1)
    else:
        scales = scales.reshape(d_in // g, d_out)
        zps = None if zps is None else zps.reshape(d_in // g, d_out)
    return scales, zps


def _expand(compact: np.ndarray, shape: tuple[int, int], spec: QuantSpec) -> np.ndarray:
    """Broadcast compact granule params to the full weight shape."""
    d_in, _ = shape
    if spec.granularity is Granularity.PER_TENSOR:
        return np.broadcast_to(compact, shape)
    if spec.granularity is Granularity.PER_CHANNEL:
        return np.broadcast_to(compact[:1], shape) if compact.shape[0] == 1 else np.broadcast_to(compact, shape)
    return np.repeat(compact, spec.group_size, axis=0)


@dataclass(frozen=True)
class QuantizedLinear:
    """Quantized weight with everything needed to reconstruct it."""

    q: np.ndarray
    scales: np.ndarray
    zero_points: Optional[np.ndarray]
    spec: QuantSpec
    shape: tuple[int, int]
    smoothing_scales: Optional[np.ndarray] = None

    def _expanded(self) -> tuple[np.ndarray, Optional[np.ndarray]]:
        scales = _expand(self.scales, self.shape, self.spec)
        zps = None
        if self.zero_points is not None:
            zps = _expand(self.zero_points, self.shape, self.spec)
        return scales, zps

    def dequantize(self) -> np.ndarray:
        scales, zps = self._expanded()
        q = self.q.astype(np.float64)
        if zps is None:
            return q * scales
        return (q - zps) * scales

    def representable_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Elementwise (lo, hi) the grid can express; inputs are clamped here."""
        scales, zps = self._expanded()
        if zps is None:
            lim = self.spec.qmax * scales
            return -lim, lim
        return (0 - zps) * scales, (self.spec.qmax - zps) * scales


def _quantize_values(
    w: np.ndarray, scales: np.ndarray, zps: Optional[np.ndarray], spec: QuantSpec
) -> np.ndarray:
    if zps is None:
        return np.clip(np.rint(w / scales), -spec.qmax, spec.qmax).astype(np.int16)
    return np.clip(np.rint(w / scales) + zps, 0, spec.qmax).astype(np.int16)


def quantize_rtn(weight, spec: QuantSpec = QuantSpec()) -> QuantizedLinear:
    """Round-to-nearest baseline quantizer.

    Per granule, symmetric scales are ``max|w| / qmax``; asymmetric uses
    an affine min/max mapping. Dequantized values stay within half a step
    of the (range-clamped) originals.
    """
    w = _check_weight(weight)
    scales_c, zps_c = _scale_params(w, spec)
    scales = _expand(scales_c, w.shape, spec)
    zps = None if zps_c is None else _expand(zps_c, w.shape, spec)
    q = _quantize_values(w, scales, zps, spec)
    return QuantizedLinear(q=q, scales=scales_c, zero_points=zps_c, spec=spec, shape=w.shape)


def _damped_cholesky(h: np.ndarray, lam: float) -> Optional[np.ndarray]:
    try:
        return np.linalg.cholesky(h + lam * np.eye(h.shape[0]))
    except np.linalg.LinAlgError:
        return None


def gptq_quantize(weight, x_calib, spec: QuantSpec = QuantSpec(bits=4)) -> QuantizedLinear:
    """Weight-only quantization with Hessian error compensation.

    Rows (input dims) are quantized sequentially; after each row the
    rounding residual is propagated into not-yet-quantized rows through
    the upper Cholesky factor of the inverse dampened Hessian
    ``H = 2 * X.T @ X + lambda * I`` (``lambda`` = 1% of the mean
    Hessian diagonal, retried at 10x if singular). Scales come from the
    original weights, so the result is grid-compatible with
    :func:`quantize_rtn`.
    """
    if spec.scope is not QuantScope.WEIGHT_ONLY:
        raise InvalidParameter("hessian sweep is a weight-only method")
    w = _check_weight(weight).copy()
    x = np.asarray(x_calib, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeMismatch("calibration activations must be (n, d_in) with n >= 1")
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatch(
            f"calibration dim {x.shape[1]} does not match weight rows {w.shape[0]}"
        )
    d_in = w.shape[0]
    h = 2.0 * (x.T @ x)
    lam = 0.01 * float(np.mean(np.diag(h)))
    chol = None
    for attempt_lam in (lam, 10 * lam):
        chol = _damped_cholesky(h, attempt_lam)
        if chol is not None:
            break
    if chol is None:
        raise SingularHessian("calibration Hessian is singular even after dampening")
    h_inv = np.linalg.inv(h + attempt_lam * np.eye(d_in))
    upper = np.linalg.cholesky(h_inv).T  # h_inv = upper.T @ upper

    scales_c, zps_c = _scale_params(w, spec)
    scales = _expand(scales_c, w.shape, spec)
    zps = None if zps_c is None else _expand(zps_c, w.shape, spec)
    q = np.empty(w.shape, dtype=np.int16)
    for i in range(d_in):
        qi = _quantize_values(w[i: i + 1], scales[i: i + 1], None if zps is None else zps[i: i + 1], spec)
        q[i] = qi[0]
        if zps is None:
            dq = qi[0].astype(np.float64) * scales[i]
        else:
            dq = (qi[0].astype(np.float64) - zps[i]) * scales[i]
        err = (w[i] - dq) / upper[i, i]
        if i + 1 < d_in:
            w[i + 1:] -= np.outer(upper[i, i + 1:], err)
    return QuantizedLinear(q=q, scales=scales_c, zero_points=zps_c, spec=spec, shape=w.shape)


def smooth_scales(act_absmax, weight, alpha: float = 0.5) -> np.ndarray:
    """Per-input-channel migration scales ``a_j**alpha / wmax_j**(1-alpha)``.

    ``act_absmax`` holds the observed activation magnitude per input
    channel; ``wmax_j`` is the weight magnitude of the matching channel.
    Zero activation entries are pinned to the smallest positive observed
    value and the result is clamped to ``[1e-5, 1e5]``.
    """
    if not (0.0 <= alpha <= 1.0):
        raise InvalidParameter("alpha must be in [0, 1]")
    w = _check_weight(weight)
    a = np.asarray(act_absmax, dtype=np.float64).copy()
    if a.ndim != 1 or a.shape[0] != w.shape[0]:
        raise ShapeMismatch("act_absmax must have one entry per input channel")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise InvalidParameter("act_absmax must be finite and nonnegative")
    positive = a > 0
    a[~positive] = a[positive].min() if positive.any() else 1.0
    wmax = np.abs(w).max(axis=1)
    with np.errstate(divide="ignore"):
        s = np.power(a, alpha) / np.power(wmax, 1.0 - alpha)
    return np.clip(s, *SCALE_CLAMP)


def apply_smoothing(x, weight, s) -> tuple[np.ndarray, np.ndarray]:
    """Migrate scales: ``X' = X / s`` (columns), ``W' = s * W`` (rows).

    The product is algebraically unchanged: ``X' @ W' == X @ W``.
    """
    s = np.asarray(s, dtype=np.float64)
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise NonPositiveScale("smoothing scales must be strictly positive")
    x = np.asarray(x, dtype=np.float64)
    w = _check_weight(weight)
    if x.ndim != 2 or x.shape[1] != s.shape[0] or w.shape[0] != s.shape[0]:
        raise ShapeMismatch("scale length must match X columns and W rows")
    return x / s[None, :], w * s[:, None]


@dataclass(frozen=True)
class QuantErrorReport:
    max_abs_error: float
    mean_abs_error: float
    output_mse: float


def quant_eval(weight, weight_hat, x) -> QuantErrorReport:
    """Elementwise and layer-output error between a weight and its reconstruction."""
    w = _check_weight(weight)
    wh = np.asarray(weight_hat, dtype=np.float64)
    if wh.shape != w.shape:
        raise ShapeMismatch("reconstruction shape differs from the original")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch("activations must be (n, d_in)")
    diff = w - wh
    out = x @ diff
    return QuantErrorReport(
        max_abs_error=float(np.abs(diff).max()) if diff.size else 0.0,
        mean_abs_error=float(np.abs(diff).mean()) if diff.size else 0.0,
        output_mse=float(np.mean(out * out)),
    )


def w8a8_matmul(x, weight, alpha: float = 0.5, smooth: bool = True) -> np.ndarray:
    """Simulated 8-bit weight-activation matmul.

    Optionally migrates activation outliers into the weights, quantizes
    both sides per-tensor symmetric 8-bit, multiplies in 64-bit integers,
    and rescales. Returns the float64 result.
    """
    x = np.asarray(x, dtype=np.float64)
    w = _check_weight(weight)
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatch("activations must be (n, d_in)")
    if smooth:
        s = smooth_scales(np.abs(x).max(axis=0), w, alpha)
        x, w = apply_smoothing(x, w, s)
    spec = QuantSpec(bits=8, granularity=Granularity.PER_TENSOR, symmetric=True,
                     scope=QuantScope.WEIGHT_ACTIVATION)
    ax = np.abs(x).max()
    aw = np.abs(w).max()
    sx = ax / spec.qmax if ax > 0 else 1.0
    sw = aw / spec.qmax if aw > 0 else 1.0
    qx = np.clip(np.rint(x / sx), -spec.qmax, spec.qmax).astype(np.int64)
    qw = np.clip(np.rint(w / sw), -spec.qmax, spec.qmax).astype(np.int64)
    acc = qx @ qw
    return acc.astype(np.float64) * (sx * sw)
