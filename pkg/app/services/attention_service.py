"""Gaussian attention stage.

A six-channel head output is squashed into per-pixel bivariate Gaussian
parameters (confidence, centre, spreads, correlation). Every source pixel
emits one confidence-weighted normal density; the densities are summed and
passed through tanh to give an attention map in [0, 1) that multiplies the
backbone probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple
import logging
import math

import numpy as np

from app.services.tensor_service import (
    Tensor,
    active_graph,
    custom_op,
    logistic_array,
    mul,
)

logger = logging.getLogger(__name__)

R_MAX = 2.0
SIGMA_MIN = 0.1
RHO_MAX = 0.99
CONFIDENCE_FLOOR = 1e-3
DEFAULT_TRUNCATION_K = 5.0
PARAM_CHANNELS = ("confidence", "mu_x", "mu_y", "sigma_x", "sigma_y", "rho")

# offsets x sources evaluated per vectorised chunk
_CHUNK_ELEMENTS = 1 << 18
_BOUND_TOLERANCE = 1e-6


@dataclass(frozen=True)
class RenderMode:
    kind: str = "truncated"
    k: float = DEFAULT_TRUNCATION_K

    def __post_init__(self):
        if self.kind not in ("exact", "truncated"):
            raise ValueError(f"Unsupported render mode: {self.kind}")
        if self.kind == "truncated" and not self.k >= 3:
            raise ValueError(f"truncated rendering needs k >= 3, got {self.k}")

    @classmethod
    def exact(cls) -> "RenderMode":
        return cls("exact", math.inf)

    @classmethod
    def truncated(cls, k: float = DEFAULT_TRUNCATION_K) -> "RenderMode":
        return cls("truncated", k)

    @classmethod
    def parse(cls, kind: str, k: float = DEFAULT_TRUNCATION_K) -> "RenderMode":
        if kind == "exact":
            return cls.exact()
        if kind == "truncated":
            return cls.truncated(k)
        raise ValueError(f"Unsupported render mode: {kind}")


class GaussianParamMap:
    """Per-pixel Gaussian parameters, channels ordered as `PARAM_CHANNELS`.

    Centres are absolute pixel coordinates (x = column, y = row).
    ``verification`` maps additionally accept rho = 0.
    """

    def __init__(self, values: Tensor, verification: bool = False):
        if values.data.ndim != 4 or values.shape[3] != len(PARAM_CHANNELS):
            raise ValueError(f"parameter map must be (B, H, W, 6), got {values.shape}")
        self.values = values
        self.verification = verification

    @classmethod
    def from_arrays(cls, confidence, mu_x, mu_y, sigma_x, sigma_y, rho,
                    requires_grad: bool = False, dtype=np.float64) -> "GaussianParamMap":
        """Build a verification map from (B, H, W) arrays."""
        stacked = np.stack(
            [np.asarray(a, dtype=dtype) for a in (confidence, mu_x, mu_y, sigma_x, sigma_y, rho)],
            axis=-1,
        )
        return cls(Tensor(stacked, requires_grad=requires_grad, name="gaussian_params"),
                   verification=True)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.values.shape[:3]

    def channel(self, name: str) -> np.ndarray:
        return self.values.data[..., PARAM_CHANNELS.index(name)]

    @property
    def confidence(self) -> np.ndarray:
        return self.channel("confidence")

    @property
    def mu_x(self) -> np.ndarray:
        return self.channel("mu_x")

    @property
    def mu_y(self) -> np.ndarray:
        return self.channel("mu_y")

    @property
    def sigma_x(self) -> np.ndarray:
        return self.channel("sigma_x")

    @property
    def sigma_y(self) -> np.ndarray:
        return self.channel("sigma_y")

    @property
    def rho(self) -> np.ndarray:
        return self.channel("rho")

    def validate(self) -> None:
        _, height, width = self.shape
        rows, cols = np.indices((height, width))
        conf = self.confidence
        if np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("confidence outside [0, 1]; activate_params was bypassed")
        sigma_floor = SIGMA_MIN * (1 - _BOUND_TOLERANCE)
        if np.any(self.sigma_x < sigma_floor) or np.any(self.sigma_y < sigma_floor):
            raise ValueError(f"sigma below {SIGMA_MIN}; activate_params was bypassed")
        rho = self.rho
        rho_ok = rho >= 0 if self.verification else rho > 0
        if not np.all(rho_ok) or np.any(rho > RHO_MAX * (1 + _BOUND_TOLERANCE)):
            raise ValueError(f"rho outside (0, {RHO_MAX}]; activate_params was bypassed")
        reach = R_MAX * (1 + _BOUND_TOLERANCE)
        if np.any(np.abs(self.mu_x - cols) > reach) or np.any(np.abs(self.mu_y - rows) > reach):
            raise ValueError(f"Gaussian centre further than {R_MAX} px from its source pixel")


@dataclass
class AttentionMap:
    values: Tensor
    params: GaussianParamMap
    mode: RenderMode
    summed: np.ndarray
    recorded: bool = False


@dataclass
class _SourceGroup:
    window: int
    index: np.ndarray  # flat (b, i, j) source indices


class AttentionService:
    """Parameter activation, rendering and application of the attention map"""

    @staticmethod
    def activate_params(raw: Tensor) -> GaussianParamMap:
        """Map raw head channels onto the constrained parameter ranges."""
        if raw.data.ndim != 4 or raw.shape[3] != len(PARAM_CHANNELS):
            raise ValueError(f"attention head must emit (B, H, W, 6), got {raw.shape}")
        z = raw.data
        _, height, width, _ = raw.shape
        rows, cols = np.indices((height, width)).astype(z.dtype)

        conf = logistic_array(z[..., 0])
        tanh_x = np.tanh(z[..., 1])
        tanh_y = np.tanh(z[..., 2])
        soft_x = logistic_array(z[..., 3])
        soft_y = logistic_array(z[..., 4])
        rho_gate = logistic_array(z[..., 5])

        values = np.stack(
            [
                conf,
                cols + R_MAX * tanh_x,
                rows + R_MAX * tanh_y,
                SIGMA_MIN + np.logaddexp(0, z[..., 3]),
                SIGMA_MIN + np.logaddexp(0, z[..., 4]),
                RHO_MAX * rho_gate,
            ],
            axis=-1,
        ).astype(z.dtype, copy=False)

        local = np.stack(
            [
                conf * (1 - conf),
                R_MAX * (1 - tanh_x * tanh_x),
                R_MAX * (1 - tanh_y * tanh_y),
                soft_x,
                soft_y,
                RHO_MAX * rho_gate * (1 - rho_gate),
            ],
            axis=-1,
        ).astype(z.dtype, copy=False)

        def backward(grad):
            return (grad * local,)

        out = custom_op("activate_params", values, (raw,), backward)
        out.name = "gaussian_params"
        return GaussianParamMap(out)

    @staticmethod
    def render_attention(params: GaussianParamMap, mode: Optional[RenderMode] = None) -> AttentionMap:
        mode = mode or RenderMode.truncated()
        params.validate()
        batch, height, width = params.shape
        dtype = params.values.dtype

        summed = np.zeros(batch * height * width, dtype=np.float64)
        for chunk in AttentionService._iter_contributions(params, mode):
            summed += np.bincount(chunk.target.ravel(), weights=chunk.weight.ravel(),
                                  minlength=summed.size)
        summed = summed.reshape(batch, height, width, 1).astype(dtype)

        ceiling = np.nextafter(dtype.type(1), dtype.type(0))
        attention = np.minimum(np.tanh(summed), ceiling)
        if np.any(attention < 0) or np.any(attention >= 1):
            raise FloatingPointError("attention map left [0, 1)")

        graph = active_graph()
        recorded = graph is not None and params.values.requires_grad
        result = AttentionMap(values=None, params=params, mode=mode, summed=summed,
                              recorded=recorded)

        def backward(grad):
            return (AttentionService.attention_backward(result, grad, mode),)

        result.values = custom_op("render_attention", attention, (params.values,), backward)
        result.values.name = "attention"
        return result

    @staticmethod
    def attention_backward(attention: AttentionMap, upstream_grad: np.ndarray,
                           mode: Optional[RenderMode] = None) -> np.ndarray:
        """Gradient of the loss w.r.t. all six parameter channels per source pixel."""
        if mode is not None and mode != attention.mode:
            raise ValueError(f"render mode mismatch: forward {attention.mode}, backward {mode}")
        if not attention.recorded:
            raise RuntimeError("render_attention ran without gradient recording")
        params = attention.params
        batch, height, width = params.shape
        upstream = np.asarray(upstream_grad).reshape(batch, height, width, 1)
        values = attention.values.data
        grad_sum = (upstream * (1 - values * values)).astype(np.float64).ravel()

        grads = np.zeros((batch * height * width, len(PARAM_CHANNELS)), dtype=np.float64)
        if not np.any(grad_sum):
            return grads.reshape(batch, height, width, -1).astype(params.values.dtype)

        for chunk in AttentionService._iter_contributions(params, attention.mode):
            g = grad_sum[chunk.target]
            gt = g * chunk.weight
            zx, zy, rho, denom = chunk.zx, chunk.zy, chunk.rho, chunk.denom
            sx, sy = chunk.sigma_x, chunk.sigma_y
            cross = zx * zy
            partials = (
                g * chunk.density,
                gt * (zx - rho * zy) / (denom * sx),
                gt * (zy - rho * zx) / (denom * sy),
                gt * (-1 / sx + (zx * zx - rho * cross) / (denom * sx)),
                gt * (-1 / sy + (zy * zy - rho * cross) / (denom * sy)),
                gt * (rho / denom + cross / denom - chunk.quad * rho / (denom * denom)),
            )
            for channel, partial in enumerate(partials):
                grads[chunk.source, channel] += partial.sum(axis=0)

        return grads.reshape(batch, height, width, -1).astype(params.values.dtype)

    @staticmethod
    def apply_attention(backbone_prob: Tensor, attention: AttentionMap) -> Tensor:
        values = attention.values
        if backbone_prob.shape != values.shape:
            raise ValueError(
                f"attention shape {values.shape} does not match backbone output {backbone_prob.shape}"
            )
        return mul(backbone_prob, values)

    # --- rendering kernel ------------------------------------------------------

    @staticmethod
    def _source_groups(params: GaussianParamMap, mode: RenderMode) -> List[_SourceGroup]:
        """Bucket source pixels by the half-width of the window they can reach."""
        batch, height, width = params.shape
        full = max(height, width) - 1
        conf = params.confidence.ravel()
        if mode.kind == "exact":
            return [_SourceGroup(full, np.arange(conf.size))]

        keep = conf >= CONFIDENCE_FLOOR
        spread = np.maximum(params.sigma_x, params.sigma_y).ravel().astype(np.float64)
        with np.errstate(invalid="ignore", over="ignore"):
            reach = mode.k * spread + 2 * R_MAX
        windows = np.where(np.isfinite(reach), np.ceil(np.minimum(reach, full + 1)), full + 1)
        windows = np.minimum(windows.astype(np.int64), full)
        windows = np.where(windows <= 8, windows, 4 * ((windows + 3) // 4))
        windows = np.minimum(windows, full)

        groups = []
        for window in np.unique(windows[keep]):
            index = np.flatnonzero(keep & (windows == window))
            groups.append(_SourceGroup(int(window), index))
        return groups

    @staticmethod
    def _iter_contributions(params: GaussianParamMap, mode: RenderMode) -> Iterator["_Chunk"]:
        batch, height, width = params.shape
        flat = params.values.data.reshape(-1, len(PARAM_CHANNELS)).astype(np.float64)
        pixel = np.arange(flat.shape[0])
        src_b = pixel // (height * width)
        src_i = (pixel // width) % height
        src_j = pixel % width

        for group in AttentionService._source_groups(params, mode):
            span = np.arange(-group.window, group.window + 1)
            off_y, off_x = (a.ravel() for a in np.meshgrid(span, span, indexing="ij"))
            idx = group.index
            conf, mu_x, mu_y, sigma_x, sigma_y, rho = (flat[idx, c][None, :] for c in range(6))
            denom = 1 - rho * rho
            norm = 1 / (2 * np.pi * sigma_x * sigma_y * np.sqrt(denom))
            if mode.kind == "exact":
                radius = None
            else:
                radius = mode.k * np.maximum(sigma_x, sigma_y) + R_MAX

            step = max(1, _CHUNK_ELEMENTS // max(1, idx.size))
            for start in range(0, off_y.size, step):
                dy = off_y[start:start + step, None]
                dx = off_x[start:start + step, None]
                ty = src_i[idx][None, :] + dy
                tx = src_j[idx][None, :] + dx
                inside = (ty >= 0) & (ty < height) & (tx >= 0) & (tx < width)
                u = tx - mu_x
                v = ty - mu_y
                if radius is not None:
                    inside &= u * u + v * v <= radius * radius
                zx = u / sigma_x
                zy = v / sigma_y
                quad = zx * zx + zy * zy - 2 * rho * zx * zy
                density = np.where(inside, norm * np.exp(-quad / (2 * denom)), 0.0)
                target = np.where(inside, (src_b[idx][None, :] * height + ty) * width + tx, 0)
                yield _Chunk(
                    source=idx, target=target, density=density, weight=conf * density,
                    zx=zx, zy=zy, quad=quad, rho=rho, denom=denom,
                    sigma_x=sigma_x, sigma_y=sigma_y,
                )


@dataclass
class _Chunk:
    source: np.ndarray
    target: np.ndarray
    density: np.ndarray
    weight: np.ndarray
    zx: np.ndarray
    zy: np.ndarray
    quad: np.ndarray
    rho: np.ndarray
    denom: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
