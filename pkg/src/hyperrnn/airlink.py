"""Pilot transmission physics: the two observation models, AWGN, SNR
accounting, and the power projection applied to trainable pilots.

Uplink (user -> BS):   Y_t = h_t x + N_t, with x a 1xL_ul pilot row and
per-entry budget |x_l|^2 = P_UL.  Downlink (BS -> user):
y_t = h_t^H X + n_t, with X an M x L_dl pilot matrix and per-column budget
||X_l||^2 = P_DL.  Noise entries are i.i.d. circularly-symmetric complex
Gaussian of variance sigma^2 (sigma^2/2 per real component).  Budgets are
fixed at P_UL = P_DL = 1 and SNR is defined as P/sigma^2.

Two surfaces are provided: plain complex-array functions for simulation
and tests, and batched graph ops (real/imaginary tensor pairs) used inside
differentiable training rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import DegeneratePilotError, DimensionError, DomainError
from .numerics import Rng

__all__ = [
    "P_UL",
    "P_DL",
    "PilotSet",
    "NoiseModel",
    "uplink_receive",
    "downlink_receive",
    "project_power",
    "normalize_pilot_values",
    "snr_to_sigma",
    "uplink_receive_graph",
    "downlink_receive_graph",
]

P_UL = 1.0
P_DL = 1.0


@dataclass(frozen=True, eq=False)
class PilotSet:
    """Uplink pilot row (L_ul,) and downlink pilot matrix (M, L_dl) with
    their power budgets."""

    x_ul: np.ndarray
    x_dl: np.ndarray
    p_ul: float = P_UL
    p_dl: float = P_DL


@dataclass(frozen=True)
class NoiseModel:
    """AWGN with complex-entry variance ``sigma2`` (0 means noiseless,
    used by exactness tests)."""

    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise DomainError("noise variance must be non-negative")


def snr_to_sigma(snr_db: float, p_tx: float) -> float:
    """Noise variance giving the requested SNR = p_tx / sigma^2."""
    if p_tx <= 0:
        raise DomainError("transmit power must be positive")
    return p_tx / (10.0 ** (snr_db / 10.0))


def uplink_receive(h_ul: np.ndarray, x_ul: np.ndarray, noise: NoiseModel, rng: Rng) -> np.ndarray:
    """BS-side observation Y = h x + N of shape (M, L_ul)."""
    h = np.asarray(h_ul, dtype=np.complex128).reshape(-1)
    x = np.asarray(x_ul, dtype=np.complex128)
    if x.ndim != 1:
        raise DimensionError(f"uplink pilot must be a vector, got shape {x.shape}")
    y = np.outer(h, x)
    if noise.sigma2 > 0:
        y = y + rng.complex_normal(y.shape, var=noise.sigma2)
    return y


def downlink_receive(h_dl: np.ndarray, x_dl: np.ndarray, noise: NoiseModel, rng: Rng) -> np.ndarray:
    """User-side observation y = h^H X + n of shape (L_dl,)."""
    h = np.asarray(h_dl, dtype=np.complex128).reshape(-1)
    x = np.asarray(x_dl, dtype=np.complex128)
    if x.ndim != 2 or x.shape[0] != h.shape[0]:
        raise DimensionError(f"pilot matrix {x.shape} incompatible with channel length {h.shape[0]}")
    y = np.conj(h) @ x
    if noise.sigma2 > 0:
        y = y + rng.complex_normal(y.shape, var=noise.sigma2)
    return y


def project_power(pilots: PilotSet) -> PilotSet:
    """Rescale each uplink entry and each downlink column onto its power
    budget, preserving directions.  Idempotent; zero entries are an error."""
    x_ul = np.asarray(pilots.x_ul, dtype=np.complex128)
    x_dl = np.asarray(pilots.x_dl, dtype=np.complex128)
    amp = np.abs(x_ul)
    if np.any(amp == 0):
        raise DegeneratePilotError("uplink pilot has a zero entry; reinitialize")
    col = np.linalg.norm(x_dl, axis=0)
    if np.any(col == 0):
        raise DegeneratePilotError("downlink pilot has a zero column; reinitialize")
    return replace(
        pilots,
        x_ul=x_ul * (np.sqrt(pilots.p_ul) / amp),
        x_dl=x_dl * (np.sqrt(pilots.p_dl) / col),
    )


def normalize_pilot_values(re: np.ndarray, im: np.ndarray, budget: float, per_entry: bool) -> None:
    """In-place power projection on a real/imaginary array pair: per entry
    (uplink row) or per column (downlink matrix).  Used after each
    optimizer step on the raw parameter buffers."""
    if per_entry:
        norm = np.hypot(re, im)
    else:
        norm = np.sqrt(np.sum(re * re + im * im, axis=0))
    if np.any(norm == 0):
        raise DegeneratePilotError("pilot entry/column collapsed to zero during training")
    scale = np.sqrt(budget) / norm
    re *= scale
    im *= scale


def uplink_receive_graph(
    h: np.ndarray,
    x_re: T.Tensor,
    x_im: T.Tensor,
    noise: np.ndarray | None,
) -> tuple[T.Tensor, T.Tensor]:
    """Differentiable batched uplink observation.

    ``h``: (N, M) complex constants for one slot; ``x_re/x_im``: (L,)
    trainable pilot parts; ``noise``: (N, L, M) complex or None.  Returns
    (N, L, M) real/imag tensors laid out so that reshaping to (N, L*M)
    matches the column-major stacking of the M x L observation matrix.
    """
    n = h.shape[0]
    # named so graph audits can prove the estimator never sees these directly
    hr = T.Tensor(np.ascontiguousarray(h.real).reshape(n, 1, -1), name="channel.ul.re")
    hi = T.Tensor(np.ascontiguousarray(h.imag).reshape(n, 1, -1), name="channel.ul.im")
    xr = x_re.reshape((1, -1, 1))
    xi = x_im.reshape((1, -1, 1))
    y_re = T.sub(T.mul(xr, hr), T.mul(xi, hi))
    y_im = T.add(T.mul(xr, hi), T.mul(xi, hr))
    if noise is not None:
        y_re = T.add(y_re, T.Tensor(noise.real))
        y_im = T.add(y_im, T.Tensor(noise.imag))
    return y_re, y_im


def downlink_receive_graph(
    h: np.ndarray,
    x_re: T.Tensor,
    x_im: T.Tensor,
    noise: np.ndarray | None,
) -> tuple[T.Tensor, T.Tensor]:
    """Differentiable batched downlink observation y = h^H X + n.

    ``h``: (N, M) complex constants; ``x_re/x_im``: (M, L_dl) trainable
    pilot parts; ``noise``: (N, L_dl) complex or None.  Returns (N, L_dl)
    real/imag tensors.
    """
    hr = T.Tensor(np.ascontiguousarray(h.real), name="channel.dl.re")
    hi = T.Tensor(np.ascontiguousarray(h.imag), name="channel.dl.im")
    y_re = T.add(T.matmul(hr, x_re), T.matmul(hi, x_im))
    y_im = T.sub(T.matmul(hr, x_im), T.matmul(hi, x_re))
    if noise is not None:
        y_re = T.add(y_re, T.Tensor(noise.real))
        y_im = T.add(y_im, T.Tensor(noise.imag))
    return y_re, y_im
