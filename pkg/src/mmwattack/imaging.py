"""Image reconstructors and their vector-Jacobian products.

Five variants share one interface:

``BPA``
    Back-projection, ``alpha = H^H y``.
``MFA``
    Matched filtering as an FFT cross-correlation with the plane point
    response; identical to BPA whenever the look and voxel pitches agree.
``RMA``
    Single-frequency range migration: 2-D FFT over the aperture, the
    dispersion-relation phase filter, inverse FFT.
``CSA``
    l1-regularised inversion solved by ISTA.
``RMIST``
    A fixed-depth unrolled shrinkage recursion with per-iteration step and
    threshold schedules.

Derivatives follow the Wirtinger convention.  For a real-valued loss ``f``
of the image, ``vjp`` maps ``2 df/d conj(alpha)`` to ``2 df/d conj(y)``;
equivalently it is the adjoint of the real-linear Jacobian under the inner
product ``Re <a, b>``.  For the linear variants it is the Hermitian adjoint.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.signal import fftconvolve

from .core import (
    ConfigurationError,
    MeasurementVector,
    NumericError,
    ReflectivityImage,
    ShapeError,
)
from .forward import PropagationOperator

__all__ = [
    "VARIANTS",
    "LINEAR_VARIANTS",
    "ReconstructorSpec",
    "Reconstruction",
    "soft_threshold",
    "reconstruct",
    "reconstruct_values",
    "vjp",
    "jvp",
    "default_step",
    "check_grids",
]

VARIANTS = ("BPA", "RMA", "MFA", "CSA", "RMIST")
LINEAR_VARIANTS = ("BPA", "RMA", "MFA")


@dataclass(frozen=True)
class ReconstructorSpec:
    """Reconstructor choice and hyperparameters.

    ``mu`` and ``theta`` may be scalars or per-iteration sequences (RMIST).
    ``mu=None`` selects ``0.9 / ||H||^2``.  For CSA the threshold is
    ``mu * lam_reg``; for RMIST ``theta=None`` falls back to the same rule.
    """

    variant: str = "BPA"
    lam_reg: float = 0.0
    mu: float | Sequence[float] | None = None
    theta: float | Sequence[float] | None = None
    iters: int | None = None
    evanescent_cutoff: bool = True
    pad_factor: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown reconstructor {self.variant!r}; choose from {VARIANTS}")
        if self.lam_reg < 0:
            raise ConfigurationError("lam_reg must be non-negative")
        if self.iters is not None and self.iters < 1:
            raise ConfigurationError("iters must be >= 1")
        if self.mu is not None and np.any(np.asarray(self.mu, dtype=float) <= 0):
            raise ConfigurationError("mu must be positive")
        if self.theta is not None and np.any(np.asarray(self.theta, dtype=float) < 0):
            raise ConfigurationError("theta must be non-negative")
        if self.pad_factor < 1:
            raise ConfigurationError("pad_factor must be >= 1")

    @property
    def is_linear(self) -> bool:
        return self.variant in LINEAR_VARIANTS

    @property
    def n_iters(self) -> int:
        if self.iters is not None:
            return int(self.iters)
        return 50 if self.variant == "CSA" else 10


@dataclass(frozen=True, eq=False)
class Reconstruction:
    image: ReflectivityImage
    spec: ReconstructorSpec
    diagnostics: tuple = ()


def soft_threshold(x, theta):
    """Complex soft threshold ``x * max(|x| - theta, 0) / |x|``."""
    x = np.asarray(x, dtype=np.complex128)
    mag = np.abs(x)
    scale = np.maximum(mag - theta, 0.0) / np.where(mag > 0, mag, 1.0)
    out = x * scale
    return out if out.ndim else complex(out)


def _soft_threshold_tangent(z, dz, theta):
    """Real-linear derivative of the soft threshold at ``z`` applied to ``dz``.

    In the frame rotated by ``u = z / |z|`` the derivative is
    ``diag(1, 1 - theta / |z|)``; it is symmetric, so the same map serves
    as its own adjoint.  Zero inside the dead zone and at the kink.
    """
    mag = np.abs(z)
    active = mag > theta
    u = np.where(active, z / np.where(active, mag, 1.0), 0.0)
    proj = np.conj(u) * dz
    shrink = np.where(active, 1.0 - theta / np.where(active, mag, 1.0), 0.0)
    return u * (proj.real + 1j * shrink * proj.imag)


def _as_values(x, size, what):
    arr = np.asarray(getattr(x, "values", x), dtype=np.complex128).reshape(-1)
    if arr.size != size:
        raise ShapeError(f"{what} has {arr.size} entries, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite values")
    return arr


# -- shift-invariant kernels ---------------------------------------------------

def _require_pitch_match(H: PropagationOperator, variant: str):
    ap, im = H.aperture, H.image
    if not (np.isclose(ap.dx, im.dvx) and np.isclose(ap.dy, im.dvy)):
        raise ConfigurationError(f"{variant} needs equal look and voxel pitches")


def _require_coincident(H: PropagationOperator, variant: str):
    _require_pitch_match(H, variant)
    ap, im = H.aperture, H.image
    same_counts = (ap.nx, ap.ny) == (im.nvx, im.nvy)
    same_origin = np.allclose(ap.origin, im.origin, rtol=0, atol=1e-9 * max(ap.dx, ap.dy))
    if not (same_counts and same_origin):
        raise ConfigurationError(f"{variant} needs coincident aperture and image grids")


def _point_response(H: PropagationOperator) -> np.ndarray:
    """``h(v) = H[l, n]`` tabulated over index offsets ``v = (l - n)`` per axis.

    Returned array has shape ``(ny + nvy - 1, nx + nvx - 1)``; entry
    ``[vy + nvy - 1, vx + nvx - 1]`` holds offset ``(vx, vy)``.
    """
    return _point_response_cached(H.aperture, H.image, H.cfg)


@lru_cache(maxsize=32)
def _point_response_cached(ap, im, cfg):
    vx = np.arange(-(im.nvx - 1), ap.nx)
    vy = np.arange(-(im.nvy - 1), ap.ny)
    ux = ap.origin[0] - im.origin[0] + vx * ap.dx
    uy = ap.origin[1] - im.origin[1] + vy * ap.dy
    UX, UY = np.meshgrid(ux, uy)
    r_t = np.sqrt((UX + ap.tx_offset[0]) ** 2 + (UY + ap.tx_offset[1]) ** 2 + im.z0**2)
    r_r = np.sqrt((UX + ap.rx_offset[0]) ** 2 + (UY + ap.rx_offset[1]) ** 2 + im.z0**2)
    r0 = 0.5 * (r_t + r_r)
    h = np.exp(2j * cfg.k * r0) / r0**2
    h.setflags(write=False)
    return h


def _mfa(H, y):
    ap, im = H.aperture, H.image
    h = _point_response(H)
    # alpha[m] = sum_i conj(h[i - m]) y[i]: a convolution with the flipped kernel.
    full = fftconvolve(y.reshape(ap.shape), np.conj(h[::-1, ::-1]), mode="full")
    return full[ap.ny - 1 : ap.ny - 1 + im.nvy, ap.nx - 1 : ap.nx - 1 + im.nvx].reshape(-1)


def _mfa_adjoint(H, c):
    ap, im = H.aperture, H.image
    h = _point_response(H)
    # y[i] = sum_m h[i - m] c[m]
    full = fftconvolve(c.reshape(im.shape), h, mode="full")
    return full[im.nvy - 1 : im.nvy - 1 + ap.ny, im.nvx - 1 : im.nvx - 1 + ap.nx].reshape(-1)


def _rma_filter(H, spec) -> np.ndarray:
    return _rma_filter_cached(H.aperture, H.image, H.cfg, spec.pad_factor, spec.evanescent_cutoff)


@lru_cache(maxsize=32)
def _rma_filter_cached(ap, im, cfg, pad, cutoff):
    px, py = ap.nx * pad, ap.ny * pad
    kx = 2 * np.pi * np.fft.fftfreq(px, ap.dx)
    ky = 2 * np.pi * np.fft.fftfreq(py, ap.dy)
    KX, KY = np.meshgrid(kx, ky)
    kz2 = 4 * cfg.k**2 - KX**2 - KY**2
    prop = kz2 >= 0
    kz = np.sqrt(np.abs(kz2))
    # The point response transforms to ~exp(+j kz z0) under numpy's FFT sign,
    # so focusing applies the conjugate phase.
    filt = np.where(prop, np.exp(-1j * kz * im.z0), 0.0 if cutoff else np.exp(-kz * im.z0))
    filt.setflags(write=False)
    return filt


def _rma(H, spec, y, adjoint=False):
    ap = H.aperture
    filt = _rma_filter(H, spec)
    if adjoint:
        filt = np.conj(filt)
    py, px = filt.shape
    padded = np.zeros((py, px), dtype=np.complex128)
    padded[: ap.ny, : ap.nx] = y.reshape(ap.shape)
    out = np.fft.ifft2(np.fft.fft2(padded, norm="ortho") * filt, norm="ortho")
    return out[: ap.ny, : ap.nx].reshape(-1)


# -- iterative variants ----------------------------------------------------------

@lru_cache(maxsize=32)
def _norm_cached(H: PropagationOperator) -> float:
    return H.norm_estimate()


def default_step(H: PropagationOperator) -> float:
    """``0.9 / ||H||^2`` with ``||H||`` from seeded power iteration."""
    return 0.9 / _norm_cached(H) ** 2


def _schedules(spec: ReconstructorSpec, H):
    K = spec.n_iters
    mu = default_step(H) if spec.mu is None else spec.mu
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (K,)) if np.ndim(mu) == 0 else np.asarray(mu, float)
    if spec.variant == "CSA" or spec.theta is None:
        theta = mu * spec.lam_reg
    else:
        theta = np.asarray(spec.theta, dtype=float)
        theta = np.broadcast_to(theta, (K,)) if theta.ndim == 0 else theta
    if mu.shape != (K,) or theta.shape != (K,):
        raise ConfigurationError(f"step and threshold schedules need {K} entries")
    return mu, theta


def _unrolled_forward(spec, H, y, keep=False):
    mu, theta = _schedules(spec, H)
    alpha = np.zeros(H.image.N, dtype=np.complex128)
    hty = H.rmatvec(y)
    zs, objective = [], []
    for k in range(spec.n_iters):
        z = alpha - mu[k] * (H.rmatvec(H.matvec(alpha)) - hty)
        alpha = soft_threshold(z, theta[k])
        if keep:
            zs.append(z)
        resid = y - H.matvec(alpha)
        objective.append(0.5 * float(np.vdot(resid, resid).real) + spec.lam_reg * float(np.sum(np.abs(alpha))))
    return alpha, zs, (mu, theta), objective


def _gram_step(H, mu, v):
    return v - mu * H.rmatvec(H.matvec(v))


# -- public API ---------------------------------------------------------------------

def check_grids(spec: ReconstructorSpec, H: PropagationOperator) -> None:
    """Raise ConfigurationError if ``spec`` cannot run on H's grids."""
    if spec.variant == "MFA":
        _require_pitch_match(H, "MFA")
    elif spec.variant == "RMA":
        _require_coincident(H, "RMA")


_check = check_grids


def reconstruct(spec: ReconstructorSpec, H: PropagationOperator, y) -> Reconstruction:
    """Reconstruct the reflectivity image from measurements ``y``."""
    _check(spec, H)
    if isinstance(y, MeasurementVector) and y.grid != H.aperture:
        raise ShapeError("measurements live on a different aperture")
    v = _as_values(y, H.aperture.L, "measurement")
    diagnostics = ()
    if spec.variant == "BPA":
        alpha = H.rmatvec(v)
    elif spec.variant == "MFA":
        alpha = _mfa(H, v)
    elif spec.variant == "RMA":
        alpha = _rma(H, spec, v)
    else:
        alpha, _, _, objective = _unrolled_forward(spec, H, v)
        diagnostics = tuple(objective)
    if not np.all(np.isfinite(alpha)):
        raise NumericError(f"{spec.variant} produced non-finite values")
    return Reconstruction(ReflectivityImage(H.image, alpha), spec, diagnostics)


def reconstruct_values(spec, H, y: np.ndarray) -> np.ndarray:
    """Array-in, array-out form of :func:`reconstruct` (no diagnostics)."""
    if spec.variant == "BPA":
        return H.rmatvec(y)
    if spec.variant == "MFA":
        return _mfa(H, y)
    if spec.variant == "RMA":
        return _rma(H, spec, y)
    return _unrolled_forward(spec, H, y)[0]


def vjp(spec: ReconstructorSpec, H: PropagationOperator, y, cotangent) -> MeasurementVector:
    """Pull an image-space cotangent back to measurement space."""
    _check(spec, H)
    v = _as_values(y, H.aperture.L, "measurement")
    c = _as_values(cotangent, H.image.N, "cotangent")
    if spec.variant == "BPA":
        out = H.matvec(c)
    elif spec.variant == "MFA":
        out = _mfa_adjoint(H, c)
    elif spec.variant == "RMA":
        out = _rma(H, spec, c, adjoint=True)
    else:
        _, zs, (mu, theta), _ = _unrolled_forward(spec, H, v, keep=True)
        g = c
        z_bar_sum = np.zeros(H.image.N, dtype=np.complex128)
        for k in reversed(range(spec.n_iters)):
            z_bar = _soft_threshold_tangent(zs[k], g, theta[k])
            z_bar_sum += mu[k] * z_bar
            g = _gram_step(H, mu[k], z_bar)
        out = H.matvec(z_bar_sum)
    return MeasurementVector(H.aperture, out)


def jvp(spec: ReconstructorSpec, H: PropagationOperator, y, tangent) -> ReflectivityImage:
    """Push a measurement-space tangent forward (directional derivative)."""
    _check(spec, H)
    v = _as_values(y, H.aperture.L, "measurement")
    t = _as_values(tangent, H.aperture.L, "tangent")
    if spec.is_linear:
        return ReflectivityImage(H.image, reconstruct_values(spec, H, t))
    _, zs, (mu, theta), _ = _unrolled_forward(spec, H, v, keep=True)
    hdt = H.rmatvec(t)
    d_alpha = np.zeros(H.image.N, dtype=np.complex128)
    for k in range(spec.n_iters):
        dz = _gram_step(H, mu[k], d_alpha) + mu[k] * hdt
        d_alpha = _soft_threshold_tangent(zs[k], dz, theta[k])
    return ReflectivityImage(H.image, d_alpha)
