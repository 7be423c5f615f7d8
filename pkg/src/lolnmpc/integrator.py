"""Fixed-step RK4 with input held constant over the step."""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import NonFiniteState
from .model import QuadModel

OdeFunction = Callable[[NDArray, NDArray], NDArray]

_CS_STEP = 1e-30


def _renormalize(y: NDArray, quat: slice | None) -> NDArray:
    if quat is not None:
        q = y[quat]
        n = np.linalg.norm(q)
        y[quat] = q / n if q[0] >= 0 else -q / n
    return y


def _rk4(f: OdeFunction, x: NDArray, u: NDArray, dt: float, substeps: int, check: bool) -> NDArray:
    h = dt / substeps
    y = x
    for _ in range(substeps):
        k1 = f(y, u)
        k2 = f(y + 0.5 * h * k1, u)
        k3 = f(y + 0.5 * h * k2, u)
        k4 = f(y + h * k3, u)
        if check and not all(np.all(np.isfinite(k)) for k in (k1, k2, k3, k4)):
            raise NonFiniteState("non-finite derivative inside RK4 stage")
        y = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def _quat_slice(f, quat):
    if quat is None and isinstance(f, QuadModel):
        return slice(3, 7)
    return quat


def rk4_step(f: OdeFunction, x: ArrayLike, u: ArrayLike, dt: float, substeps: int = 1,
             quat: slice | None = None, renormalize: bool = True) -> NDArray[np.float64]:
    """Advance ``x`` by ``dt``.

    ``quat`` names the quaternion block to renormalize afterwards; a
    :class:`QuadModel` declares its own and runs on the compiled kernels.
    ``renormalize=False`` returns the raw RK4 result.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if isinstance(f, QuadModel):
        y = f.step(x, u, dt, substeps) if renormalize else f.step_raw(x, u, dt, substeps)
    else:
        y = _rk4(f, x, u, dt, substeps, check=True)
        if renormalize:
            y = _renormalize(y, quat)
    if not np.all(np.isfinite(y)):
        raise NonFiniteState("RK4 step produced non-finite state")
    return y


def rk4_step_with_sensitivities(f: OdeFunction, x: ArrayLike, u: ArrayLike, dt: float,
                                substeps: int = 1, quat: slice | None = None):
    """RK4 step and its Jacobians ``A = dx+/dx``, ``B = dx+/du``.

    Derivatives are propagated through the RK4 stages by complex-step
    differentiation, so ``f`` must accept complex arrays and be built from
    analytic operations (no ``abs``, comparisons or clipping on the state).
    Results agree with the exact stage derivatives to rounding error. The
    quaternion block is renormalized after the Jacobians are extracted.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    quat = _quat_slice(f, quat)
    if isinstance(f, QuadModel):
        y, A, B = f.step_sens(x, u, dt, substeps)
    else:
        n, m = x.size, u.size
        y = _rk4(f, x, u, dt, substeps, check=True)
        A = np.empty((n, n))
        B = np.empty((n, m))
        xc = x.astype(complex)
        uc = u.astype(complex)
        for j in range(n):
            xp = xc.copy()
            xp[j] += 1j * _CS_STEP
            A[:, j] = _rk4(f, xp, uc, dt, substeps, check=False).imag / _CS_STEP
        for j in range(m):
            up = uc.copy()
            up[j] += 1j * _CS_STEP
            B[:, j] = _rk4(f, xc, up, dt, substeps, check=False).imag / _CS_STEP
        y = _renormalize(y, quat)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NonFiniteState("RK4 sensitivities are non-finite")
    return y, A, B
