"""Krylov-subspace action of exp(-i X t) on a vector.

Lanczos three-term recurrence for hermitian X, Arnoldi with modified
Gram-Schmidt otherwise (X may carry an anti-hermitian decay part).  One
factorization per sub-step; the small exponential is re-evaluated cheaply
when the controller shrinks the sub-step, so error control costs almost
nothing beyond the matvecs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp


class KrylovError(RuntimeError):
    """Propagation could not meet its error target."""


_BREAKDOWN = 1e-13   # residual norm (relative to the vector scale) ending recursion
_MIN_STEP = 1e-30


class _HermitianFactorization:
    """Lanczos basis plus eigendecomposition of the tridiagonal projection."""

    def __init__(self, matvec, v: np.ndarray, m: int):
        dim = v.size
        m = min(m, dim)
        V = np.empty((m, dim), dtype=np.complex128)
        alpha = np.empty(m)
        beta = np.empty(m)
        V[0] = v
        k = m
        self.exact = False
        for j in range(m):
            w = matvec(V[j])
            a = np.vdot(V[j], w).real
            alpha[j] = a
            w -= a * V[j]
            if j > 0:
                w -= beta[j - 1] * V[j - 1]
            b = float(np.linalg.norm(w))
            beta[j] = b
            if b < _BREAKDOWN * max(1.0, abs(a)):
                # invariant subspace: the projected exponential is exact
                k = j + 1
                self.exact = True
                break
            if j + 1 < m:
                V[j + 1] = w / b
        self.V = V[:k]
        self.beta_last = beta[k - 1]
        theta, Q = la.eigh_tridiagonal(alpha[:k], beta[:k - 1])
        self.theta = theta
        self.Q = Q
        self.q0 = Q[0, :].copy()

    def small_exp(self, tau: float) -> np.ndarray:
        """exp(-i tau T) e1 in the Krylov basis."""
        return self.Q @ (np.exp(-1j * tau * self.theta) * self.q0)

    def error_estimate(self, u: np.ndarray) -> float:
        if self.exact:
            return 0.0
        return self.beta_last * abs(u[-1])

    def assemble(self, u: np.ndarray) -> np.ndarray:
        return u @ self.V


class _GeneralFactorization:
    """Arnoldi basis with the projected matrix kept dense."""

    def __init__(self, matvec, v: np.ndarray, m: int):
        dim = v.size
        m = min(m, dim)
        V = np.empty((m, dim), dtype=np.complex128)
        Hm = np.zeros((m, m), dtype=np.complex128)
        V[0] = v
        k = m
        self.exact = False
        self.beta_last = 0.0
        for j in range(m):
            w = matvec(V[j])
            for i in range(j + 1):
                h = np.vdot(V[i], w)
                Hm[i, j] = h
                w -= h * V[i]
            b = float(np.linalg.norm(w))
            scale = max(1.0, float(np.abs(Hm[: j + 1, j]).max()))
            if b < _BREAKDOWN * scale:
                k = j + 1
                self.exact = True
                break
            if j + 1 < m:
                Hm[j + 1, j] = b
                V[j + 1] = w / b
            else:
                self.beta_last = b
        self.V = V[:k]
        self.Hm = Hm[:k, :k]

    def small_exp(self, tau: float) -> np.ndarray:
        e1 = np.zeros(self.Hm.shape[0], dtype=np.complex128)
        e1[0] = 1.0
        return la.expm(-1j * tau * self.Hm) @ e1

    def error_estimate(self, u: np.ndarray) -> float:
        if self.exact:
            return 0.0
        return self.beta_last * abs(u[-1])

    def assemble(self, u: np.ndarray) -> np.ndarray:
        return u @ self.V


class ExpmKrylov:
    """Adaptive application of exp(-i X dt) to state vectors.

    Parameters
    ----------
    x : sparse matrix, or callable implementing the matvec.
    dim : required when `x` is a callable.
    m : Krylov dimension per sub-step.
    tol : error budget per full `step` call, distributed over sub-steps.
    hermitian : selects Lanczos vs Arnoldi.
    """

    def __init__(self, x, dim: int | None = None, m: int = 30, tol: float = 1e-9,
                 hermitian: bool = True):
        if callable(x):
            if dim is None:
                raise ValueError("dim is required for a callable matvec")
            self._matvec = x
            self.dim = dim
        else:
            mat = sp.csr_matrix(x)
            self._matvec = mat.dot
            self.dim = mat.shape[0]
        if m < 4:
            raise ValueError("krylov dimension must be >= 4")
        self.m = m
        self.tol = tol
        self.hermitian = hermitian
        self._tau_hint: float | None = None

    def _factorize(self, v):
        if self.hermitian:
            return _HermitianFactorization(self._matvec, v, self.m)
        return _GeneralFactorization(self._matvec, v, self.m)

    def step(self, v: np.ndarray, dt: float) -> np.ndarray:
        """Return exp(-i X dt) v.  Linear in v; v need not be normalized."""
        if dt == 0.0:
            return v.copy()
        if dt < 0.0:
            raise ValueError("dt must be >= 0; negate X for reversed evolution")
        psi = np.asarray(v, dtype=np.complex128).copy()
        remaining = dt
        tau = min(self._tau_hint or dt, dt)
        while remaining > 0.0:
            # each factorization starts from a unit vector; the running norm
            # is carried outside (the anti-hermitian part shrinks it)
            nrm = float(np.linalg.norm(psi))
            if nrm == 0.0:
                return np.zeros_like(psi)
            fac = self._factorize(psi / nrm)
            if fac.exact:
                psi = fac.assemble(fac.small_exp(remaining)) * nrm
                remaining = 0.0
                break
            tau = min(tau, remaining)
            prev_err, prev_u = np.inf, None
            floored = False
            while True:
                u = fac.small_exp(tau)
                err = fac.error_estimate(u)
                budget = self.tol * (tau / dt)
                if err <= budget:
                    break
                # in exact arithmetic halving tau shrinks the estimate by
                # 2^(k-1) >= 8; anything less means it sits on its roundoff
                # floor and no sub-step can push it lower.  Take the
                # pre-halving step (equally floored, twice the progress; in
                # particular it can consume all of `remaining`) as long as
                # the floor is within the per-call tolerance.
                if err > 0.25 * prev_err and prev_err <= self.tol:
                    u, err, tau = prev_u, prev_err, tau * 2.0
                    floored = True
                    break
                if tau <= _MIN_STEP:
                    raise KrylovError(
                        f"sub-step collapsed below {_MIN_STEP} "
                        f"(error estimate {err:.3e})")
                prev_err, prev_u = err, u
                tau *= 0.5
            psi = fac.assemble(u) * nrm
            remaining -= tau
            if floored:
                tau *= 2.0   # roundoff-floor acceptance means over-resolved
            elif err < 0.1 * budget:
                tau *= 1.5
        self._tau_hint = min(tau, dt)
        return psi
