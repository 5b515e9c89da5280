"""Branch admittances, Ybus/Yf/Yt and the tap derivatives of ``Ybus @ gamma``."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .case_model import InternalModel


def diag(v) -> sp.csr_matrix:
    """Sparse diagonal matrix ``[v]``."""
    v = np.asarray(v)
    n = len(v)
    idx = np.arange(n + 1)
    return sp.csr_matrix((v, idx[:n], idx), shape=(n, n))


def scale_rows(B, v) -> sp.csr_matrix:
    """``[v] B`` without forming the diagonal matrix."""
    out = sp.csr_matrix(B, dtype=np.result_type(B.dtype, np.asarray(v).dtype), copy=True)
    out.data *= np.repeat(v, np.diff(out.indptr))
    return out


def scale_cols(B, v) -> sp.csr_matrix:
    """``B [v]`` without forming the diagonal matrix."""
    out = sp.csr_matrix(B, dtype=np.result_type(B.dtype, np.asarray(v).dtype), copy=True)
    out.data *= np.asarray(v)[out.indices]
    return out


@dataclass(frozen=True)
class TapState:
    tau: np.ndarray
    theta: np.ndarray  # radians

    def __post_init__(self):
        if np.any(np.asarray(self.tau) <= 0):
            raise ValueError("tap ratios must be strictly positive")

    @classmethod
    def nominal(cls, m: InternalModel) -> "TapState":
        """Taps as stored in the case."""
        return cls(m.tau0.copy(), m.theta0.copy())

    def with_adjustable(self, m: InternalModel, tau=None, theta=None) -> "TapState":
        t, th = self.tau.copy(), self.theta.copy()
        if tau is not None:
            t[m.adj] = tau
        if theta is not None:
            th[m.adj] = theta
        return TapState(t, th)


@dataclass(frozen=True)
class BranchAdmittances:
    Yff: np.ndarray
    Yft: np.ndarray
    Ytf: np.ndarray
    Ytt: np.ndarray


@dataclass(frozen=True)
class SystemMatrices:
    Ybus: sp.csr_matrix
    Yf: sp.csr_matrix
    Yt: sp.csr_matrix


def branch_admittances(m: InternalModel, t: TapState) -> BranchAdmittances:
    """Two-port admittances of every branch for the given taps.

    The complex ratio ``tau * exp(j*theta)`` sits at the from end, so
    ``Yft = -ys * exp(j*theta) / tau`` and ``Ytf = -ys * exp(-j*theta) / tau``.
    """
    tau = np.asarray(t.tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tap ratios must be strictly positive")
    ytt = m.ys + 0.5j * m.bc
    return BranchAdmittances(
        Yff=ytt / tau ** 2,
        Yft=-m.ys / (tau * np.exp(-1j * t.theta)),
        Ytf=-m.ys / (tau * np.exp(1j * t.theta)),
        Ytt=ytt,
    )


def build_system(m: InternalModel, ba: BranchAdmittances) -> SystemMatrices:
    """``Ybus``, ``Yf`` and ``Yt`` assembled directly from the branch two-port entries.

    Equivalent to ``Yf = [Yff] Cf + [Yft] Ct``, ``Yt = [Ytf] Cf + [Ytt] Ct`` and
    ``Ybus = Cf^T Yf + Ct^T Yt + [Ysh]``.
    """
    nl, nb = m.nl, m.nb
    f, t = m.f, m.t
    k = np.arange(nl)
    shape = (nl, nb)
    Yf = sp.csr_matrix((np.r_[ba.Yff, ba.Yft], (np.r_[k, k], np.r_[f, t])), shape=shape)
    Yt = sp.csr_matrix((np.r_[ba.Ytf, ba.Ytt], (np.r_[k, k], np.r_[f, t])), shape=shape)
    b = np.arange(nb)
    Ybus = sp.csr_matrix((np.r_[ba.Yff, ba.Yft, ba.Ytf, ba.Ytt, m.Ysh],
                          (np.r_[f, f, t, t, b], np.r_[f, t, f, t, b])), shape=(nb, nb))
    Ybus.eliminate_zeros()
    return SystemMatrices(Ybus, Yf, Yt)


def endpoint_columns(m: InternalModel, idx, from_vals, to_vals) -> sp.csr_matrix:
    """``nb x len(idx)`` matrix holding ``from_vals`` at each listed branch's
    from bus and ``to_vals`` at its to bus."""
    cols = np.arange(len(idx))
    return sp.csr_matrix((np.r_[from_vals, to_vals], (np.r_[m.f[idx], m.t[idx]], np.r_[cols, cols])),
                         shape=(m.nb, len(idx)))


def dYbusGamma_dtau(m: InternalModel, ba: BranchAdmittances, t: TapState, gamma, idx=None) -> sp.csr_matrix:
    """``d(Ybus @ gamma)/d tau`` (``nb x nl``, or only the branches in ``idx``).

    Column ``k`` equals ``Cf^T [dYff/dtau Cf gamma + dYft/dtau Ct gamma] + Ct^T [dYtf/dtau Cf gamma]``.
    """
    idx = np.arange(m.nl) if idx is None else np.asarray(idx)
    gamma = np.asarray(gamma)
    gf, gt = gamma[m.f[idx]], gamma[m.t[idx]]
    inv_tau = 1.0 / np.asarray(t.tau)[idx]
    return endpoint_columns(m, idx, (-2 * ba.Yff[idx] * gf - ba.Yft[idx] * gt) * inv_tau,
                          -ba.Ytf[idx] * gf * inv_tau)


def dYbusGamma_dtheta(m: InternalModel, ba: BranchAdmittances, gamma, idx=None) -> sp.csr_matrix:
    """``d(Ybus @ gamma)/d theta`` (``nb x nl``, or only the branches in ``idx``)."""
    idx = np.arange(m.nl) if idx is None else np.asarray(idx)
    gamma = np.asarray(gamma)
    return endpoint_columns(m, idx, 1j * ba.Yft[idx] * gamma[m.t[idx]],
                          -1j * ba.Ytf[idx] * gamma[m.f[idx]])


def system_at(m: InternalModel, t: TapState) -> tuple[BranchAdmittances, SystemMatrices]:
    ba = branch_admittances(m, t)
    return ba, build_system(m, ba)


_LAST: "weakref.WeakKeyDictionary[InternalModel, tuple]" = weakref.WeakKeyDictionary()


def cached_system(m: InternalModel, tau, theta) -> tuple[TapState, BranchAdmittances, SystemMatrices]:
    """``system_at`` with a one-entry cache per model, keyed on the tap values.

    Derivative evaluations at one point rebuild the same matrices several
    times; the returned matrices are shared and must not be modified.
    """
    tau = np.asarray(tau, dtype=float)
    theta = np.asarray(theta, dtype=float)
    key = (tau.tobytes(), theta.tobytes())
    hit = _LAST.get(m)
    if hit is not None and hit[0] == key:
        return hit[1]
    t = TapState(tau.copy(), theta.copy())
    ba = branch_admittances(m, t)
    out = (t, ba, build_system(m, ba))
    _LAST[m] = (key, out)
    return out
