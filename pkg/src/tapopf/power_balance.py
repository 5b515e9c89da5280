"""Complex power balance ``G(X) = Sbus + Sd - Cg Sg`` and its derivatives.

First derivatives are returned per variable group; second derivatives are
contracted with a (possibly complex) multiplier vector ``lam`` of length
``nb`` and returned as a 6x6 grid of blocks.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .admittance import SystemMatrices, endpoint_columns, cached_system, dYbusGamma_dtau, dYbusGamma_dtheta, diag
from .case_model import InternalModel
from .variables import DerivativeBundle, HessianBlocks, Layout, VariableVector

__all__ = ["bus_injections", "mismatch", "d_mismatch", "d2_mismatch", "d2Sbus_dV2",
           "VariableVector", "DerivativeBundle", "HessianBlocks"]


def bus_injections(V, sys: SystemMatrices) -> np.ndarray:
    V = np.asarray(V, dtype=complex)
    return V * np.conj(sys.Ybus @ V)


def _state(x: VariableVector, m: InternalModel):
    return cached_system(m, *x.full_taps(m))


def mismatch(x: VariableVector, m: InternalModel) -> np.ndarray:
    _, _, sys = _state(x, m)
    Sg = x.Pg + 1j * x.Qg
    return bus_injections(x.V, sys) + m.Sd - m.Cg @ Sg


def dSbus_dV(Ybus, V):
    """Polar voltage derivatives of ``Sbus`` (angle block, magnitude block)."""
    Ibus = Ybus @ V
    dV = diag(V)
    dVn = diag(V / np.abs(V))
    dS_dVa = 1j * dV @ (diag(Ibus) - Ybus @ dV).conj()
    dS_dVm = dV @ (Ybus @ dVn).conj() + diag(Ibus).conj() @ dVn
    return dS_dVa.tocsr(), dS_dVm.tocsr()


def d_mismatch(x: VariableVector, m: InternalModel) -> DerivativeBundle:
    t, ba, sys = _state(x, m)
    V = x.V
    dVa, dVm = dSbus_dV(sys.Ybus, V)
    # tau and theta are real, so d(conj(Ybus V))/dp = conj(d(Ybus V)/dp)
    dV = diag(V)
    dTau = dV @ dYbusGamma_dtau(m, ba, t, V, m.adj).conj()
    dTheta = dV @ dYbusGamma_dtheta(m, ba, V, m.adj).conj()
    return DerivativeBundle(
        dVa, dVm,
        -m.Cg.astype(complex),
        -1j * m.Cg,
        dTau.tocsr(),
        dTheta.tocsr(),
    )


def d2Sbus_dV2(Ybus, V, lam):
    """Voltage-voltage blocks of ``d2(lam^T Sbus)``: ``Gaa, Gav, Gva, Gvv``."""
    nb = len(V)
    Ibus = Ybus @ V
    diaglam = diag(lam)
    diagV = diag(V)

    A = diag(lam * V)
    B = Ybus @ diagV
    C = A @ B.conj()
    D = Ybus.conj().T @ diagV
    E = diagV.conj() @ (D @ diaglam - diag(D @ lam))
    F = C - A @ diag(Ibus.conj())
    G = diag(np.ones(nb) / np.abs(V))

    Gaa = E + F
    Gva = 1j * G @ (E - F)
    Gav = Gva.T
    Gvv = G @ (C + C.T) @ G
    return Gaa, Gav, Gva, Gvv


class _Terms:
    """Per-branch vectors shared by the tap-related Hessian blocks."""

    def __init__(self, x: VariableVector, m: InternalModel, lam):
        t, ba, sys = _state(x, m)
        self.sys = sys
        V = x.V
        lam = np.asarray(lam, dtype=complex)
        self.V, self.Vc, self.lam, self.Vm = V, V.conj(), lam, np.abs(V)
        Cf, Ct = m.Cf, m.Ct
        self.Cf, self.Ct = Cf, Ct
        self.CfVc = Cf @ self.Vc
        self.CtVc = Ct @ self.Vc
        self.CfVl = Cf @ (V * lam)     # Cf [V] lam
        self.CtVl = Ct @ (V * lam)
        self.Yffc, self.Yftc, self.Ytfc = ba.Yff.conj(), ba.Yft.conj(), ba.Ytf.conj()
        self.itau = 1.0 / t.tau


def _tap_blocks(s: _Terms, m: InternalModel):
    """Column-form blocks restricted to the adjustable branches.

    Each tap column only touches the branch's two end buses, so the blocks
    are assembled from per-branch from/to values.
    """
    k = m.adj
    CfVc, CtVc, CfVl, CtVl = s.CfVc[k], s.CtVc[k], s.CfVl[k], s.CtVl[k]
    Yffc, Yftc, Ytfc, itau = s.Yffc[k], s.Yftc[k], s.Ytfc[k], s.itau[k]
    iVf, iVt = 1.0 / s.Vm[m.f[k]], 1.0 / s.Vm[m.t[k]]

    # d(Ybus gamma)/dp contracted with conj(V) (A) and with [V] lam (B)
    A_tau = (-2 * CfVc * Yffc - CtVc * Yftc, -CfVc * Ytfc)
    B_tau = (-2 * CfVl * Yffc - CtVl * Ytfc, -CfVl * Yftc)
    A_th = (-1j * CtVc * Yftc, 1j * CfVc * Ytfc)
    B_th = (1j * CtVl * Ytfc, -1j * CfVl * Yftc)

    def angle(A, B, w):
        return endpoint_columns(m, k, 1j * (CfVl * A[0] - CfVc * B[0]) * w,
                              1j * (CtVl * A[1] - CtVc * B[1]) * w)

    def mag(A, B, w):
        return endpoint_columns(m, k, (CfVl * A[0] + CfVc * B[0]) * w * iVf,
                              (CtVl * A[1] + CtVc * B[1]) * w * iVt)

    G_at, G_vt = angle(A_tau, B_tau, itau), mag(A_tau, B_tau, itau)
    G_ah, G_vh = angle(A_th, B_th, 1.0), mag(A_th, B_th, 1.0)

    a = CfVc * CfVl     # lam_f |V_f|^2
    b = CtVc * CfVl     # lam_f V_f conj(V_t)
    c = CfVc * CtVl     # lam_t V_t conj(V_f)
    G_tt = itau ** 2 * (6 * Yffc * a + 2 * Yftc * b + 2 * Ytfc * c)
    G_th = itau * (b * 1j * Yftc + c * -1j * Ytfc)
    G_hh = -b * Yftc - c * Ytfc
    return G_at, G_vt, G_ah, G_vh, G_tt, G_th, G_hh


def _tap_row_blocks(s: _Terms):
    """Row-form blocks (tau/theta rows) from their own expressions; used to
    cross-check the transpose identities."""
    Cf, Ct = s.Cf, s.Ct
    lam_jV = diag(s.lam * 1j * s.V)
    mjVc = diag(-1j * s.Vc)
    lam_V_iVm = diag(s.lam * s.V / s.Vm)
    Vc_iVm = diag(s.Vc / s.Vm)
    itau = diag(s.itau)

    P = (diag(-2 * s.Yffc * s.CfVc) @ Cf + diag(-s.Yftc * s.CtVc) @ Cf
         + diag(-s.Ytfc * s.CfVc) @ Ct)
    Q = (diag(-2 * s.Yffc * s.CfVl) @ Cf + diag(-s.Yftc * s.CfVl) @ Ct
         + diag(-s.Ytfc * s.CtVl) @ Cf)
    Ph = diag(-1j * s.Yftc * s.CtVc) @ Cf + diag(1j * s.Ytfc * s.CfVc) @ Ct
    Qh = diag(-1j * s.Yftc * s.CfVl) @ Ct + diag(1j * s.Ytfc * s.CtVl) @ Cf

    G_ta = itau @ (P @ lam_jV + Q @ mjVc)
    G_tv = itau @ (P @ lam_V_iVm + Q @ Vc_iVm)
    G_ha = Ph @ lam_jV + Qh @ mjVc
    G_hv = Ph @ lam_V_iVm + Qh @ Vc_iVm
    b = s.CtVc * s.CfVl
    c = s.CfVc * s.CtVl
    G_ht = diag(-1j * b * -s.Yftc * s.itau + 1j * c * -s.Ytfc * s.itau)
    return G_ta, G_tv, G_ha, G_hv, G_ht


def _rows(M, idx):
    return sp.csr_matrix(M)[idx, :]


def d2_mismatch(x: VariableVector, m: InternalModel, lam) -> HessianBlocks:
    """Second derivatives of ``lam^T G(X)`` over the full stacked vector.

    ``lam`` may be complex; the result is complex-linear in ``lam``. The
    Pg/Qg rows and columns are structurally zero.
    """
    s = _Terms(x, m, lam)
    Gaa, Gav, Gva, Gvv = d2Sbus_dV2(s.sys.Ybus, s.V, s.lam)
    G_at, G_vt, G_ah, G_vh, G_tt, G_th, G_hh = _tap_blocks(s, m)
    G_th_adj = diag(G_th)
    blocks = {
        ("Va", "Va"): Gaa, ("Va", "Vm"): Gav, ("Vm", "Va"): Gva, ("Vm", "Vm"): Gvv,
        ("Va", "tau"): G_at, ("Va", "theta"): G_ah,
        ("Vm", "tau"): G_vt, ("Vm", "theta"): G_vh,
        ("tau", "Va"): G_at.T, ("tau", "Vm"): G_vt.T,
        ("theta", "Va"): G_ah.T, ("theta", "Vm"): G_vh.T,
        ("tau", "tau"): diag(G_tt), ("tau", "theta"): G_th_adj,
        ("theta", "tau"): G_th_adj.T, ("theta", "theta"): diag(G_hh),
    }
    return HessianBlocks(Layout.of(m), blocks)


def d2_mismatch_row_blocks(x: VariableVector, m: InternalModel, lam) -> dict[tuple[str, str], sp.csr_matrix]:
    """The tau/theta-row mixed blocks computed directly (not by transposition)."""
    s = _Terms(x, m, lam)
    G_ta, G_tv, G_ha, G_hv, G_ht = (_rows(B, m.adj) for B in _tap_row_blocks(s))
    return {("tau", "Va"): G_ta, ("tau", "Vm"): G_tv, ("theta", "Va"): G_ha, ("theta", "Vm"): G_hv,
            ("theta", "tau"): sp.csc_matrix(G_ht)[:, m.adj].tocsr()}
