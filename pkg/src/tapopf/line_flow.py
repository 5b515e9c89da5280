"""Branch currents, current-limit constraints and their derivatives."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .admittance import SystemMatrices, cached_system, diag, scale_cols, scale_rows
from .case_model import InternalModel
from .variables import GROUPS, DerivativeBundle, HessianBlocks, Layout, VariableVector


class End(Enum):
    FROM = "from"
    TO = "to"


FROM, TO = End.FROM, End.TO


def branch_currents(V, sys: SystemMatrices) -> tuple[np.ndarray, np.ndarray]:
    V = np.asarray(V, dtype=complex)
    return sys.Yf @ V, sys.Yt @ V


def _state(x: VariableVector, m: InternalModel):
    return cached_system(m, *x.full_taps(m))


def d_currents(x: VariableVector, m: InternalModel, which: End) -> DerivativeBundle:
    """Derivatives of ``If`` (``which=FROM``) or ``It`` (``which=TO``)."""
    return _d_currents(x, m, which, _state(x, m))


def _d_currents(x, m, which, state) -> DerivativeBundle:
    t, ba, sys = state
    V = x.V
    Ybr = sys.Yf if which is FROM else sys.Yt
    dVa = scale_cols(Ybr, 1j * V)
    dVm = scale_cols(Ybr, V / np.abs(V))
    CfV, CtV = m.Cf @ V, m.Ct @ V
    itau = 1.0 / t.tau
    if which is FROM:
        d_tau = CfV * -2 * ba.Yff * itau + CtV * -ba.Yft * itau
        d_theta = CtV * 1j * ba.Yft
    else:
        d_tau = CfV * -ba.Ytf * itau
        d_theta = CfV * -1j * ba.Ytf
    # current on branch k depends only on its own tap, so these are diagonal
    nl, ng = m.nl, m.ng
    return DerivativeBundle(
        dVa, dVm,
        sp.csr_matrix((nl, ng), dtype=complex),
        sp.csr_matrix((nl, ng), dtype=complex),
        _adj_columns(d_tau, m),
        _adj_columns(d_theta, m),
    )


def _adj_columns(d, m: InternalModel) -> sp.csr_matrix:
    """``[d]`` restricted to the adjustable-branch columns (``nl x na``)."""
    adj = m.adj
    indptr = np.zeros(m.nl + 1, dtype=np.int32)
    indptr[adj + 1] = 1
    return sp.csr_matrix((d[adj], np.arange(len(adj), dtype=np.int32), np.cumsum(indptr)),
                         shape=(m.nl, len(adj)))


def d2Ibr_dV2(Ybr, V, mu):
    """Voltage-voltage blocks of ``d2(mu^T Ybr V)``: ``Haa, Hav, Hva, Hvv``."""
    nb = len(V)
    iVm = diag(1.0 / np.abs(V))
    Haa = diag(-(Ybr.T @ mu) * V)
    Hva = -1j * Haa @ iVm
    Hav = Hva
    Hvv = sp.csr_matrix((nb, nb), dtype=complex)
    return Haa, Hav, Hva, Hvv


def _tap_blocks(x, m, mu, which, t, ba):
    """Column-form tap blocks in full branch dimension."""
    V = x.V
    Cf, Ct = m.Cf, m.Ct
    CfV, CtV = Cf @ V, Ct @ V
    itau = 1.0 / t.tau
    jV = diag(1j * V)
    V_iVm = diag(V / np.abs(V))
    if which is FROM:
        Yff, Yft = ba.Yff, ba.Yft
        tau_cols = Cf.T @ diag(mu * -2 * Yff * itau) + Ct.T @ diag(mu * -Yft * itau)
        theta_cols = Ct.T @ diag(mu * 1j * Yft)
        H_tt = 6 * itau ** 2 * CfV * mu * Yff + 2 * itau ** 2 * CtV * mu * Yft
        H_th = -itau * CtV * mu * 1j * Yft
        H_hh = CtV * mu * -Yft
    else:
        Ytf = ba.Ytf
        tau_cols = Cf.T @ diag(mu * -Ytf * itau)
        theta_cols = Cf.T @ diag(mu * -1j * Ytf)
        H_tt = 2 * itau ** 2 * CfV * mu * Ytf
        H_th = -itau * CfV * mu * -1j * Ytf
        H_hh = CfV * mu * -Ytf
    return (jV @ tau_cols, jV @ theta_cols, V_iVm @ tau_cols, V_iVm @ theta_cols,
            H_tt, H_th, H_hh)


def _tap_row_blocks(x, m, mu, which, t, ba):
    """tau/theta-row mixed blocks computed from their own expressions."""
    V = x.V
    Cf, Ct = m.Cf, m.Ct
    itau = 1.0 / t.tau
    jV = diag(1j * V)
    V_iVm = diag(V / np.abs(V))
    if which is FROM:
        tau_rows = diag(itau * -2 * ba.Yff * mu) @ Cf + diag(itau * -ba.Yft * mu) @ Ct
        theta_rows = diag(1j * ba.Yft * mu) @ Ct
        theta_tau = diag((Ct @ V) * mu * -1j * ba.Yft * itau)
    else:
        tau_rows = diag(itau * -ba.Ytf * mu) @ Cf
        theta_rows = diag(-1j * ba.Ytf * mu) @ Cf
        theta_tau = diag((Cf @ V) * mu * 1j * ba.Ytf * itau)
    return tau_rows @ jV, tau_rows @ V_iVm, theta_rows @ jV, theta_rows @ V_iVm, theta_tau


def d2_currents(x: VariableVector, m: InternalModel, mu, which: End) -> HessianBlocks:
    """Second derivatives of ``mu^T I`` over the full stacked vector."""
    return _d2_currents(x, m, mu, which, _state(x, m))


def _d2_currents(x, m, mu, which, state) -> HessianBlocks:
    t, ba, sys = state
    mu = np.asarray(mu, dtype=complex)
    Ybr = sys.Yf if which is FROM else sys.Yt
    Haa, Hav, Hva, Hvv = d2Ibr_dV2(Ybr, x.V, mu)
    H_at, H_ah, H_vt, H_vh, H_tt, H_th, H_hh = _tap_blocks(x, m, mu, which, t, ba)
    adj = m.adj
    H_at, H_ah, H_vt, H_vh = (sp.csc_matrix(B)[:, adj].tocsr() for B in (H_at, H_ah, H_vt, H_vh))
    H_th = diag(H_th[adj])
    blocks = {
        ("Va", "Va"): Haa, ("Va", "Vm"): Hav, ("Vm", "Va"): Hva, ("Vm", "Vm"): Hvv,
        ("Va", "tau"): H_at, ("Va", "theta"): H_ah,
        ("Vm", "tau"): H_vt, ("Vm", "theta"): H_vh,
        ("tau", "Va"): H_at.T, ("tau", "Vm"): H_vt.T,
        ("theta", "Va"): H_ah.T, ("theta", "Vm"): H_vh.T,
        ("tau", "tau"): diag(H_tt[adj]), ("tau", "theta"): H_th,
        ("theta", "tau"): H_th.T, ("theta", "theta"): diag(H_hh[adj]),
    }
    return HessianBlocks(Layout.of(m), blocks)


def d2_currents_row_blocks(x: VariableVector, m: InternalModel, mu, which: End):
    """The tau/theta-row mixed blocks computed directly (not by transposition)."""
    t, ba, _ = _state(x, m)
    mu = np.asarray(mu, dtype=complex)
    *rows, theta_tau = _tap_row_blocks(x, m, mu, which, t, ba)
    keys = [("tau", "Va"), ("tau", "Vm"), ("theta", "Va"), ("theta", "Vm")]
    out = {k: sp.csr_matrix(B)[m.adj, :] for k, B in zip(keys, rows)}
    out[("theta", "tau")] = sp.csr_matrix(theta_tau)[m.adj, :][:, m.adj]
    return out


@dataclass(frozen=True)
class FlowConstraintEval:
    If: np.ndarray
    It: np.ndarray
    hf: np.ndarray
    ht: np.ndarray
    constrained: np.ndarray


def flow_constraints(x: VariableVector, m: InternalModel) -> FlowConstraintEval:
    """Squared current-magnitude limits ``|I|^2 - Imax^2`` on limited branches."""
    _, _, sys = _state(x, m)
    If, It = branch_currents(x.V, sys)
    k = m.constrained
    Imax2 = m.Imax[k] ** 2
    return FlowConstraintEval(If, It, np.abs(If[k]) ** 2 - Imax2, np.abs(It[k]) ** 2 - Imax2, k)


def _dh(I, dI: DerivativeBundle, k) -> DerivativeBundle:
    """``2 Re(conj(I) dI)`` on the limited branches ``k``."""
    Ic = I[k].conj()
    return dI.map(lambda B: (2 * scale_rows(B[k, :], Ic).real).tocsr())


def d_flow_constraints(x: VariableVector, m: InternalModel) -> tuple[DerivativeBundle, DerivativeBundle]:
    """Real Jacobians of ``hf`` and ``ht`` (rows: limited branches only)."""
    k = m.constrained
    if len(k) == 0:
        L = Layout.of(m)
        empty = DerivativeBundle(*(sp.csr_matrix((0, L.sizes[g])) for g in GROUPS))
        return empty, empty
    state = _state(x, m)
    If, It = branch_currents(x.V, state[2])
    return (_dh(If, _d_currents(x, m, FROM, state), k), _dh(It, _d_currents(x, m, TO, state), k))


def d2_flow_constraints(x: VariableVector, m: InternalModel, nu_f, nu_t) -> HessianBlocks:
    """Hessian of ``nu_f^T hf + nu_t^T ht`` for real multipliers on limited branches.

    Uses ``d2|I|^2 = 2 Re(conj(I) d2I + dI^H dI)`` per branch.
    """
    L = Layout.of(m)
    k = m.constrained
    if len(k) == 0:
        return HessianBlocks(L, {}, dtype=float)
    state = _state(x, m)
    If, It = branch_currents(x.V, state[2])
    total = None
    for I, nu, which in ((If, nu_f, FROM), (It, nu_t, TO)):
        nu = np.asarray(nu, dtype=float)
        mu = np.zeros(m.nl, dtype=complex)
        mu[k] = nu * I[k].conj()
        H2 = _d2_currents(x, m, mu, which, state).real.map(lambda B: 2 * B)
        dI = sp.csr_matrix(_d_currents(x, m, which, state).stack())[k, :]
        outer = (2 * (dI.conj().T @ diag(nu) @ dI).real).tocsr()
        H = H2.to_matrix() + outer
        total = H if total is None else total + H
    return _split(total.tocsr(), L)


def _split(M: sp.csr_matrix, L: Layout) -> HessianBlocks:
    blocks = {}
    for a in GROUPS:
        for b in GROUPS:
            B = M[L.slice(a), :][:, L.slice(b)]
            if B.nnz:
                blocks[(a, b)] = B
    return HessianBlocks(L, blocks, dtype=float)
