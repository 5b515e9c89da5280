"""Newton power flow and a primal-dual interior-point OPF with tap variables.

The OPF works on the stacked vector ``[Va; Vm; Pg; Qg; tau; theta]``.
Variables whose lower and upper bounds coincide (the reference angle, fixed
taps, shifts with ``thetaMin == thetaMax``) are eliminated before the solve.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .admittance import TapState, system_at, diag
from .case_model import InternalModel
from .line_flow import d2_flow_constraints, d_flow_constraints, flow_constraints
from .power_balance import bus_injections, d2_mismatch, d_mismatch, dSbus_dV, mismatch
from .variables import Layout, VariableVector

log = logging.getLogger(__name__)


class Status(Enum):
    Converged = "converged"
    IterLimit = "iteration limit"
    Infeasible = "infeasible"
    NumericFailure = "numeric failure"


@dataclass
class SolveResult:
    x: VariableVector
    objective: float
    status: Status
    iterations: int
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu_bounds_lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu_bounds_upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    feasibility: float = 0.0
    optimality: float = 0.0
    complementarity: float = 0.0
    history: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.Converged


# ---------------------------------------------------------------- power flow

def newton_power_flow(m: InternalModel, t: TapState | None = None, start: VariableVector | None = None,
                      tol: float = 1e-8, max_iter: int = 20) -> SolveResult:
    """Full Newton power flow in polar coordinates with taps held at ``t``.

    PV buses without an in-service generator are treated as PQ. After
    convergence the reference generators pick up the active and reactive
    balance and PV generators the reactive balance, split evenly per bus.
    """
    t = t or TapState.nominal(m)
    start = start or VariableVector.from_model(m)
    _, sys = system_at(m, t)
    Ybus = sys.Ybus

    has_gen = np.zeros(m.nb, dtype=bool)
    has_gen[m.gen_bus] = True
    ref = m.ref
    pv = np.array([i for i in m.pv if has_gen[i]], dtype=int)
    pq = np.setdiff1d(np.arange(m.nb), np.r_[ref, pv])
    pvpq = np.r_[pv, pq].astype(int)

    Va, Vm = start.Va.copy(), start.Vm.copy()
    Sspec = m.Cg @ (start.Pg + 1j * start.Qg) - m.Sd

    def residual(V):
        dS = bus_injections(V, sys) - Sspec
        return np.r_[dS[pvpq].real, dS[pq].imag]

    V = Vm * np.exp(1j * Va)
    F = residual(V)
    it = 0
    status = Status.Converged if np.max(np.abs(F), initial=0.0) <= tol else Status.IterLimit
    while status is not Status.Converged and it < max_iter:
        it += 1
        dVa, dVm = dSbus_dV(Ybus, V)
        J = sp.bmat([
            [dVa[pvpq][:, pvpq].real, dVm[pvpq][:, pq].real],
            [dVa[pq][:, pvpq].imag, dVm[pq][:, pq].imag],
        ], format="csc")
        try:
            dx = spla.spsolve(J, -F)
        except RuntimeError:
            dx = np.full(len(F), np.nan)
        if not np.all(np.isfinite(dx)):
            status = Status.NumericFailure
            break
        Va[pvpq] += dx[:len(pvpq)]
        Vm[pq] += dx[len(pvpq):]
        V = Vm * np.exp(1j * Va)
        F = residual(V)
        if not np.all(np.isfinite(F)):
            status = Status.NumericFailure
            break
        if np.max(np.abs(F), initial=0.0) <= tol:
            status = Status.Converged

    Pg, Qg = start.Pg.copy(), start.Qg.copy()
    need = bus_injections(V, sys) + m.Sd       # generation needed per bus
    for bus in np.r_[ref, pv].astype(int):
        gens = np.flatnonzero(m.gen_bus == bus)
        if len(gens) == 0:
            continue
        other = m.Cg[bus] @ (Pg + 1j * Qg) - (Pg[gens] + 1j * Qg[gens]).sum()
        share = (need[bus] - other) / len(gens)
        if bus == ref:
            Pg[gens] = share.real
        Qg[gens] = share.imag

    x = VariableVector(Va, Vm, Pg, Qg, t.tau[m.adj].copy(), t.theta[m.adj].copy())
    feas = float(np.max(np.abs(F), initial=0.0))
    return SolveResult(x, objective_value(m, Pg), status, it, feasibility=feas,
                       message=f"max mismatch {feas:.3e} after {it} iteration(s)")


# ---------------------------------------------------------------- OPF problem

def objective_value(m: InternalModel, Pg) -> float:
    P = m.baseMVA * np.asarray(Pg)
    c2, c1, c0 = m.cost.T
    return float(np.sum(c2 * P ** 2 + c1 * P + c0))


@dataclass
class OpfProblem:
    """OPF over the stacked vector with bounds ``lb <= x <= ub``.

    ``fixed`` marks eliminated variables (equal bounds); their value is the
    common bound.
    """

    model: InternalModel
    lb: np.ndarray
    ub: np.ndarray

    @classmethod
    def build(cls, m: InternalModel, fixed_taps: bool = False, tau=None, theta=None) -> "OpfProblem":
        """Bounds from the model. ``fixed_taps`` pins every adjustable branch at
        ``tau``/``theta`` (default: the case values)."""
        L = Layout.of(m)
        lb = np.full(L.n, -np.inf)
        ub = np.full(L.n, np.inf)
        lb[m.ref] = ub[m.ref] = m.Va0[m.ref]
        for g, lo, hi in (("Vm", m.Vmin, m.Vmax), ("Pg", m.Pmin, m.Pmax), ("Qg", m.Qmin, m.Qmax),
                          ("tau", m.tau_min[m.adj], m.tau_max[m.adj]),
                          ("theta", m.theta_min[m.adj], m.theta_max[m.adj])):
            lb[L.slice(g)] = lo
            ub[L.slice(g)] = hi
        if fixed_taps:
            tv = m.tau0[m.adj] if tau is None else np.broadcast_to(tau, (m.na,))
            hv = m.theta0[m.adj] if theta is None else np.broadcast_to(theta, (m.na,))
            lb[L.slice("tau")] = ub[L.slice("tau")] = tv
            lb[L.slice("theta")] = ub[L.slice("theta")] = hv
        return cls(m, lb, ub)

    @property
    def layout(self) -> Layout:
        return Layout.of(self.model)

    @property
    def fixed(self) -> np.ndarray:
        return self.lb == self.ub

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.fixed)

    @property
    def n_eq(self) -> int:
        return 2 * self.model.nb

    @property
    def n_flow(self) -> int:
        return 2 * len(self.model.constrained)

    # objective -------------------------------------------------------
    def objective(self, x: VariableVector) -> float:
        return objective_value(self.model, x.Pg)

    def objective_gradient(self, x: VariableVector) -> np.ndarray:
        m, L = self.model, self.layout
        grad = np.zeros(L.n)
        c2, c1, _ = m.cost.T
        grad[L.slice("Pg")] = 2 * c2 * m.baseMVA ** 2 * x.Pg + c1 * m.baseMVA
        return grad

    def objective_hessian(self) -> sp.csr_matrix:
        m, L = self.model, self.layout
        d = np.zeros(L.n)
        d[L.slice("Pg")] = 2 * m.cost[:, 0] * m.baseMVA ** 2
        return diag(d)

    # constraints -----------------------------------------------------
    def equalities(self, x: VariableVector) -> np.ndarray:
        G = mismatch(x, self.model)
        return np.r_[G.real, G.imag]

    def equality_jacobian(self, x: VariableVector) -> sp.csr_matrix:
        dG = d_mismatch(x, self.model).stack()
        return sp.vstack([dG.real, dG.imag], format="csr")

    def flow(self, x: VariableVector) -> np.ndarray:
        e = flow_constraints(x, self.model)
        return np.r_[e.hf, e.ht]

    def flow_jacobian(self, x: VariableVector) -> sp.csr_matrix:
        df, dt = d_flow_constraints(x, self.model)
        return sp.vstack([df.stack(), dt.stack()], format="csr")

    def lagrangian_gradient(self, x: VariableVector, lam, mu) -> np.ndarray:
        """Gradient of ``f + lam^T g + mu^T h_flow`` over the full stacked vector."""
        return (self.objective_gradient(x) + self.equality_jacobian(x).T @ np.asarray(lam, dtype=float)
                + self.flow_jacobian(x).T @ np.asarray(mu, dtype=float))


def lagrangian_hessian(x: VariableVector, p: OpfProblem, lam, mu, return_asymmetry: bool = False):
    """Hessian of ``f + lam_P^T Re G + lam_Q^T Im G + mu^T h_flow``.

    ``lam`` is ``[lam_P; lam_Q]`` (length ``2 nb``) and ``mu`` holds the
    flow-limit multipliers ``[mu_f; mu_t]``. Bound constraints are linear and
    do not contribute.
    """
    m = p.model
    lam = np.asarray(lam, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if lam.shape != (2 * m.nb,) or mu.shape != (p.n_flow,):
        raise ValueError("multiplier lengths do not match the constraint counts")
    lam_c = lam[:m.nb] - 1j * lam[m.nb:]
    nc = len(m.constrained)
    H = (p.objective_hessian()
         + d2_mismatch(x, m, lam_c).real.to_matrix()
         + d2_flow_constraints(x, m, mu[:nc], mu[nc:]).to_matrix()).tocsr()
    asym = abs(H - H.T).max() if H.nnz else 0.0
    Hs = ((H + H.T) * 0.5).tocsr()
    return (Hs, float(asym)) if return_asymmetry else Hs


# ---------------------------------------------------------------- interior point

@dataclass
class IpmOptions:
    max_iter: int = 150
    feas_tol: float = 1e-8
    grad_tol: float = 1e-6
    comp_tol: float = 1e-8
    step_frac: float = 0.995
    sigma0: float = 0.1
    reg0: float = 1e-8
    reg_max: float = 1e2
    z0: float = 0.1
    stall_iter: int = 5     # negligible primal steps in a row before declaring infeasibility


def initial_point(p: OpfProblem) -> VariableVector:
    """Flat voltages, mid-range dispatch, case taps; fixed variables at their bound."""
    m = p.model
    L = p.layout
    Pg = np.where(np.isfinite(m.Pmin + m.Pmax), 0.5 * (m.Pmin + m.Pmax), m.Pg0)
    Qg = np.where(np.isfinite(m.Qmin + m.Qmax), 0.5 * (m.Qmin + m.Qmax), m.Qg0)
    x = np.r_[np.full(m.nb, m.Va0[m.ref]), np.ones(m.nb), Pg, Qg,
              m.tau0[m.adj], m.theta0[m.adj]]
    lb, ub = p.lb, p.ub
    inner = np.clip(x, lb, ub)
    x = np.where(p.fixed, lb, inner)
    return VariableVector.unstack(x, L)


class _Kkt:
    """Evaluates the reduced problem on the free variables."""

    def __init__(self, p: OpfProblem, x0: VariableVector):
        self.p = p
        self.L = p.layout
        self.base = x0.stack()
        self.base[p.fixed] = p.lb[p.fixed]
        self.free = p.free
        lo, hi = p.lb[self.free], p.ub[self.free]
        self.i_lo = np.flatnonzero(np.isfinite(lo))
        self.i_hi = np.flatnonzero(np.isfinite(hi))
        self.lo, self.hi = lo[self.i_lo], hi[self.i_hi]
        nf = len(self.free)
        eye = sp.identity(nf, format="csr")
        self.dh_bounds = sp.vstack([eye[self.i_hi], -eye[self.i_lo]], format="csr")
        self.n_flow = p.n_flow

    def full(self, xf) -> VariableVector:
        x = self.base.copy()
        x[self.free] = xf
        return VariableVector.unstack(x, self.L)

    def evaluate(self, xf):
        x = self.full(xf)
        p = self.p
        f = p.objective(x)
        df = p.objective_gradient(x)[self.free]
        g = p.equalities(x)
        dg = p.equality_jacobian(x)[:, self.free]
        hflow = p.flow(x)
        dhflow = p.flow_jacobian(x)[:, self.free]
        h = np.r_[hflow, xf[self.i_hi] - self.hi, self.lo - xf[self.i_lo]]
        dh = sp.vstack([dhflow, self.dh_bounds], format="csr")
        return x, f, df, g, dg.tocsr(), h, dh

    def hessian(self, x, lam, mu):
        H = lagrangian_hessian(x, self.p, lam, mu[:self.n_flow])
        return H[self.free][:, self.free]


def _max_step(v, dv, frac):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, frac * np.min(-v[neg] / dv[neg])))


def solve_opf(p: OpfProblem, opts: IpmOptions | None = None, x0: VariableVector | None = None) -> SolveResult:
    """Primal-dual interior point with Mehrotra predictor-corrector steps.

    Inequalities ``h(x) <= 0`` (flow limits, then upper bounds, then lower
    bounds on free variables) get slacks ``z > 0``; equalities are the real
    and imaginary power balance rows.
    """
    opts = opts or IpmOptions()
    kkt = _Kkt(p, x0 or initial_point(p))
    xf = kkt.base[kkt.free].copy()
    x, f, df, g, dg, h, dh = kkt.evaluate(xf)
    neq, niq, nf = len(g), len(h), len(xf)

    z = np.maximum(-h, opts.z0)
    mu = opts.sigma0 * np.ones(niq) / z if niq else np.zeros(0)
    mu = np.maximum(mu, opts.sigma0 / np.maximum(z, 1.0))
    lam = np.zeros(neq)
    reg = opts.reg0
    history = []
    status = Status.IterLimit
    message = ""

    def residuals():
        Lx = df + dg.T @ lam + dh.T @ mu
        feas = max(np.max(np.abs(g), initial=0.0), np.max(h, initial=0.0))
        comp = float(z @ mu) if niq else 0.0
        return Lx, feas, float(np.max(np.abs(Lx), initial=0.0)), comp

    Lx, feas, grad, comp = residuals()
    it = 0
    stalled = 0
    for it in range(opts.max_iter + 1):
        history.append(max(feas, grad, comp))
        log.debug("it %3d  f=%.8g  feas=%.2e  grad=%.2e  comp=%.2e", it, f, feas, grad, comp)
        if feas <= opts.feas_tol and grad <= opts.grad_tol and comp <= opts.comp_tol:
            status = Status.Converged
            break
        if it == opts.max_iter:
            break

        Hxx = kkt.hessian(x, lam, mu)
        zinv = 1.0 / z
        M = (Hxx + dh.T @ diag(mu * zinv) @ dh).tocsr()

        solve = None
        while reg <= opts.reg_max:
            K = sp.bmat([[M + reg * sp.identity(nf), dg.T],
                         [dg, -1e-12 * sp.identity(neq)]], format="csc")
            try:
                lu = spla.splu(K)
                test = lu.solve(np.ones(nf + neq))
                if np.all(np.isfinite(test)):
                    solve = lu.solve
                    break
            except RuntimeError:
                pass
            reg *= 100
        if solve is None:
            status = Status.NumericFailure
            message = "KKT matrix singular after regularization"
            break
        reg = max(opts.reg0, reg / 10)

        def direction(gamma, corr):
            N = Lx + dh.T @ (zinv * (mu * h + gamma - corr))
            sol = solve(np.r_[-N, -g])
            dx, dlam = sol[:nf], sol[nf:]
            dz = -h - z - dh @ dx
            dmu = -mu + zinv * (gamma - corr - mu * dz)
            return dx, dlam, dz, dmu

        if niq:
            # predictor
            dx, dlam, dz, dmu = direction(0.0, 0.0)
            ap = _max_step(z, dz, 1.0)
            ad = _max_step(mu, dmu, 1.0)
            gap_aff = float((z + ap * dz) @ (mu + ad * dmu))
            sigma = min(1.0, (gap_aff / comp) ** 3) if comp > 0 else opts.sigma0
            gamma = sigma * comp / niq
            dx, dlam, dz, dmu = direction(gamma, dz * dmu)
        else:
            dx, dlam, dz, dmu = direction(0.0, 0.0)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dlam))):
            status = Status.NumericFailure
            message = "non-finite Newton direction"
            break

        ap = _max_step(z, dz, opts.step_frac)
        ad = _max_step(mu, dmu, opts.step_frac)
        tiny = ap * np.max(np.abs(dx), initial=0.0) <= 1e-12 * (1.0 + np.max(np.abs(xf), initial=0.0))
        stalled = stalled + 1 if tiny and feas > opts.feas_tol else 0
        if stalled >= opts.stall_iter:
            status = Status.Infeasible
            message = f"primal iterate stalled with constraint violation {feas:.3e}"
            break
        xf = xf + ap * dx
        z = z + ap * dz
        lam = lam + ad * dlam
        mu = mu + ad * dmu

        x, f, df, g, dg, h, dh = kkt.evaluate(xf)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            status = Status.NumericFailure
            message = "non-finite constraint values"
            break
        Lx, feas, grad, comp = residuals()

    nfl = p.n_flow
    nhi = len(kkt.i_hi)
    mu_hi = np.zeros(p.layout.n)
    mu_lo = np.zeros(p.layout.n)
    mu_hi[kkt.free[kkt.i_hi]] = mu[nfl:nfl + nhi]
    mu_lo[kkt.free[kkt.i_lo]] = mu[nfl + nhi:]
    if not message:
        message = f"{status.value} after {it} iteration(s)"
    return SolveResult(x, f, status, it, lam=lam, mu=mu[:nfl], mu_bounds_lower=mu_lo,
                       mu_bounds_upper=mu_hi, feasibility=float(feas), optimality=float(grad),
                       complementarity=float(comp), history=history, message=message)
