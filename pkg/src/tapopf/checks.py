"""Seeded finite-difference suites over random networks.

Every suite draws ``trials`` random operating points and multipliers from
its own child stream of the seed, compares each analytic block with central
differences and keeps the worst report per block name. Without a model each
trial also draws a fresh random network. The CLI's ``check-derivs`` command
and the acceptance tests both run these.

Block names start with their section: ``ybus``, ``mismatch``, ``I_f``,
``I_t``, ``h_f``, ``h_t`` and ``lagrangian``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .admittance import TapState, branch_admittances, cached_system, dYbusGamma_dtau, dYbusGamma_dtheta, system_at
from .case_model import InternalModel, to_internal
from .fd_oracle import FDReport, compare, fd_hessian_contract, fd_jacobian
from .line_flow import (FROM, TO, branch_currents, d2_currents, d2_currents_row_blocks, d2_flow_constraints,
                        d_currents, d_flow_constraints, flow_constraints)
from .opf_solver import OpfProblem, lagrangian_hessian
from .power_balance import d2_mismatch, d2_mismatch_row_blocks, d_mismatch, mismatch
from .randcase import random_case, random_complex, random_point
from .variables import GROUPS, VariableVector

JAC_STEP = 1e-6
HESS_STEP = 1e-5
JAC_RTOL = 1e-6
HESS_RTOL = 5e-6
TRANSPOSE_RTOL = 1e-12

SUITES = ("ybus", "mismatch_jacobian", "mismatch_hessian", "line_flow", "lagrangian")


@dataclass
class SuiteResult:
    name: str
    trials: int
    reports: list[FDReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def worst(self) -> FDReport | None:
        return max(self.reports, key=lambda r: r.maxRelErr, default=None)

    def to_dict(self) -> dict:
        return {"suite": self.name, "trials": self.trials, "pass": self.passed,
                "blocks": [r.to_dict() for r in self.reports]}


class _Worst:
    """Keeps the worst report seen for each block name, in first-seen order."""

    def __init__(self):
        self._by_name: dict[str, FDReport] = {}

    def add(self, r: FDReport):
        old = self._by_name.get(r.blockName)
        if old is None:
            self._by_name[r.blockName] = r
        elif (not r.passed, r.maxRelErr) > (not old.passed, old.maxRelErr):
            self._by_name[r.blockName] = r

    def reports(self) -> list[FDReport]:
        return list(self._by_name.values())


def _transpose_report(name, direct, transposed) -> FDReport:
    """Relative difference between a directly computed block and the one built by transposition."""
    a = direct.toarray() if sp.issparse(direct) else np.asarray(direct)
    b = transposed.toarray() if sp.issparse(transposed) else np.asarray(transposed)
    if a.size == 0:
        return FDReport(name, 0.0, 0.0, (-1, -1), True, float("nan"))
    diff = np.abs(a - b)
    worst = np.unravel_index(int(np.argmax(diff)), diff.shape)
    max_abs = float(diff[worst])
    max_rel = max_abs / max(float(np.abs(b).max()), 1e-300)
    ok = max_rel <= TRANSPOSE_RTOL or max_abs == 0.0
    return FDReport(name, max_rel, max_abs, (int(worst[0]), int(worst[1])), bool(ok), float("nan"))


def _hessian_reports(prefix, blocks, H_re, H_im, layout, out: _Worst):
    """Compare every block of a complex Hessian with the real and imaginary FD parts."""
    scale_re = float(np.abs(H_re).max(initial=0.0))
    scale_im = float(np.abs(H_im).max(initial=0.0))
    for a in GROUPS:
        for b in GROUPS:
            B = blocks.block(a, b)
            sa, sb = layout.slice(a), layout.slice(b)
            for part, H, scale in (("re", H_re, scale_re), ("im", H_im, scale_im)):
                an = B.real if part == "re" else B.imag
                # a structurally zero block has no magnitude of its own to normalize by
                s = scale if an.count_nonzero() == 0 else 0.0
                out.add(compare(an, H[sa, sb], HESS_RTOL, name=f"{prefix}.{part}.{a},{b}",
                                step=HESS_STEP, scale=s))


def _split_gradient(contracted):
    """Real contracted gradient ``[Re; Im]`` from a complex row vector."""
    return lambda z: (lambda g: np.r_[g.real, g.imag])(contracted(z))


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _rng_for(seed: int, suite: str) -> np.random.Generator:
    return _streams(seed, len(SUITES))[SUITES.index(suite)]


def _draw(rng, model: InternalModel | None):
    m = to_internal(random_case(rng)) if model is None else model
    return m, random_point(rng, m)


def ybus_suite(seed: int = 0, trials: int = 50, model: InternalModel | None = None) -> SuiteResult:
    """``d(Ybus gamma)/d tau`` and ``d(Ybus gamma)/d theta`` over all branches."""
    rng = _rng_for(seed, "ybus")
    out = _Worst()
    for _ in range(trials):
        m = to_internal(random_case(rng)) if model is None else model
        tau = rng.uniform(0.9, 1.1, m.nl)
        theta = rng.uniform(-0.3, 0.3, m.nl)
        gamma = random_complex(rng, m.nb)
        nl = m.nl

        def f(z):
            return system_at(m, TapState(z[:nl], z[nl:]))[1].Ybus @ gamma

        J = fd_jacobian(f, np.r_[tau, theta], JAC_STEP)
        t = TapState(tau, theta)
        ba = branch_admittances(m, t)
        out.add(compare(dYbusGamma_dtau(m, ba, t, gamma), J[:, :nl], JAC_RTOL, name="ybus.dtau", step=JAC_STEP))
        out.add(compare(dYbusGamma_dtheta(m, ba, gamma), J[:, nl:], JAC_RTOL, name="ybus.dtheta", step=JAC_STEP))
    return SuiteResult("ybus", trials, out.reports())


def mismatch_jacobian_suite(seed: int = 0, trials: int = 50, model: InternalModel | None = None) -> SuiteResult:
    rng = _rng_for(seed, "mismatch_jacobian")
    out = _Worst()
    for _ in range(trials):
        m, x = _draw(rng, model)
        L = x.layout
        J = fd_jacobian(lambda z: mismatch(VariableVector.unstack(z, L), m), x.stack(), JAC_STEP)
        for g, B in d_mismatch(x, m).blocks().items():
            out.add(compare(B, J[:, L.slice(g)], JAC_RTOL, name=f"mismatch.d.{g}", step=JAC_STEP))
    return SuiteResult("mismatch_jacobian", trials, out.reports())


def mismatch_hessian_suite(seed: int = 0, trials: int = 50, model: InternalModel | None = None) -> SuiteResult:
    """All 36 blocks, real and imaginary parts, plus the five transpose identities."""
    rng = _rng_for(seed, "mismatch_hessian")
    out = _Worst()
    for _ in range(trials):
        m, x = _draw(rng, model)
        lam = random_complex(rng, m.nb)
        L = x.layout
        n = L.n
        grad = _split_gradient(lambda z: lam @ d_mismatch(VariableVector.unstack(z, L), m).stack())
        H = fd_hessian_contract(grad, x.stack(), HESS_STEP)
        blocks = d2_mismatch(x, m, lam)
        _hessian_reports("mismatch.d2", blocks, H[:n], H[n:], L, out)
        for (a, b), direct in d2_mismatch_row_blocks(x, m, lam).items():
            out.add(_transpose_report(f"mismatch.transpose.{a},{b}", direct, blocks.block(a, b)))
    return SuiteResult("mismatch_hessian", trials, out.reports())


def _currents(z, L, m, which):
    x = VariableVector.unstack(z, L)
    If, It = branch_currents(x.V, cached_system(m, *x.full_taps(m))[2])
    return If if which is FROM else It


def line_flow_suite(seed: int = 0, trials: int = 50, model: InternalModel | None = None) -> SuiteResult:
    """Currents at both ends (``I_f``, ``I_t``) with their Hessians and transposes,
    and the squared current limits (``h_f``, ``h_t``)."""
    rng = _rng_for(seed, "line_flow")
    out = _Worst()
    for _ in range(trials):
        m, x = _draw(rng, model)
        L = x.layout
        n = L.n
        z0 = x.stack()
        for which, sec in ((FROM, "I_f"), (TO, "I_t")):
            J = fd_jacobian(lambda z: _currents(z, L, m, which), z0, JAC_STEP)
            for g, B in d_currents(x, m, which).blocks().items():
                out.add(compare(B, J[:, L.slice(g)], JAC_RTOL, name=f"{sec}.d.{g}", step=JAC_STEP))
            mu = random_complex(rng, m.nl)
            grad = _split_gradient(lambda z: mu @ d_currents(VariableVector.unstack(z, L), m, which).stack())
            H = fd_hessian_contract(grad, z0, HESS_STEP)
            blocks = d2_currents(x, m, mu, which)
            _hessian_reports(f"{sec}.d2", blocks, H[:n], H[n:], L, out)
            for (a, b), direct in d2_currents_row_blocks(x, m, mu, which).items():
                out.add(_transpose_report(f"{sec}.transpose.{a},{b}", direct, blocks.block(a, b)))

        def h(z):
            e = flow_constraints(VariableVector.unstack(z, L), m)
            return np.r_[e.hf, e.ht]

        nc = len(m.constrained)
        J = fd_jacobian(h, z0, JAC_STEP)
        df, dt = d_flow_constraints(x, m)
        out.add(compare(df.stack(), J[:nc], JAC_RTOL, name="h_f.jacobian", step=JAC_STEP))
        out.add(compare(dt.stack(), J[nc:], JAC_RTOL, name="h_t.jacobian", step=JAC_STEP))
        nu_f, nu_t = rng.normal(size=nc), rng.normal(size=nc)

        def gh(z):
            # both contracted gradients from one evaluation: [nu_f^T dhf, nu_t^T dht]
            bf, bt = d_flow_constraints(VariableVector.unstack(z, L), m)
            return np.r_[nu_f @ bf.stack(), nu_t @ bt.stack()]

        H = fd_hessian_contract(gh, z0, HESS_STEP)
        zero = np.zeros(nc)
        out.add(compare(d2_flow_constraints(x, m, nu_f, zero).to_matrix(), H[:n], HESS_RTOL,
                        name="h_f.hessian", step=HESS_STEP))
        out.add(compare(d2_flow_constraints(x, m, zero, nu_t).to_matrix(), H[n:], HESS_RTOL,
                        name="h_t.hessian", step=HESS_STEP))
    return SuiteResult("line_flow", trials, out.reports())


def lagrangian_suite(seed: int = 0, trials: int = 10, model: InternalModel | None = None) -> SuiteResult:
    """Assembled Lagrangian Hessian against FD of the Lagrangian gradient."""
    rng = _rng_for(seed, "lagrangian")
    out = _Worst()
    for _ in range(trials):
        m, x = _draw(rng, model)
        p = OpfProblem.build(m)
        L = x.layout
        lam = rng.normal(size=p.n_eq)
        mu = rng.uniform(0.0, 1.0, p.n_flow)
        H = fd_hessian_contract(lambda z: p.lagrangian_gradient(VariableVector.unstack(z, L), lam, mu),
                                x.stack(), HESS_STEP)
        out.add(compare(lagrangian_hessian(x, p, lam, mu), H, HESS_RTOL, name="lagrangian.hessian",
                        step=HESS_STEP))
    return SuiteResult("lagrangian", trials, out.reports())


_RUNNERS = {
    "ybus": ybus_suite,
    "mismatch_jacobian": mismatch_jacobian_suite,
    "mismatch_hessian": mismatch_hessian_suite,
    "line_flow": line_flow_suite,
    "lagrangian": lagrangian_suite,
}


def run_suite(name: str, seed: int = 0, trials: int | None = None,
              model: InternalModel | None = None) -> SuiteResult:
    if name not in _RUNNERS:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    fn = _RUNNERS[name]
    return fn(seed, model=model) if trials is None else fn(seed, trials, model=model)


def run_all(seed: int = 0, trials: int | None = None, model: InternalModel | None = None) -> list[SuiteResult]:
    """Every suite. ``trials`` overrides the per-suite default (50, or 10 for the Lagrangian)."""
    return [run_suite(name, seed, trials, model) for name in SUITES]


def section_of(report: FDReport) -> str:
    return report.blockName.split(".", 1)[0]
