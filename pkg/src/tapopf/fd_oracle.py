"""Central finite differences used as ground truth for the analytic derivatives."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class FDReport:
    blockName: str
    maxRelErr: float
    maxAbsErr: float
    worstIndex: tuple[int, int]
    pass_: bool
    step: float

    @property
    def passed(self) -> bool:
        return self.pass_

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("pass_")
        d["worstIndex"] = list(self.worstIndex)
        return d


def _probe(f, x):
    y = np.asarray(f(x))
    if not np.all(np.isfinite(y)):
        raise FloatingPointError(f"non-finite function value at probe point {x!r}")
    return y


def fd_jacobian(f, x0, step: float = 1e-6) -> np.ndarray:
    """Dense central-difference Jacobian of ``f`` at ``x0``.

    ``f`` maps a real vector to a real or complex vector; column ``k`` is
    ``(f(x + h e_k) - f(x - h e_k)) / 2h``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    y0 = _probe(f, x0)
    J = np.zeros((y0.size, n), dtype=np.result_type(y0.dtype, float))
    for k in range(n):
        x = x0.copy()
        x[k] = x0[k] + step
        fp = _probe(f, x)
        x[k] = x0[k] - step
        fm = _probe(f, x)
        J[:, k] = (fp - fm).ravel() / (2 * step)
    return J


def fd_hessian_contract(g, x0, step: float = 1e-5) -> np.ndarray:
    """Central differences of a contracted gradient ``g`` (real vector valued)."""
    H = fd_jacobian(g, x0, step)
    if np.iscomplexobj(H):
        raise TypeError("contracted gradient must be real; split real and imaginary parts")
    return H


def compare(analytic, numeric, rtol: float, atol: float = 1e-10, name: str = "",
            step: float = float("nan"), scale: float = 0.0) -> FDReport:
    """Compare an analytic block with its finite-difference counterpart.

    The relative error is normalized by the largest entry of ``numeric``, or
    by ``scale`` when that is larger. Pass the magnitude of the whole matrix
    as ``scale`` when checking a block that may be identically zero.
    """
    a = analytic.toarray() if sp.issparse(analytic) else np.asarray(analytic)
    n = np.asarray(numeric)
    if a.shape != n.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return FDReport(name, 0.0, 0.0, (-1, -1), True, step)
    diff = np.abs(a - n)
    worst = np.unravel_index(int(np.argmax(diff)), diff.shape)
    max_abs = float(diff[worst])
    max_rel = max_abs / max(float(np.abs(n).max()), scale, 1e-12)
    ok = max_rel <= rtol or max_abs <= atol
    return FDReport(name, max_rel, max_abs, (int(worst[0]), int(worst[1])), bool(ok), step)
