"""Stacked optimization vector ``[Va; Vm; Pg; Qg; tau; theta]`` and derivative containers."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse as sp

from .case_model import InternalModel

GROUPS = ("Va", "Vm", "Pg", "Qg", "tau", "theta")


@dataclass(frozen=True)
class Layout:
    nb: int
    ng: int
    na: int

    @property
    def sizes(self) -> dict[str, int]:
        return {"Va": self.nb, "Vm": self.nb, "Pg": self.ng, "Qg": self.ng,
                "tau": self.na, "theta": self.na}

    @property
    def offsets(self) -> dict[str, int]:
        out, pos = {}, 0
        for g in GROUPS:
            out[g] = pos
            pos += self.sizes[g]
        return out

    @property
    def n(self) -> int:
        return 2 * (self.nb + self.ng + self.na)

    def slice(self, group: str) -> slice:
        o = self.offsets[group]
        return slice(o, o + self.sizes[group])

    @classmethod
    def of(cls, m: InternalModel) -> "Layout":
        return cls(m.nb, m.ng, m.na)


@dataclass
class VariableVector:
    """Unstacked view of the optimization vector.

    ``tau`` and ``theta`` only cover the adjustable branches of the model.
    """

    Va: np.ndarray
    Vm: np.ndarray
    Pg: np.ndarray
    Qg: np.ndarray
    tau: np.ndarray
    theta: np.ndarray

    @property
    def layout(self) -> Layout:
        return Layout(len(self.Va), len(self.Pg), len(self.tau))

    @property
    def V(self) -> np.ndarray:
        return self.Vm * np.exp(1j * self.Va)

    def stack(self) -> np.ndarray:
        return np.concatenate([np.asarray(getattr(self, g), dtype=float) for g in GROUPS])

    @classmethod
    def unstack(cls, x: np.ndarray, layout: Layout) -> "VariableVector":
        x = np.asarray(x, dtype=float)
        if x.shape != (layout.n,):
            raise ValueError(f"expected stacked vector of length {layout.n}, got {x.shape}")
        return cls(*(x[layout.slice(g)].copy() for g in GROUPS))

    @classmethod
    def from_model(cls, m: InternalModel) -> "VariableVector":
        """Case starting point: stored voltages, dispatch and taps."""
        return cls(m.Va0.copy(), m.Vm0.copy(), m.Pg0.copy(), m.Qg0.copy(),
                   m.tau0[m.adj].copy(), m.theta0[m.adj].copy())

    def full_taps(self, m: InternalModel) -> tuple[np.ndarray, np.ndarray]:
        """Tap ratio and shift for every branch; fixed values off the adjustable set."""
        tau = m.tau0.copy()
        theta = m.theta0.copy()
        tau[m.adj] = self.tau
        theta[m.adj] = self.theta
        return tau, theta


@dataclass
class DerivativeBundle:
    """First derivatives of a vector function, one sparse block per variable group."""

    dVa: sp.spmatrix
    dVm: sp.spmatrix
    dPg: sp.spmatrix
    dQg: sp.spmatrix
    dTau: sp.spmatrix
    dTheta: sp.spmatrix

    def blocks(self) -> dict[str, sp.spmatrix]:
        return dict(zip(GROUPS, (getattr(self, f.name) for f in fields(self))))

    def stack(self) -> sp.csr_matrix:
        """Blocks side by side in variable order (``rows x n``)."""
        blocks = [sp.coo_matrix(B) for B in self.blocks().values()]
        offsets = np.cumsum([0] + [B.shape[1] for B in blocks])
        dtype = np.result_type(*(B.dtype for B in blocks))
        return sp.csr_matrix(
            (np.concatenate([B.data for B in blocks]).astype(dtype),
             (np.concatenate([B.row for B in blocks]),
              np.concatenate([B.col + o for B, o in zip(blocks, offsets)]))),
            shape=(blocks[0].shape[0], int(offsets[-1])))

    def map(self, fn) -> "DerivativeBundle":
        return DerivativeBundle(*(fn(getattr(self, f.name)) for f in fields(self)))


class HessianBlocks:
    """6x6 grid of second-derivative blocks, keyed by ``(row_group, col_group)``.

    Missing keys are structural zeros.
    """

    def __init__(self, layout: Layout, blocks: dict[tuple[str, str], sp.spmatrix], dtype=complex):
        self.layout = layout
        self.dtype = dtype
        self._blocks = {k: sp.csr_matrix(v) for k, v in blocks.items()}

    def block(self, a: str, b: str) -> sp.csr_matrix:
        if (a, b) in self._blocks:
            return self._blocks[(a, b)]
        s = self.layout.sizes
        return sp.csr_matrix((s[a], s[b]), dtype=self.dtype)

    def to_matrix(self) -> sp.csr_matrix:
        off = self.layout.offsets
        rows, cols, vals = [np.zeros(0, int)], [np.zeros(0, int)], [np.zeros(0, self.dtype)]
        for (a, b), B in self._blocks.items():
            C = B.tocoo()
            rows.append(C.row + off[a])
            cols.append(C.col + off[b])
            vals.append(C.data)
        n = self.layout.n
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(n, n))

    def map(self, fn, dtype=None) -> "HessianBlocks":
        return HessianBlocks(self.layout, {k: fn(v) for k, v in self._blocks.items()},
                             dtype=dtype or self.dtype)

    @property
    def real(self) -> "HessianBlocks":
        return self.map(lambda b: b.real, float)

    @property
    def imag(self) -> "HessianBlocks":
        return self.map(lambda b: b.imag, float)

    def __add__(self, other: "HessianBlocks") -> "HessianBlocks":
        keys = set(self._blocks) | set(other._blocks)
        dtype = np.result_type(self.dtype, other.dtype)
        return HessianBlocks(self.layout, {k: self.block(*k) + other.block(*k) for k in keys}, dtype)

    def keys(self):
        return self._blocks.keys()
