"""Case files: parsing, validation and conversion to the internal per-unit model.

Two on-disk formats are understood. The JSON format uses one object per
record with named keys; the MPC table format uses ``BUS``/``BRANCH``/``GEN``/
``COST`` sections with whitespace-separated numeric rows in the same column
order as the JSON keys.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from enum import IntEnum
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class CaseError(Exception):
    """Base class for problems with case data."""


class ParseError(CaseError):
    """Syntax or structural error in a case file."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {col}" if col is not None else "") + ": "
        super().__init__(where + message)


class IsolatedBusError(CaseError):
    pass


class BusType(IntEnum):
    PQ = 1
    PV = 2
    REF = 3


@dataclass(frozen=True)
class BusRecord:
    id: int
    type: BusType
    Pd: float = 0.0
    Qd: float = 0.0
    Gs: float = 0.0
    Bs: float = 0.0
    Vm0: float = 1.0
    Va0: float = 0.0
    Vmin: float = 0.9
    Vmax: float = 1.1


@dataclass(frozen=True)
class BranchRecord:
    fbus: int
    tbus: int
    r: float
    x: float
    b: float = 0.0
    tau0: float = 0.0
    theta0: float = 0.0
    tauMin: float = 0.9
    tauMax: float = 1.1
    thetaMin: float | None = None
    thetaMax: float | None = None
    adjustable: bool = False
    Imax: float = 0.0
    status: bool = True

    def __post_init__(self):
        # unset angle bounds pin the shift at its initial value
        if self.thetaMin is None:
            object.__setattr__(self, "thetaMin", self.theta0)
        if self.thetaMax is None:
            object.__setattr__(self, "thetaMax", self.theta0)


@dataclass(frozen=True)
class CostRecord:
    c2: float = 0.0
    c1: float = 0.0
    c0: float = 0.0


@dataclass(frozen=True)
class GenRecord:
    bus: int
    Pg0: float = 0.0
    Qg0: float = 0.0
    Pmin: float = 0.0
    Pmax: float = 9999.0
    Qmin: float = -9999.0
    Qmax: float = 9999.0
    cost: CostRecord = CostRecord()


@dataclass(frozen=True)
class Case:
    baseMVA: float
    buses: tuple[BusRecord, ...]
    branches: tuple[BranchRecord, ...] = ()
    gens: tuple[GenRecord, ...] = ()
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def gencosts(self) -> tuple[CostRecord, ...]:
        return tuple(g.cost for g in self.gens)


# (file key, record attribute, required)
_BUS_COLS = [
    ("id", "id", True), ("type", "type", True), ("Pd", "Pd", False), ("Qd", "Qd", False),
    ("Gs", "Gs", False), ("Bs", "Bs", False), ("Vm", "Vm0", False), ("Va", "Va0", False),
    ("Vmin", "Vmin", False), ("Vmax", "Vmax", False),
]
_BRANCH_COLS = [
    ("fbus", "fbus", True), ("tbus", "tbus", True), ("r", "r", True), ("x", "x", True),
    ("b", "b", False), ("tau", "tau0", False), ("theta", "theta0", False),
    ("tauMin", "tauMin", False), ("tauMax", "tauMax", False),
    ("thetaMin", "thetaMin", False), ("thetaMax", "thetaMax", False),
    ("adjustable", "adjustable", False), ("Imax", "Imax", False), ("status", "status", False),
]
_GEN_COLS = [
    ("bus", "bus", True), ("Pg", "Pg0", False), ("Qg", "Qg0", False),
    ("Pmin", "Pmin", False), ("Pmax", "Pmax", False), ("Qmin", "Qmin", False),
    ("Qmax", "Qmax", False),
]
_COST_COLS = [("c2", "c2", False), ("c1", "c1", False), ("c0", "c0", False)]

_INT_ATTRS = {"id", "fbus", "tbus", "bus"}
_BOOL_ATTRS = {"adjustable", "status"}


def _bus_type(value, line=None) -> BusType:
    if isinstance(value, str) and not value.strip().lstrip("+-").replace(".", "", 1).isdigit():
        try:
            return BusType[value.upper()]
        except KeyError:
            raise ParseError(f"unknown bus type {value!r}", line) from None
    try:
        f = float(value)
        if f != int(f):
            raise ValueError
        return BusType(int(f))
    except (ValueError, TypeError):
        raise ParseError(f"unknown bus type {value!r}", line) from None


def _coerce(attr: str, value, line=None):
    if attr == "type":
        return _bus_type(value, line)
    if isinstance(value, bool) and attr not in _BOOL_ATTRS:
        raise ParseError(f"expected a number for {attr!r}, got {value!r}", line)
    try:
        if attr in _INT_ATTRS:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if attr in _BOOL_ATTRS:
            return bool(float(value))
        return float(value)
    except (ValueError, TypeError):
        raise ParseError(f"bad value {value!r} for {attr!r}", line) from None


def _record_from_mapping(cls, cols, obj: dict, where: str, warnings: list, line=None):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object")
    kwargs = {}
    for key, attr, required in cols:
        if key in obj:
            kwargs[attr] = _coerce(attr, obj[key], line)
        elif required:
            raise ParseError(f"{where}: missing required column {key!r}", line)
    known = {c[0] for c in cols}
    if cls is GenRecord:
        known |= {c[0] for c in _COST_COLS}
        kwargs["cost"] = CostRecord(**{a: _coerce(a, obj[k], line) for k, a, _ in _COST_COLS if k in obj})
    for key in obj:
        if key not in known:
            warnings.append(f"{where}: ignored unknown column {key!r}")
    return cls(**kwargs)


def _parse_json(text: str) -> Case:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    if "baseMVA" not in doc:
        raise ParseError("missing required key 'baseMVA'")
    if "bus" not in doc:
        raise ParseError("missing required key 'bus'")
    warnings: list[str] = []
    for key in doc:
        if key not in ("baseMVA", "bus", "branch", "gen"):
            warnings.append(f"ignored unknown top-level key {key!r}")
    buses = tuple(_record_from_mapping(BusRecord, _BUS_COLS, b, f"bus[{i}]", warnings)
                  for i, b in enumerate(doc["bus"]))
    branches = tuple(_record_from_mapping(BranchRecord, _BRANCH_COLS, b, f"branch[{i}]", warnings)
                     for i, b in enumerate(doc.get("branch", [])))
    gens = tuple(_record_from_mapping(GenRecord, _GEN_COLS, g, f"gen[{i}]", warnings)
                 for i, g in enumerate(doc.get("gen", [])))
    return _finish(Case(_coerce("baseMVA", doc["baseMVA"]), buses, branches, gens, tuple(warnings)))


def _parse_table(text: str) -> Case:
    sections: dict[str, list[tuple[int, list[str]]]] = {}
    base = None
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()
        if head[0].upper() == "BASEMVA":
            if len(head) != 2:
                raise ParseError("expected 'baseMVA <value>'", lineno)
            base = _coerce("baseMVA", head[1], lineno)
            continue
        if len(head) == 1 and head[0].upper() in ("BUS", "BRANCH", "GEN", "COST"):
            current = head[0].upper()
            if current in sections:
                raise ParseError(f"duplicate section {current}", lineno)
            sections[current] = []
            continue
        if current is None:
            raise ParseError(f"data outside of a section: {head[0]!r}", lineno, 1)
        sections[current].append((lineno, head))
    if base is None:
        raise ParseError("missing 'baseMVA' line")
    if "BUS" not in sections:
        raise ParseError("missing BUS section")

    warnings: list[str] = []

    def rows(name, cls, cols):
        out = []
        for lineno, tokens in sections.get(name, []):
            nreq = sum(1 for c in cols if c[2])
            if len(tokens) < nreq:
                raise ParseError(f"{name} row has {len(tokens)} columns, need at least {nreq}", lineno)
            if len(tokens) > len(cols):
                warnings.append(f"line {lineno}: ignored {len(tokens) - len(cols)} trailing column(s)")
            obj = {c[0]: tok for c, tok in zip(cols, tokens)}
            kwargs = {attr: _coerce(attr, obj[key], lineno) for key, attr, _ in cols if key in obj}
            out.append((lineno, cls(**kwargs)))
        return out

    buses = tuple(r for _, r in rows("BUS", BusRecord, _BUS_COLS))
    branches = tuple(r for _, r in rows("BRANCH", BranchRecord, _BRANCH_COLS))
    gen_rows = rows("GEN", GenRecord, _GEN_COLS)
    cost_rows = rows("COST", CostRecord, _COST_COLS)
    if cost_rows and len(cost_rows) != len(gen_rows):
        raise ParseError(f"COST section has {len(cost_rows)} rows for {len(gen_rows)} generators",
                         cost_rows[0][0])
    gens = tuple(replace(g, cost=cost_rows[i][1]) if cost_rows else g for i, (_, g) in enumerate(gen_rows))
    return _finish(Case(base, buses, branches, gens, tuple(warnings)))


def _finish(case: Case) -> Case:
    seen = set()
    for b in case.buses:
        if b.id in seen:
            raise ParseError(f"duplicate bus ID {b.id}")
        seen.add(b.id)
    return case


def parse_case(text: str, format: str = "json") -> Case:
    """Parse case text in ``"json"`` or ``"mpc"`` table format.

    The parser is a syntax layer only: no unit conversion or tap
    normalization happens here.
    """
    fmt = format.lower()
    if fmt == "json":
        return _parse_json(text)
    if fmt in ("mpc", "mpc_table", "table"):
        return _parse_table(text)
    raise ValueError(f"unknown case format {format!r}")


def load_case(path, format: str | None = None) -> Case:
    path = str(path)
    if format is None:
        format = "json" if path.lower().endswith(".json") else "mpc"
    with open(path) as fh:
        return parse_case(fh.read(), format)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, IntEnum):
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def serialize_case(case: Case, format: str = "json") -> str:
    """Inverse of :func:`parse_case` (up to whitespace and warnings)."""
    def as_dict(rec, cols):
        d = {}
        for key, attr, _ in cols:
            v = getattr(rec, attr)
            if isinstance(v, BusType):
                v = v.name
            d[key] = v
        return d

    if format.lower() == "json":
        doc = {
            "baseMVA": case.baseMVA,
            "bus": [as_dict(b, _BUS_COLS) for b in case.buses],
            "branch": [as_dict(b, _BRANCH_COLS) for b in case.branches],
            "gen": [{**as_dict(g, _GEN_COLS), **as_dict(g.cost, _COST_COLS)} for g in case.gens],
        }
        return json.dumps(doc, indent=1)

    lines = [f"baseMVA {_fmt(case.baseMVA)}"]
    for name, recs, cols in (("BUS", case.buses, _BUS_COLS), ("BRANCH", case.branches, _BRANCH_COLS),
                             ("GEN", case.gens, _GEN_COLS), ("COST", case.gencosts, _COST_COLS)):
        lines.append(name)
        lines.append("# " + " ".join(c[0] for c in cols))
        for r in recs:
            lines.append(" ".join(_fmt(getattr(r, c[1])) for c in cols))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.message}"


class ValidationReport(list):
    """List of :class:`ValidationIssue`; empty means the case is usable."""

    @property
    def ok(self) -> bool:
        return len(self) == 0


def validate_case(c: Case) -> ValidationReport:
    rep = ValidationReport()

    def add(code, msg):
        rep.append(ValidationIssue(code, msg))

    if not (c.baseMVA > 0):
        add("nonpositive baseMVA", f"baseMVA = {c.baseMVA}")
    ids = {}
    for b in c.buses:
        if b.id in ids:
            add("duplicate bus", f"bus {b.id} appears more than once")
        ids[b.id] = b
        if not (0 < b.Vmin <= b.Vmax):
            add("bad voltage bounds", f"bus {b.id}: Vmin={b.Vmin}, Vmax={b.Vmax}")
    nref = sum(1 for b in c.buses if b.type == BusType.REF)
    if nref == 0:
        add("no slack", "no bus of type REF")
    elif nref > 1:
        add("multiple slack", f"{nref} buses of type REF")

    for k, br in enumerate(c.branches):
        for end in ("fbus", "tbus"):
            if getattr(br, end) not in ids:
                add("unknown bus", f"branch {k}: {end}={getattr(br, end)} is not a bus")
        if br.fbus == br.tbus:
            add("self loop", f"branch {k} connects bus {br.fbus} to itself")
        if br.r ** 2 + br.x ** 2 <= 0:
            add("zero impedance", f"branch {k}: r = x = 0")
        tau = br.tau0 if br.tau0 != 0 else 1.0
        if tau < 0:
            add("negative tap", f"branch {k}: tau={br.tau0}")
        if br.Imax < 0:
            add("negative current limit", f"branch {k}: Imax={br.Imax}")
        if br.adjustable:
            if br.tauMin <= 0:
                add("nonpositive tap lower bound", f"branch {k}: tauMin={br.tauMin}")
            if not (br.tauMin <= tau <= br.tauMax):
                add("tap outside bounds", f"branch {k}: tau={tau} not in [{br.tauMin}, {br.tauMax}]")
            if not (br.thetaMin <= br.theta0 <= br.thetaMax):
                add("shift outside bounds",
                    f"branch {k}: theta={br.theta0} not in [{br.thetaMin}, {br.thetaMax}]")

    for k, g in enumerate(c.gens):
        if g.bus not in ids:
            add("unknown bus", f"gen {k}: bus={g.bus} is not a bus")
        if g.Pmin > g.Pmax:
            add("bad P bounds", f"gen {k}: Pmin={g.Pmin} > Pmax={g.Pmax}")
        if g.Qmin > g.Qmax:
            add("bad Q bounds", f"gen {k}: Qmin={g.Qmin} > Qmax={g.Qmax}")
        for attr in ("c2", "c1", "c0"):
            if not math.isfinite(getattr(g.cost, attr)):
                add("nonfinite cost", f"gen {k}: {attr}={getattr(g.cost, attr)}")
    return rep


@dataclass(frozen=True, eq=False)
class InternalModel:
    """Per-unit network with contiguous 0-based bus indexing.

    Branch arrays only cover in-service branches. Angles are radians.
    ``adj`` holds the indices (into the branch arrays) of branches whose tap
    ratio and shift are optimization variables.
    """

    baseMVA: float
    bus_ids: np.ndarray
    bus_types: np.ndarray
    Cf: sp.csr_matrix
    Ct: sp.csr_matrix
    Cg: sp.csr_matrix
    ys: np.ndarray
    bc: np.ndarray
    Ysh: np.ndarray
    Sd: np.ndarray
    tau0: np.ndarray
    theta0: np.ndarray
    tau_min: np.ndarray
    tau_max: np.ndarray
    theta_min: np.ndarray
    theta_max: np.ndarray
    adj: np.ndarray
    Imax: np.ndarray
    branch_rows: np.ndarray
    Vm0: np.ndarray
    Va0: np.ndarray
    Vmin: np.ndarray
    Vmax: np.ndarray
    gen_bus: np.ndarray
    Pg0: np.ndarray
    Qg0: np.ndarray
    Pmin: np.ndarray
    Pmax: np.ndarray
    Qmin: np.ndarray
    Qmax: np.ndarray
    cost: np.ndarray  # (ng, 3): c2, c1, c0 per MW

    @property
    def nb(self) -> int:
        return len(self.bus_ids)

    @property
    def nl(self) -> int:
        return len(self.ys)

    @property
    def ng(self) -> int:
        return len(self.gen_bus)

    @property
    def na(self) -> int:
        return len(self.adj)

    @property
    def ref(self) -> int:
        return int(np.flatnonzero(self.bus_types == BusType.REF)[0])

    @property
    def pv(self) -> np.ndarray:
        return np.flatnonzero(self.bus_types == BusType.PV)

    @property
    def pq(self) -> np.ndarray:
        return np.flatnonzero(self.bus_types == BusType.PQ)

    @property
    def f(self) -> np.ndarray:
        return self.Cf.indices

    @property
    def t(self) -> np.ndarray:
        return self.Ct.indices

    @property
    def constrained(self) -> np.ndarray:
        """Branches with a current limit (``Imax > 0``)."""
        return np.flatnonzero(self.Imax > 0)

    def equals(self, other: "InternalModel", tol: float = 0.0) -> bool:
        for fl in fields(self):
            a, b = getattr(self, fl.name), getattr(other, fl.name)
            if sp.issparse(a):
                d = abs(a - b)
                if a.shape != b.shape or (d.nnz and d.max() > tol):
                    return False
            elif isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.allclose(a, b, rtol=0, atol=tol):
                    return False
            elif abs(a - b) > tol:
                return False
        return True


def _incidence(rows_to_cols: np.ndarray, ncols: int) -> sp.csr_matrix:
    n = len(rows_to_cols)
    return sp.csr_matrix((np.ones(n), (np.arange(n), rows_to_cols)), shape=(n, ncols))


def to_internal(c: Case) -> InternalModel:
    """Convert a validated case to per-unit, 0-based internal form."""
    rep = validate_case(c)
    if rep:
        raise CaseError("invalid case: " + "; ".join(map(str, rep)))
    base = c.baseMVA
    nb = len(c.buses)
    index = {b.id: i for i, b in enumerate(c.buses)}
    live = [k for k, br in enumerate(c.branches) if br.status]
    brs = [c.branches[k] for k in live]

    f = np.array([index[br.fbus] for br in brs], dtype=int)
    t = np.array([index[br.tbus] for br in brs], dtype=int)
    if nb > 1:
        touched = np.zeros(nb, dtype=bool)
        touched[f] = True
        touched[t] = True
        if not touched.all():
            lonely = [c.buses[i].id for i in np.flatnonzero(~touched)]
            raise IsolatedBusError(f"isolated bus(es) after removing out-of-service branches: {lonely}")

    def arr(seq, dtype=float):
        return np.array(list(seq), dtype=dtype)

    r = arr(br.r for br in brs)
    x = arr(br.x for br in brs)
    adjustable = arr((br.adjustable for br in brs), bool)
    gbus = np.array([index[g.bus] for g in c.gens], dtype=int)
    ng = len(gbus)
    deg = np.pi / 180.0
    return InternalModel(
        baseMVA=float(base),
        bus_ids=arr((b.id for b in c.buses), int),
        bus_types=arr((int(b.type) for b in c.buses), int),
        Cf=_incidence(f, nb),
        Ct=_incidence(t, nb),
        Cg=sp.csr_matrix((np.ones(ng), (gbus, np.arange(ng))), shape=(nb, ng)),
        ys=1.0 / (r + 1j * x) if len(brs) else np.zeros(0, complex),
        bc=arr(br.b for br in brs),
        Ysh=arr(((b.Gs + 1j * b.Bs) / base for b in c.buses), complex),
        Sd=arr(((b.Pd + 1j * b.Qd) / base for b in c.buses), complex),
        tau0=arr(br.tau0 if br.tau0 != 0 else 1.0 for br in brs),
        theta0=arr(br.theta0 for br in brs) * deg,
        tau_min=arr(br.tauMin for br in brs),
        tau_max=arr(br.tauMax for br in brs),
        theta_min=arr(br.thetaMin for br in brs) * deg,
        theta_max=arr(br.thetaMax for br in brs) * deg,
        adj=np.flatnonzero(adjustable),
        Imax=arr(br.Imax for br in brs),
        branch_rows=np.array(live, dtype=int),
        Vm0=arr(b.Vm0 for b in c.buses),
        Va0=arr(b.Va0 for b in c.buses) * deg,
        Vmin=arr(b.Vmin for b in c.buses),
        Vmax=arr(b.Vmax for b in c.buses),
        gen_bus=gbus,
        Pg0=arr(g.Pg0 for g in c.gens) / base,
        Qg0=arr(g.Qg0 for g in c.gens) / base,
        Pmin=arr(g.Pmin for g in c.gens) / base,
        Pmax=arr(g.Pmax for g in c.gens) / base,
        Qmin=arr(g.Qmin for g in c.gens) / base,
        Qmax=arr(g.Qmax for g in c.gens) / base,
        cost=np.array([[g.cost.c2, g.cost.c1, g.cost.c0] for g in c.gens], dtype=float).reshape(ng, 3),
    )


def to_case(m: InternalModel) -> Case:
    """Rebuild a (normalized) Case from an internal model.

    ``to_internal(to_case(m))`` reproduces ``m`` except for ``branch_rows``,
    which is renumbered because out-of-service branches are gone.
    """
    base = m.baseMVA
    rad = 180.0 / np.pi
    buses = tuple(
        BusRecord(int(m.bus_ids[i]), BusType(int(m.bus_types[i])), m.Sd[i].real * base, m.Sd[i].imag * base,
                  m.Ysh[i].real * base, m.Ysh[i].imag * base, m.Vm0[i], m.Va0[i] * rad, m.Vmin[i], m.Vmax[i])
        for i in range(m.nb)
    )
    z = 1.0 / m.ys if m.nl else m.ys
    adj = set(m.adj.tolist())
    branches = tuple(
        BranchRecord(int(m.bus_ids[m.f[k]]), int(m.bus_ids[m.t[k]]), z[k].real, z[k].imag, m.bc[k],
                     m.tau0[k], m.theta0[k] * rad, m.tau_min[k], m.tau_max[k],
                     m.theta_min[k] * rad, m.theta_max[k] * rad, k in adj, m.Imax[k], True)
        for k in range(m.nl)
    )
    gens = tuple(
        GenRecord(int(m.bus_ids[m.gen_bus[g]]), m.Pg0[g] * base, m.Qg0[g] * base, m.Pmin[g] * base,
                  m.Pmax[g] * base, m.Qmin[g] * base, m.Qmax[g] * base, CostRecord(*m.cost[g]))
        for g in range(m.ng)
    )
    return Case(base, buses, branches, gens)


def permute_buses(c: Case, order: Sequence[int]) -> Case:
    """Return ``c`` with its bus records reordered (IDs untouched)."""
    return replace(c, buses=tuple(c.buses[i] for i in order))
