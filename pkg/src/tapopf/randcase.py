"""Seeded random networks and operating points for derivative checks."""

from __future__ import annotations

import numpy as np

from .case_model import BranchRecord, BusRecord, BusType, Case, CostRecord, GenRecord, InternalModel
from .variables import VariableVector


def random_case(rng: np.random.Generator, nb: int | None = None, nb_range=(2, 10),
                p_adjustable: float = 0.6, p_limit: float = 0.7) -> Case:
    """Connected random network: a spanning tree plus a few extra branches.

    At least one branch is adjustable and at least one carries a current limit.
    """
    if nb is None:
        nb = int(rng.integers(nb_range[0], nb_range[1] + 1))
    ids = [int(i) for i in rng.permutation(np.arange(1, 3 * nb + 1))[:nb]]
    ref = int(rng.integers(nb))
    buses = []
    for i, bid in enumerate(ids):
        kind = BusType.REF if i == ref else (BusType.PV if rng.random() < 0.3 else BusType.PQ)
        buses.append(BusRecord(
            bid, kind, Pd=float(rng.uniform(0, 80)), Qd=float(rng.uniform(-10, 30)),
            Gs=float(rng.uniform(0, 5)), Bs=float(rng.uniform(-10, 10)),
            Vm0=float(rng.uniform(0.95, 1.05)), Va0=float(rng.uniform(-10, 10)),
            Vmin=0.9, Vmax=1.1))

    pairs = [(int(rng.integers(i)), i) for i in range(1, nb)]
    for _ in range(int(rng.integers(0, nb))):
        a, b = rng.choice(nb, size=2, replace=False) if nb > 1 else (0, 0)
        if a != b:
            pairs.append((int(a), int(b)))

    branches = []
    for a, b in pairs:
        adjustable = bool(rng.random() < p_adjustable)
        tau = float(rng.uniform(0.95, 1.05)) if rng.random() < 0.5 else 0.0
        branches.append(BranchRecord(
            ids[a], ids[b], r=float(rng.uniform(0.0, 0.05)), x=float(rng.uniform(0.02, 0.3)),
            b=float(rng.uniform(0, 0.3)), tau0=tau, theta0=float(rng.uniform(-5, 5)),
            tauMin=0.9, tauMax=1.1, thetaMin=-20.0, thetaMax=20.0,
            adjustable=adjustable,
            Imax=float(rng.uniform(0.5, 3.0)) if rng.random() < p_limit else 0.0))
    if branches and not any(br.adjustable for br in branches):
        k = int(rng.integers(len(branches)))
        branches[k] = BranchRecord(**{**branches[k].__dict__, "adjustable": True})
    if branches and not any(br.Imax > 0 for br in branches):
        k = int(rng.integers(len(branches)))
        branches[k] = BranchRecord(**{**branches[k].__dict__, "Imax": 1.5})

    gen_buses = [ids[ref]] + [ids[i] for i in range(nb) if buses[i].type == BusType.PV]
    gens = tuple(
        GenRecord(bus, Pg0=float(rng.uniform(0, 100)), Qg0=float(rng.uniform(-20, 20)),
                  Pmin=0.0, Pmax=200.0, Qmin=-100.0, Qmax=100.0,
                  cost=CostRecord(float(rng.uniform(0.01, 0.1)), float(rng.uniform(5, 30)), 0.0))
        for bus in gen_buses
    )
    return Case(100.0, tuple(buses), tuple(branches), gens)


def random_point(rng: np.random.Generator, m: InternalModel) -> VariableVector:
    """Operating point with voltages, taps and shifts in typical ranges."""
    nb, ng, na = m.nb, m.ng, m.na
    return VariableVector(
        Va=rng.uniform(-0.3, 0.3, nb),
        Vm=rng.uniform(0.9, 1.1, nb),
        Pg=rng.uniform(0, 2, ng),
        Qg=rng.uniform(-1, 1, ng),
        tau=rng.uniform(0.9, 1.1, na),
        theta=rng.uniform(-0.3, 0.3, na),
    )


def random_complex(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.normal(size=n) + 1j * rng.normal(size=n)
