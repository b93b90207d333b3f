"""Indirect standardization and descriptive rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class StratifiedData:
    """Observed counts and populations by area (rows) and age group (columns)."""

    obs: np.ndarray
    pop: np.ndarray
    area_ids: tuple = ()
    groups: tuple = ()

    def __post_init__(self):
        o = np.atleast_2d(np.asarray(self.obs, dtype=float))
        N = np.atleast_2d(np.asarray(self.pop, dtype=float))
        if o.shape != N.shape:
            raise ValueError("counts and populations must have the same shape")
        if o.shape[1] < 1:
            raise ValueError("need at least one age group")
        if np.any(o < 0) or np.any(N < o):
            raise ValueError("need 0 <= obs <= pop in every cell")
        object.__setattr__(self, "obs", o)
        object.__setattr__(self, "pop", N)

    @property
    def n(self) -> int:
        return self.obs.shape[0]

    @classmethod
    def from_long(cls, area, group, obs, pop, area_order=None) -> "StratifiedData":
        """Build from long-format rows ``(area, group, obs, pop)``."""
        area = [str(a) for a in area]
        group = [str(g) for g in group]
        ids = list(area_order) if area_order is not None else list(dict.fromkeys(area))
        groups = sorted(set(group))
        ai = {a: i for i, a in enumerate(ids)}
        gi = {g: j for j, g in enumerate(groups)}
        O = np.zeros((len(ids), len(groups)))
        N = np.zeros_like(O)
        seen = set()
        for a, g, o, p in zip(area, group, obs, pop):
            if a not in ai:
                raise ValueError(f"unknown area id {a!r}")
            if (a, g) in seen:
                raise ValueError(f"duplicate row for area {a!r}, group {g!r}")
            seen.add((a, g))
            O[ai[a], gi[g]] = float(o)
            N[ai[a], gi[g]] = float(p)
        return cls(O, N, tuple(ids), tuple(groups))


def expected_cases_indirect(data: StratifiedData) -> np.ndarray:
    """E_i = sum_j N_ij O_j / N_j with study-wide age-group totals O_j, N_j."""
    Oj = data.obs.sum(axis=0)
    Nj = data.pop.sum(axis=0)
    bad = (Nj == 0) & (Oj > 0)
    if bad.any():
        raise ValueError("age group with zero population but positive count")
    rate = np.divide(Oj, Nj, out=np.zeros_like(Oj), where=Nj > 0)
    return data.pop @ rate


def crude_rate_and_smr(obs, pop, expected):
    """Crude rate per 100,000 and SMR; undefined entries are NaN."""
    o = np.asarray(obs, dtype=float)
    N = np.asarray(pop, dtype=float)
    E = np.asarray(expected, dtype=float)
    cr = np.divide(o * 1e5, N, out=np.full_like(o, np.nan), where=N > 0)
    smr = np.divide(o, E, out=np.full_like(o, np.nan), where=E > 0)
    return cr, smr
