"""Per-level records of a flow and the final free-energy report."""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class LevelRecord:
    """Diagnostics of one coarse-graining step.

    ``singular_values`` holds all ``2*chi`` eigenvalues of ``B_n`` in
    descending order, before any field is discarded.
    """

    level: int
    chi_pre: int
    chi_post: int
    singular_values: np.ndarray
    cdl_distance: float
    log_const: float
    log_const1: Optional[float] = None
    omega2: Optional[np.ndarray] = None
    omega4: Optional[np.ndarray] = None
    omega_matrix: Optional[np.ndarray] = None


@dataclass
class RGTrace:
    records: list = field(default_factory=list)

    def append(self, rec):
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, level):
        for r in self.records:
            if r.level == level:
                return r
        raise KeyError(level)

    def levels(self):
        return [r.level for r in self.records]


@dataclass
class FreeEnergyReport:
    mass: float
    chi_max: int
    sites_exponent: int
    order: int
    f0: float
    f1: Optional[float] = None
    f0_exact: Optional[float] = None
    f1_exact: Optional[float] = None
    wall_time: float = 0.0
    cdl_onset: Optional[int] = None

    @property
    def delta_f0(self):
        if self.f0_exact is None:
            return None
        return abs(self.f0 - self.f0_exact) / abs(self.f0_exact)

    @property
    def delta_f1(self):
        if self.f1 is None or self.f1_exact is None:
            return None
        return abs(self.f1 - self.f1_exact) / abs(self.f1_exact)
