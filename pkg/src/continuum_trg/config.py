"""Run configuration shared by the flows and the command line front end."""
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import InvalidConfig


@dataclass
class RunConfig:
    """Parameters of one TRG run or sweep.

    The lattice has ``N = 2**(2*sites_exponent)`` vertices, so the flow
    performs ``2*sites_exponent`` coarse-graining steps.
    """

    mass: float = 1.0
    order: int = 0
    chi_max: int = 16
    sites_exponent: int = 20
    zero_tol: float = 1e-10
    output_dir: Path = Path("out")
    emit: tuple = ("csv", "json")
    sweep_masses: tuple = ()
    sweep_chis: tuple = ()
    oracle: bool = False
    diagnostics: bool = False
    seed: int = 0

    @property
    def levels(self):
        return 2 * self.sites_exponent

    def validate(self):
        if not np.isfinite(self.mass) or self.mass <= 0:
            raise InvalidConfig(f"mass must be positive, got {self.mass}")
        if self.order not in (0, 1):
            raise InvalidConfig(f"order must be 0 or 1, got {self.order}")
        if int(self.chi_max) != self.chi_max or self.chi_max < 1:
            raise InvalidConfig(f"chi_max must be an integer >= 1, got {self.chi_max}")
        if int(self.sites_exponent) != self.sites_exponent or self.sites_exponent < 1:
            raise InvalidConfig(f"sites_exponent must be an integer >= 1, got {self.sites_exponent}")
        if not (0 < self.zero_tol < 1):
            raise InvalidConfig(f"zero_tol must lie in (0, 1), got {self.zero_tol}")
        bad = set(self.emit) - {"csv", "json"}
        if bad:
            raise InvalidConfig(f"unknown emit formats: {sorted(bad)}")
        for m in self.sweep_masses:
            if not np.isfinite(m) or m <= 0:
                raise InvalidConfig(f"sweep masses must be positive, got {m}")
        for c in self.sweep_chis:
            if int(c) != c or c < 1:
                raise InvalidConfig(f"sweep bond dimensions must be integers >= 1, got {c}")
        return self

    def replace(self, **changes):
        data = asdict(self)
        data.update(changes)
        return RunConfig(**data)

    def to_dict(self):
        d = asdict(self)
        d["output_dir"] = str(self.output_dir)
        d["emit"] = list(self.emit)
        d["sweep_masses"] = list(self.sweep_masses)
        d["sweep_chis"] = list(self.sweep_chis)
        return d
