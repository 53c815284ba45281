"""Continuous-field tensor renormalization group for the 2D lattice scalar boson.

Exact gaussian flow (``free_trg``) plus the first-order quartic correction
(``pert_trg``), with oracles, diagnostics and a command line front end.
"""
from .config import RunConfig
from .errors import (ContinuumTRGError, NumericalError, ValidationError)
from .free_trg import init_free, run_free_flow
from .oracles import exact_f0, exact_f1
from .pert_trg import init_pert, run_pert_flow
from .trace import FreeEnergyReport, LevelRecord, RGTrace

__all__ = ["RunConfig", "ContinuumTRGError", "NumericalError", "ValidationError", "init_free",
           "run_free_flow", "exact_f0", "exact_f1", "init_pert", "run_pert_flow",
           "FreeEnergyReport", "LevelRecord", "RGTrace"]
