"""Backward scattering for the Maxwell-Klein-Gordon system from radiation fields.

Modules: :mod:`radiation_data` (scattering data, charge, asymptotic gauge),
:mod:`geometry`, :mod:`kernels`, :mod:`approx` (explicit approximate solution),
:mod:`solver` (backward remainder evolution), :mod:`diagnostics` and :mod:`cli`.
"""

__version__ = "0.1.0"

from .radiation_data import (RadiationFieldSet, compute_charge, solve_gauge_constraint,
                             synthetic_data)
from .approx import build_approximate, extract_radiation
from .solver import SolverGrid, solve_backward

__all__ = ["RadiationFieldSet", "compute_charge", "solve_gauge_constraint", "synthetic_data",
           "build_approximate", "extract_radiation", "SolverGrid", "solve_backward"]
