"""Constant mean curvature one n-noids by the DPW method.

Modules, in pipeline order: ``wiener`` (Laurent loops), ``loops`` (matrix
loops, Iwasawa splitting, Sym formula), ``potential`` (end data and the
meromorphic potential), ``transport`` (the loop-valued Cauchy problem and
monodromies), ``solver`` (the equations in t and x), ``surface`` (immersion,
diagnostics, meshes) and ``cli``.
"""

from .potential import NoidConfig, ParamVector, central_params
from .solver import continue_in_t, residual, solve_at
from .surface import build_mesh, end_diagnostics, evaluate_immersion, hopf_differential

__all__ = [
    "NoidConfig",
    "ParamVector",
    "central_params",
    "continue_in_t",
    "residual",
    "solve_at",
    "build_mesh",
    "end_diagnostics",
    "evaluate_immersion",
    "hopf_differential",
]

__version__ = "0.1.0"
