"""Numerical laboratory for polynomials in random and free unitaries.

Submodules
----------
freegroup       reduced words, balls and the left-regular action
starops         coefficient families and the free operator
weingarten      exact Haar integrals of matrix entries
models          random matrix models, assembly and norms
paths           colored paths, class census and exact trace oracles
nccs            lifted corners and the operator Cauchy-Schwarz bound
schreier        Schreier graphs, tangles and norm lower bounds
linearization   degree halving and spectral probes
resolvent       resolvent diagonals and the non-backtracking identity
experiments     pipelines used by the ``lab`` command
"""

from ._accel import backend
from .freegroup import ReducedWord, ball, star
from .models import assemble, operator_norm, sample
from .starops import CoefficientFamily, kesten, norm_bracket, random_selfadjoint

__version__ = "0.1.0"

__all__ = [
    "CoefficientFamily",
    "ReducedWord",
    "assemble",
    "backend",
    "ball",
    "kesten",
    "norm_bracket",
    "operator_norm",
    "random_selfadjoint",
    "sample",
    "star",
]
