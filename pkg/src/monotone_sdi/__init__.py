"""Simulation and verification toolkit for stochastic monotone inclusions.

The package simulates dX in -A(X) dt - eps(t) X dt + sigma(t, X) dB for
maximal monotone operators A from a closed catalog (including operators
whose domain has empty interior), tracks the (X, Y, M) solution
decomposition together with the auxiliary process W, and checks the
convergence rates and concentration bounds the dynamics are expected to
satisfy, at desk scale.
"""

__version__ = "0.1.0"

from . import diagnostics, ensemble, integrator, operators, scenario, schedules, subspace  # noqa: F401,E402
