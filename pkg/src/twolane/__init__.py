"""Two-lane ARZ traffic model with outlet speed-limit boundary control.

Modules: ``model`` (parameters, steady states, linearisation, transforms),
``pde_sim`` (linearised and nonlinear solvers), ``kernels`` (backstepping
kernels), ``control`` (feedback laws and observer) and ``harness``
(configuration, scenarios, runs and CLI).
"""

__version__ = "0.1.0"
