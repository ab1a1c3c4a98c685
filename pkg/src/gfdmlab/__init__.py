"""gfdmlab: a meshfree generalized-finite-difference flow workbench.

The package couples a point-cloud incompressible-flow solver (channel flow
around a cylinder, drag/lift bookkeeping) with a simulation-campaign and
machine-learning pipeline: Latin hypercube sampling over the solver's tunable
parameters, tree-ensemble regression with conformal prediction intervals,
active-learning range refinement, and an HTTP prediction service.
"""

__version__ = "0.1.0"

from gfdmlab import errors

__all__ = ["errors", "__version__"]
