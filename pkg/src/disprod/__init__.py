"""Distribution-propagation planning with CEM and MPPI baselines."""

import jax

# Tolerances down to 1e-10 in the derivative checks need double precision.
jax.config.update("jax_enable_x64", True)

from disprod.errors import ArgumentError, DomainError, PropagationError  # noqa: E402

__version__ = "0.1.0"

__all__ = ["ArgumentError", "DomainError", "PropagationError", "__version__"]
