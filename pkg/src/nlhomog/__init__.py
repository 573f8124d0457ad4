"""Homogenization and diffusion approximation for nonlocal convolution-type operators
in a time-dependent Markov environment (one space dimension, periodic fast variable).

Modules
-------
environment   kernels, Markov driver, coefficient fields, hypothesis checks
torus         torus discretisation of the fast generator and the rescaled operator
corrector     cell problems along a driver path, invariant density, burn-in pilot
effective     effective coefficients by ergodic averaging
fullscale     the eps-problem, homogenized solution and the normalized difference
spde          the limit SPDE and exact Gaussian moments of its projections
verify        statistical checks and convergence diagnostics
cli           staged pipeline with a run manifest
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .environment import (EnvironmentModel, MarkovDriver, gaussian_bump, sample_path,  # noqa: F401
                          shipped_environments, validate_hypotheses)
from .torus import assemble_generator  # noqa: F401
from .effective import EffectiveCoefficients, estimate_effective  # noqa: F401
