"""Risk-bounded multi-agent motion planning in velocity space.

Plans collision-free trajectories for stochastic double-integrator agents
by tightening velocity-obstacle and static-obstacle chance constraints and
solving a per-agent mixed-integer QP in a receding-horizon loop.
"""

__version__ = "0.1.0"

from . import chance, dynamics, geometry, qp
from .errors import VoplanError

__all__ = [
    "chance",
    "dynamics",
    "geometry",
    "qp",
    "VoplanError",
    "__version__",
]
