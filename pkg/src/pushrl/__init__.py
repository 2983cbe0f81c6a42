"""Distributed normalized natural policy gradient for planar pushing.

Subsystems: simulator (sim, model), task environment (env), affine
Gaussian policy (policy), value baseline and GAE (value), natural
gradient (npg), distributed runtime (wire, runtime), system
identification (sysid), evaluation harness and CLI (evaluation, cli).
"""

from . import backend

__version__ = "0.1.0"
__all__ = ["backend", "__version__"]
