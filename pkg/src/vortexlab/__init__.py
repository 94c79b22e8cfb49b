"""vortexlab: vortex and Hermitian-Einstein equations on flat bundles over tori."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    bundle_metrics,
    cli,
    flat_bundles,
    flow_solvers,
    product_space,
    stability,
    torus_geometry,
)
