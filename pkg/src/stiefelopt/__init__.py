"""Optimization on the Stiefel manifold through a global tangent space.

The package bundles the manifold machinery (sections, lifts, exact
geodesic retractions), three optimizers that treat Euclidean and
orthonormality-constrained weights uniformly, a small attention network
with hand-written backpropagation to drive them, and a CLI for seeded,
reproducible runs.
"""

from .linalg import RankDeficientError, householder_qr, matrix_exp, skew_part
from .network import TransformerConfig, init_params, model_backward, model_forward
from .optimizers import (
    Adam,
    GradientDescent,
    Hyperparameters,
    Momentum,
    make_optimizer,
    optimizer_step,
)
from .stiefel import (
    HorizontalElement,
    NonConvergenceError,
    SectionMatrix,
    StiefelPoint,
    TangentVector,
    canonical_metric,
    geodesic_step,
    lift,
    phi1_series,
    random_stiefel,
    riemannian_gradient,
    section,
    skew_generator,
)

__version__ = "0.1.0"
