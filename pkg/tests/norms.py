"""Norm functions used as ``custom`` metrics in tests and configs."""

import jax.numpy as jnp


def quartic(x, y):
    """Euclidean norm perturbed by a quartic term; strongly convex for small weight."""
    r2 = y @ y
    w = 0.2 + 0.05 * jnp.sin(x[0])
    return jnp.sqrt(r2 + w * (y[0] ** 4 + y[1] ** 4) / r2)
