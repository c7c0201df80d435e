"""SDE problems, their coefficient derivatives and the Ito-Taylor operators.

Arrays use a batch-last layout: a state has shape ``(d, *batch)`` and every
coefficient function returns its natural shape followed by the same batch
axes.  Index conventions:

* ``drift(x)``               -> ``(d, ...)``          f_k
* ``diffusion(x)``           -> ``(d, m, ...)``       g^{k,r}
* ``drift_jacobian(x)``      -> ``(d, d, ...)``       df_k/dx_i       as [k, i]
* ``drift_hessian(x)``       -> ``(d, d, d, ...)``    d2f_k/dx_i dx_j as [k, i, j]
* ``diffusion_jacobian(x)``  -> ``(d, m, d, ...)``    dg^{k,r}/dx_i   as [k, r, i]
* ``diffusion_hessian(x)``   -> ``(d, m, d, d, ...)`` as [k, r, i, j]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

Coefficient = Callable[[np.ndarray], np.ndarray]

# p0 values at or above this are treated as unbounded by the predictor.
P0_UNBOUNDED = 1e5
DEFAULT_LARGE_P0 = 1e6


class DomainError(ValueError):
    """Raised when a coefficient is evaluated at a non-finite state."""


@dataclass(frozen=True)
class SdeProblem:
    """Drift/diffusion pair with closed-form derivatives and growth metadata."""

    name: str
    dim: int
    noise_dim: int
    drift: Coefficient
    diffusion: Coefficient
    drift_jacobian: Coefficient
    drift_hessian: Coefficient
    diffusion_jacobian: Coefficient
    diffusion_hessian: Coefficient
    growth_r: float
    growth_rho: float
    p0: float
    p0_prime: float
    epsilon_slack: float = 0.0
    # documentation only; never consumed downstream
    c_p0: float | None = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise ValueError("dim and noise_dim must be >= 1")
        if self.growth_r < 0 or self.growth_rho < 0:
            raise ValueError("growth exponents must be nonnegative")
        if self.growth_rho > self.growth_r + 1:
            raise ValueError("growth_rho must not exceed growth_r + 1")
        if self.epsilon_slack < 0:
            raise ValueError("epsilon_slack must be nonnegative")

    def as_state(self, x) -> np.ndarray:
        """Coerce ``x`` to a float array of shape ``(d, ...)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            x = x.reshape(1)
        if x.shape[0] != self.dim:
            raise ValueError(f"state has leading size {x.shape[0]}, expected {self.dim}")
        return x

    def meta(self) -> dict:
        return {
            "r": self.growth_r,
            "rho": self.growth_rho,
            "p0": self.p0,
            "p0_prime": self.p0_prime,
            "eps_slack": self.epsilon_slack,
        }


@dataclass(frozen=True)
class OperatorValues:
    """Ito-Taylor operator blocks at a state (batch axes trailing).

    lambda_g[r1, r, k] = (Lambda_{r1} g^r)_k
    L_g[r, k]          = (L g^r)_k
    lambda_f[r, k]     = (Lambda_r f)_k
    L_f[k]             = (L f)_k
    """

    lambda_g: np.ndarray
    L_g: np.ndarray
    lambda_f: np.ndarray
    L_f: np.ndarray


def eval_operators(problem: SdeProblem, x, *, f=None, g=None, check: bool = True) -> OperatorValues:
    """Evaluate Lambda_r g, L g, Lambda_r f and L f at ``x``.

    ``f`` and ``g`` may be passed when the caller already holds them.
    """
    x = problem.as_state(x)
    if check and not np.all(np.isfinite(x)):
        raise DomainError("operators evaluated at a non-finite state")
    if f is None:
        f = problem.drift(x)
    if g is None:
        g = problem.diffusion(x)
    df = problem.drift_jacobian(x)
    d2f = problem.drift_hessian(x)
    dg = problem.diffusion_jacobian(x)
    d2g = problem.diffusion_hessian(x)
    # diffusion matrix a = g g^T
    a = np.einsum("ir...,jr...->ij...", g, g)
    lambda_g = np.einsum("ia...,kri...->ark...", g, dg)
    L_g = np.einsum("kri...,i...->rk...", dg, f) + 0.5 * np.einsum("ij...,krij...->rk...", a, d2g)
    lambda_f = np.einsum("ir...,ki...->rk...", g, df)
    L_f = np.einsum("ki...,i...->k...", df, f) + 0.5 * np.einsum("ij...,kij...->k...", a, d2f)
    return OperatorValues(lambda_g=lambda_g, L_g=L_g, lambda_f=lambda_f, L_f=L_f)


# --- built-in problems ------------------------------------------------------


def _zeros_like_batch(x, *shape):
    return np.zeros(shape + x.shape[1:])


def cubic_linear(p0: float = DEFAULT_LARGE_P0) -> SdeProblem:
    """dX = (X - X^3) dt + X dW."""

    def drift(x):
        return x - x * x * x

    def diffusion(x):
        return x[:, None]

    def drift_jacobian(x):
        return (1.0 - 3.0 * x * x)[:, None]

    def drift_hessian(x):
        return (-6.0 * x)[:, None, None]

    def diffusion_jacobian(x):
        return np.ones((1, 1, 1) + x.shape[1:])

    def diffusion_hessian(x):
        return _zeros_like_batch(x, 1, 1, 1, 1)

    return SdeProblem(
        name="cubic_linear", dim=1, noise_dim=1,
        drift=drift, diffusion=diffusion,
        drift_jacobian=drift_jacobian, drift_hessian=drift_hessian,
        diffusion_jacobian=diffusion_jacobian, diffusion_hessian=diffusion_hessian,
        growth_r=1.0, growth_rho=1.0, p0=p0, p0_prime=p0, epsilon_slack=0.0,
        c_p0=(p0 + 1) / 2,
    )


def cubic_quadratic(sigma: float) -> SdeProblem:
    """dX = (X - X^3) dt + sigma X^2 dW."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    s = float(sigma)

    def drift(x):
        return x - x * x * x

    def diffusion(x):
        return (s * x * x)[:, None]

    def drift_jacobian(x):
        return (1.0 - 3.0 * x * x)[:, None]

    def drift_hessian(x):
        return (-6.0 * x)[:, None, None]

    def diffusion_jacobian(x):
        return (2.0 * s * x)[:, None, None]

    def diffusion_hessian(x):
        return np.full((1, 1, 1, 1) + x.shape[1:], 2.0 * s)

    return SdeProblem(
        name="cubic_quadratic", dim=1, noise_dim=1,
        drift=drift, diffusion=diffusion,
        drift_jacobian=drift_jacobian, drift_hessian=drift_hessian,
        diffusion_jacobian=diffusion_jacobian, diffusion_hessian=diffusion_hessian,
        growth_r=1.0, growth_rho=2.0,
        p0=3.0 / (2.0 * s * s) + 1.0, p0_prime=2.0 / (s * s) + 1.0, epsilon_slack=0.0,
        c_p0=1.0, params={"sigma": s},
    )


def fhn(p0: float = DEFAULT_LARGE_P0, epsilon_slack: float = 1e-9) -> SdeProblem:
    """Stochastic FitzHugh-Nagumo model with multiplicative diagonal noise.

    dX1 = (X1 - X1^3 - X2) dt + (X1 + 1) dW1
    dX2 = (X1 - X2 + 1) dt + (X2 + 1) dW2
    """

    def drift(x):
        x1, x2 = x[0], x[1]
        return np.stack([x1 - x1 * x1 * x1 - x2, x1 - x2 + 1.0])

    def diffusion(x):
        out = _zeros_like_batch(x, 2, 2)
        out[0, 0] = x[0] + 1.0
        out[1, 1] = x[1] + 1.0
        return out

    def drift_jacobian(x):
        out = _zeros_like_batch(x, 2, 2)
        out[0, 0] = 1.0 - 3.0 * x[0] * x[0]
        out[0, 1] = -1.0
        out[1, 0] = 1.0
        out[1, 1] = -1.0
        return out

    def drift_hessian(x):
        out = _zeros_like_batch(x, 2, 2, 2)
        out[0, 0, 0] = -6.0 * x[0]
        return out

    def diffusion_jacobian(x):
        out = _zeros_like_batch(x, 2, 2, 2)
        out[0, 0, 0] = 1.0
        out[1, 1, 1] = 1.0
        return out

    def diffusion_hessian(x):
        return _zeros_like_batch(x, 2, 2, 2, 2)

    return SdeProblem(
        name="fhn", dim=2, noise_dim=2,
        drift=drift, diffusion=diffusion,
        drift_jacobian=drift_jacobian, drift_hessian=drift_hessian,
        diffusion_jacobian=diffusion_jacobian, diffusion_hessian=diffusion_hessian,
        growth_r=1.0, growth_rho=1.0, p0=p0, p0_prime=p0, epsilon_slack=epsilon_slack,
    )


def linear_problem(a: float, b: float) -> SdeProblem:
    """dX = a X dt + b dW (additive noise, scalar)."""
    a, b = float(a), float(b)

    def drift(x):
        return a * x

    def diffusion(x):
        return np.full((1, 1) + x.shape[1:], b)

    def drift_jacobian(x):
        return np.full((1, 1) + x.shape[1:], a)

    return SdeProblem(
        name="linear", dim=1, noise_dim=1,
        drift=drift, diffusion=diffusion,
        drift_jacobian=drift_jacobian,
        drift_hessian=lambda x: _zeros_like_batch(x, 1, 1, 1),
        diffusion_jacobian=lambda x: _zeros_like_batch(x, 1, 1, 1),
        diffusion_hessian=lambda x: _zeros_like_batch(x, 1, 1, 1, 1),
        growth_r=0.0, growth_rho=0.0, p0=math.inf, p0_prime=math.inf,
        epsilon_slack=0.0 if b == 0 else 1e-9, params={"a": a, "b": b},
    )


def drift_only_problem(drift_fn: str = "dissipative") -> SdeProblem:
    """Deterministic test problems with g = 0.

    ``dissipative``: f = -x^3.  ``zero``: f = 0.
    """
    if drift_fn == "dissipative":
        def drift(x):
            return -x * x * x

        def drift_jacobian(x):
            return (-3.0 * x * x)[:, None]

        def drift_hessian(x):
            return (-6.0 * x)[:, None, None]
        r = 1.0
    elif drift_fn == "zero":
        def drift(x):
            return np.zeros_like(x)

        def drift_jacobian(x):
            return _zeros_like_batch(x, 1, 1)

        def drift_hessian(x):
            return _zeros_like_batch(x, 1, 1, 1)
        r = 0.0
    else:
        raise ValueError(f"unknown drift {drift_fn!r}")

    return SdeProblem(
        name=f"drift_only_{drift_fn}", dim=1, noise_dim=1,
        drift=drift, diffusion=lambda x: _zeros_like_batch(x, 1, 1),
        drift_jacobian=drift_jacobian, drift_hessian=drift_hessian,
        diffusion_jacobian=lambda x: _zeros_like_batch(x, 1, 1, 1),
        diffusion_hessian=lambda x: _zeros_like_batch(x, 1, 1, 1, 1),
        growth_r=r, growth_rho=0.0, p0=math.inf, p0_prime=math.inf,
    )


BUILTIN_PROBLEMS = ("cubic_linear", "cubic_quadratic", "fhn")


def builtin_problem(name: str, params: Mapping[str, float] | None = None) -> SdeProblem:
    """Look up a built-in problem by name.

    ``cubic_quadratic`` requires ``sigma``; ``cubic_linear`` and ``fhn``
    accept an optional ``p0`` override.
    """
    params = dict(params or {})
    if name == "cubic_linear":
        return cubic_linear(p0=float(params.get("p0", DEFAULT_LARGE_P0)))
    if name == "cubic_quadratic":
        if "sigma" not in params:
            raise ValueError("cubic_quadratic needs a sigma parameter")
        return cubic_quadratic(float(params["sigma"]))
    if name == "fhn":
        return fhn(p0=float(params.get("p0", DEFAULT_LARGE_P0)))
    raise ValueError(f"unknown problem {name!r}; expected one of {BUILTIN_PROBLEMS}")
