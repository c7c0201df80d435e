"""Taming maps T(z, h) and executable checks of their growth/defect bounds.

Every map acts on vectors stored along axis 0 of ``z`` (``(d, ...)``); any
trailing axes are batch axes (or noise columns).  Families:

identity        z
truncation      z if |z| <= h^-alpha else theta * h^-alpha * z/|z|   (radial)
balanced_tanh   h^-p tanh(h^p z)                                      (componentwise)
tamed           z / (1 + h^p |z|)
fully_tamed     z / (1 + h^a |z| + h^a |w|)                           (companion w)
modified        z / (1 + h^p |z| + h^p |w|)                           (companion w)
drift_tamed     z / (1 + h^p w^2)                                     (companion w)

For the companion families ``w`` is a scalar magnitude per batch element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = (
    "identity", "truncation", "balanced_tanh", "tamed",
    "fully_tamed", "modified", "drift_tamed",
)
COMPANION_FAMILIES = ("fully_tamed", "modified", "drift_tamed")
# aliases accepted on the command line
FAMILY_ALIASES = {"balanced": "balanced_tanh", "tanh": "balanced_tanh", "none": "identity"}


def vector_norm(z: np.ndarray) -> np.ndarray:
    """Euclidean norm over axis 0; exact ``abs`` when d == 1.

    Summed in a fixed order so the result does not depend on memory layout.
    """
    if z.shape[0] == 1:
        return np.abs(z[0])
    acc = z[0] * z[0]
    for i in range(1, z.shape[0]):
        acc = acc + z[i] * z[i]
    return np.sqrt(acc)


def y_minus_tanh(y):
    """Accurate y - tanh(y), avoiding cancellation for small |y|."""
    y = np.asarray(y, dtype=float)
    out = y - np.tanh(y)
    small = np.abs(y) < 0.1
    if np.any(small):
        ys = y[small]
        y2 = ys * ys
        # odd Taylor coefficients of y - tanh(y), through y^15
        coef = (1 / 3, -2 / 15, 17 / 315, -62 / 2835, 1382 / 155925,
                -21844 / 6081075, 929569 / 638512875)
        acc = np.zeros_like(ys)
        for c in reversed(coef):
            acc = acc * y2 + c
        out[small] = acc * y2 * ys
    return out


@dataclass(frozen=True)
class Exponents:
    """Exponents a map configuration claims for its growth and defect bounds.

    ``gamma``: |T(z,h)| <= C h^-gamma.  Defect |z - T| <= C h^tau |z|^l1
    (companion families: C h^tau |z| (|z|^s + |w|^s) with the same tau).
    ``q0`` and ``eta_q0`` are the one-step defect order and growth.
    """

    gamma: float
    tau: float
    l1: float
    q0: float
    eta_q0: float
    varsigma: float


@dataclass(frozen=True)
class TamingMap:
    """A taming-map family with its parameters.

    alpha    truncation exponent, or the alpha_1 of ``fully_tamed``
    power    exponent of h in tanh/tamed/modified/drift_tamed forms
    theta    0 or 1, truncation only
    varsigma free parameter in [0, 1] selecting which defect bound to claim
    epsilon  free parameter (> 0) of the truncation defect bound
    gamma_override  finite gamma for the identity family (negative controls)
    """

    family: str
    alpha: float | None = None
    power: float | None = None
    theta: int = 1
    varsigma: float = 0.5
    epsilon: float | None = None
    gamma_override: float | None = None
    declared: Exponents = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        fam = FAMILY_ALIASES.get(self.family, self.family)
        if fam not in FAMILIES:
            raise ValueError(f"unknown map family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if not 0.0 <= self.varsigma <= 1.0:
            raise ValueError("varsigma must lie in [0, 1]")
        if fam == "truncation":
            if self.alpha is None or self.alpha <= 0:
                raise ValueError("truncation needs alpha > 0")
            if self.theta not in (0, 1):
                raise ValueError("theta must be 0 or 1")
            if self.epsilon is None:
                object.__setattr__(self, "epsilon", float(self.alpha))
            if self.epsilon <= 0:
                raise ValueError("epsilon must be positive")
        if fam == "fully_tamed":
            if self.alpha is None or not 0 < self.alpha <= 1:
                raise ValueError("fully_tamed needs alpha in (0, 1]")
        if fam in ("balanced_tanh", "tamed", "modified", "drift_tamed"):
            if self.power is None or self.power <= 0:
                raise ValueError(f"{fam} needs power > 0")
        if self.gamma_override is not None and fam != "identity":
            raise ValueError("gamma_override is only meaningful for the identity family")
        object.__setattr__(self, "declared", _declared_exponents(self))

    @property
    def needs_companion(self) -> bool:
        return self.family in COMPANION_FAMILIES

    def with_varsigma(self, varsigma: float) -> "TamingMap":
        return TamingMap(self.family, self.alpha, self.power, self.theta, varsigma,
                         self.epsilon, self.gamma_override)

    # growth cap |T| <= cap(h); componentwise for balanced_tanh
    def cap(self, h: float) -> float:
        if self.family == "identity":
            g = self.declared.gamma
            return math.inf if math.isinf(g) else h ** (-g)
        if self.family == "drift_tamed":
            # self-companion (w = |z|): max_z z/(1 + h^p z^2) = h^{-p/2} / 2
            return 0.5 * h ** (-self.power / 2)
        return h ** (-self.declared.gamma)

    def __call__(self, z, h, w=None):
        return apply_map(self, z, h, w)


def _declared_exponents(m: TamingMap) -> Exponents:
    s = m.varsigma
    fam = m.family
    if fam == "identity":
        g = math.inf if m.gamma_override is None else float(m.gamma_override)
        return Exponents(gamma=g, tau=math.inf, l1=1.0, q0=math.inf, eta_q0=1.0, varsigma=s)
    if fam == "truncation":
        e, a = m.epsilon, m.alpha
        return Exponents(gamma=a, tau=e, l1=1 + e / a, q0=e, eta_q0=1 + e / a, varsigma=s)
    if fam == "balanced_tanh":
        p = m.power
        return Exponents(gamma=p, tau=p * (2 - 2 * s), l1=3 - 2 * s,
                         q0=p * (2 - 2 * s), eta_q0=3 - 2 * s, varsigma=s)
    if fam == "tamed":
        p = m.power
        return Exponents(gamma=p, tau=p * s, l1=1 + s, q0=p * s, eta_q0=1 + s, varsigma=s)
    if fam == "fully_tamed":
        a = m.alpha
        return Exponents(gamma=a, tau=a * s, l1=1 + s, q0=a * s, eta_q0=1 + s, varsigma=s)
    if fam == "modified":
        p = m.power
        return Exponents(gamma=p, tau=p * s, l1=1 + s, q0=p * s, eta_q0=1 + s, varsigma=s)
    if fam == "drift_tamed":
        p = m.power
        # growth holds only with w = |z|; see cap()
        return Exponents(gamma=p / 2, tau=p * s, l1=1 + 2 * s, q0=p * s,
                         eta_q0=1 + 2 * s, varsigma=s)
    raise AssertionError(fam)


def _check_h(h):
    if not 0.0 < h < 1.0:
        raise ValueError(f"step size h={h} must lie in (0, 1)")


def _truncate(z, norm, cap, theta):
    out = z.copy()
    over = norm > cap
    if not np.any(over):
        return out
    if theta == 0:
        out[:, over] = 0.0
        return out
    zo = z[:, over]
    scale = cap / norm[over]
    t = zo * scale
    # nudge the scale down until the computed norm sits inside the cap
    for _ in range(8):
        bad = vector_norm(t) > cap
        if not np.any(bad):
            break
        scale = np.where(bad, np.nextafter(scale, 0.0), scale)
        t = zo * scale
    out[:, over] = t
    return out


def _prepare(z):
    z = np.asarray(z, dtype=float)
    scalar = z.ndim == 0
    if scalar:
        z = z.reshape(1)
    return z, scalar


def apply_map(m: TamingMap, z, h: float, w=None) -> np.ndarray:
    """Evaluate T(z, h; w).  ``z`` is a vector (axis 0) with optional batch axes."""
    _check_h(h)
    if m.needs_companion and w is None:
        raise ValueError(f"{m.family} needs the companion magnitude w")
    z, scalar = _prepare(z)
    fam = m.family
    if fam == "identity":
        out = z.copy()
    elif fam == "truncation":
        norm = vector_norm(z)
        if norm.ndim == 0:
            out = _truncate(z[:, None], norm[None], h ** (-m.alpha), m.theta)[:, 0]
        else:
            out = _truncate(z, norm, h ** (-m.alpha), m.theta)
    elif fam == "balanced_tanh":
        hp = h ** m.power
        y = hp * z
        out = np.tanh(y) / hp
        # tanh(y) == y in double here; avoids growth through subnormal y
        tiny = np.abs(y) < 1e-9
        if np.any(tiny):
            out[tiny] = z[tiny]
    elif fam == "tamed":
        out = z / (1.0 + h ** m.power * vector_norm(z))
    elif fam == "fully_tamed":
        ha = h ** m.alpha
        out = z / (1.0 + ha * vector_norm(z) + ha * np.abs(w))
    elif fam == "modified":
        hp = h ** m.power
        out = z / (1.0 + hp * vector_norm(z) + hp * np.abs(w))
    elif fam == "drift_tamed":
        w = np.abs(w)
        out = z / (1.0 + h ** m.power * w * w)
    else:
        raise AssertionError(fam)
    return out[0] if scalar else out


def map_defect(m: TamingMap, z, h: float, w=None) -> np.ndarray:
    """|z - T(z, h; w)| computed without cancellation."""
    _check_h(h)
    if m.needs_companion and w is None:
        raise ValueError(f"{m.family} needs the companion magnitude w")
    z, _ = _prepare(z)
    fam = m.family
    norm = vector_norm(z)
    if fam == "identity":
        return np.zeros_like(norm)
    if fam == "truncation":
        cap = h ** (-m.alpha)
        t = apply_map(m, z, h)
        over = norm > cap
        return np.where(over, vector_norm(z - t), 0.0)
    if fam == "balanced_tanh":
        hp = h ** m.power
        return vector_norm(y_minus_tanh(hp * z)) / hp
    if fam in ("tamed", "fully_tamed", "modified"):
        hp = h ** (m.alpha if fam == "fully_tamed" else m.power)
        u = hp * norm
        if fam != "tamed":
            u = u + hp * np.abs(w)
        return norm * u / (1.0 + u)
    if fam == "drift_tamed":
        w = np.abs(w)
        u = h ** m.power * w * w
        return norm * u / (1.0 + u)
    raise AssertionError(fam)


def defect_bound(m: TamingMap, znorm, h: float, w=None) -> np.ndarray:
    """The declared bound C h^tau |z|^l1 (companion form for coupled families)."""
    e = m.declared
    s = e.varsigma
    znorm = np.asarray(znorm, dtype=float)
    if m.family == "identity":
        return np.zeros_like(znorm)
    if m.family in ("fully_tamed", "modified"):
        return h ** e.tau * znorm * (znorm ** s + np.abs(w) ** s)
    if m.family == "drift_tamed":
        return h ** e.tau * znorm * np.abs(w) ** (2 * s)
    return h ** e.tau * znorm ** e.l1


@dataclass
class CheckReport:
    samples: int
    max_violation: float
    violations: int
    witnesses: list

    @property
    def ok(self) -> bool:
        return self.violations == 0


def check_h1_h3(m: TamingMap, sample_count: int, h_grid, z_radius: float, seed,
                dim: int = 1, max_witnesses: int = 10) -> CheckReport:
    """Sample (z, h) pairs and test the growth cap and the defect bound.

    z is drawn with log-uniform norm in [1e-6, z_radius] and random
    direction; h uniformly from ``h_grid``.  For companion families w is
    drawn the same way, except ``drift_tamed`` whose cap is checked in its
    self-companion form w = |z|.  ``max_violation`` is the largest relative
    excess over a bound (0 when none is exceeded).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    h_grid = np.asarray(list(h_grid), dtype=float)
    n = sample_count
    hs = rng.choice(h_grid, size=n)
    radius = np.exp(rng.uniform(np.log(1e-6), np.log(z_radius), size=n))
    direction = rng.standard_normal((dim, n))
    direction /= vector_norm(direction)
    z = direction * radius
    z[:, : n // 8] *= -1.0
    if m.family == "drift_tamed":
        w = radius.copy()
    elif m.needs_companion:
        w = np.exp(rng.uniform(np.log(1e-6), np.log(z_radius), size=n))
    else:
        w = None

    excess = np.zeros(n)
    eps = np.finfo(float).eps
    strict = m.family == "truncation"
    for h in np.unique(hs):
        idx = np.flatnonzero(hs == h)
        zz = z[:, idx]
        ww = None if w is None else w[idx]
        t = apply_map(m, zz, float(h), ww)
        zn = vector_norm(zz)
        tn = vector_norm(t)
        slack = 0.0 if strict else 8 * eps * (zn + tn)
        cap = m.cap(float(h))
        if m.family == "balanced_tanh":
            # componentwise: |T_i| <= C h^-gamma and |T_i| <= |z_i|
            over_cap = np.max(np.abs(t) - cap * (1 + 8 * eps), axis=0)
            over_z = np.max(np.abs(t) - np.abs(zz) - 8 * eps * np.abs(zz), axis=0)
        else:
            over_cap = tn - cap - slack
            over_z = tn - zn - slack
        d = map_defect(m, zz, float(h), ww)
        b = defect_bound(m, zn, float(h), ww)
        over_def = d - b - 8 * eps * (d + b)
        worst = np.maximum.reduce([
            over_cap / (cap if np.isfinite(cap) else 1.0),
            over_z / np.maximum(zn, 1e-300),
            over_def / np.maximum(b, 1e-300),
        ])
        excess[idx] = worst

    bad = np.flatnonzero(excess > 0)
    witnesses = []
    for i in bad[np.argsort(-excess[bad])][:max_witnesses]:
        witnesses.append({
            "z": z[:, i].tolist(), "h": float(hs[i]),
            "w": None if w is None else float(w[i]),
            "excess": float(excess[i]),
        })
    return CheckReport(samples=n, max_violation=float(max(0.0, excess.max(initial=0.0))),
                       violations=int(bad.size), witnesses=witnesses)


def preset_maps() -> dict[str, TamingMap]:
    """Map configurations used by the scheme presets."""
    return {
        "ts1": TamingMap("truncation", alpha=1.0, theta=1),
        "bs1": TamingMap("balanced_tanh", power=1.0),
        "te1": TamingMap("tamed", power=1.0),
        "ms1": TamingMap("drift_tamed", power=1.0),
        "ft1": TamingMap("fully_tamed", alpha=1.0),
        "ts2": TamingMap("truncation", alpha=2.0, theta=1),
        "bs2": TamingMap("balanced_tanh", power=2.0),
        "ms2": TamingMap("modified", power=2.0),
        "ms2_tail": TamingMap("tamed", power=2.0),
    }
