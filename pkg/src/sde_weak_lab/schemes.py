"""One-step maps and trajectory integrators.

The modified Milstein-Talay step is

    Y + T1(f) h + sum_r T2(g^r) dW_r + sum_{r1,r} T3(Lambda_r1 g^r) I(r1,r)
      + sum_r T4(L g^r) h dW_r + sum_r T5(Lambda_r f - L g^r) dZ_r + T6(L f) h^2/2

and the modified Euler step keeps the first two increments.  The untamed
schemes are the same code with identity maps.  Terms are added to ``y`` one
at a time, in the order above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .maps import TamingMap, apply_map, vector_norm
from .model import SdeProblem, eval_operators
from .stochastic import (
    BatchSpec, BatchStream, PackageAccumulator, StreamSpec, WienerPackage,
    open_stream, package_from_normals, rows_per_step,
)

KINDS = ("euler_maruyama", "milstein_talay", "modified_euler", "modified_mt")
SLOTS = ("T1", "T2", "T3", "T4", "T5", "T6")
DIVERGENCE_THRESHOLD = 1e10
IDENTITY = TamingMap("identity")


@dataclass(frozen=True)
class SchemeConfig:
    """Scheme kind plus one taming map per coefficient block.

    Missing slots default to the identity map.  Euler-type kinds never use
    T3..T6.  With ``companion_coupling`` the T1 map receives |g| (Frobenius)
    and the T2 map receives |f| as companion magnitude; a ``drift_tamed``
    T1 receives |f|.
    """

    kind: str
    maps: Mapping[str, TamingMap] = field(default_factory=dict)
    companion_coupling: bool = False
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        full = {s: self.maps.get(s, IDENTITY) for s in SLOTS}
        unknown = set(self.maps) - set(SLOTS)
        if unknown:
            raise ValueError(f"unknown map slots {sorted(unknown)}")
        if self.kind in ("euler_maruyama", "milstein_talay"):
            if any(m.family != "identity" for m in full.values()):
                raise ValueError(f"{self.kind} is untamed; use the modified kind for maps")
        for s in ("T3", "T4", "T5", "T6"):
            if full[s].needs_companion:
                raise ValueError(f"slot {s} cannot take a companion family")
        if not self.companion_coupling and any(full[s].needs_companion for s in ("T1", "T2")):
            raise ValueError("companion families need companion_coupling=True")
        object.__setattr__(self, "maps", full)

    @property
    def second_order(self) -> bool:
        return self.kind in ("milstein_talay", "modified_mt")

    @property
    def ceiling(self) -> int:
        return 2 if self.second_order else 1


def _all(m: TamingMap) -> dict:
    return {s: m for s in SLOTS}


def scheme_preset(name: str) -> SchemeConfig:
    """Named presets.

    em, mt     untamed Euler-Maruyama / Milstein-Talay
    ts1, bs1   modified Euler with truncation (alpha=1) / tanh (power 1)
    te1        modified Euler with z/(1+h|z|)
    ms1        modified Euler with z/(1+h|f|^2)
    ft1        modified Euler with fully tamed maps (alpha_1=1)
    ts2, bs2   modified MT with truncation (alpha=2) / tanh (power 2) in every slot
    ms2        modified MT with coupled z/(1+h^2|z|+h^2|w|) on T1, T2 and
               z/(1+h^2|z|) on T3..T6
    """
    from .maps import preset_maps

    pm = preset_maps()
    key = name.lower()
    if key == "em":
        return SchemeConfig("euler_maruyama", label="em")
    if key == "mt":
        return SchemeConfig("milstein_talay", label="mt")
    if key in ("ts1", "bs1", "te1"):
        return SchemeConfig("modified_euler", {"T1": pm[key], "T2": pm[key]}, label=key)
    if key in ("ms1", "ft1"):
        return SchemeConfig("modified_euler", {"T1": pm[key], "T2": pm[key]},
                            companion_coupling=True, label=key)
    if key in ("ts2", "bs2"):
        return SchemeConfig("modified_mt", _all(pm[key]), label=key)
    if key == "ms2":
        maps = _all(pm["ms2_tail"])
        maps["T1"] = maps["T2"] = pm["ms2"]
        return SchemeConfig("modified_mt", maps, companion_coupling=True, label=key)
    raise ValueError(f"unknown scheme preset {name!r}; expected one of {PRESETS}")


PRESETS = ("em", "mt", "ts1", "bs1", "te1", "ms1", "ft1", "ts2", "bs2", "ms2")


def _tame(m: TamingMap, z, h, w=None):
    if m.family == "identity":
        return z
    return apply_map(m, z, h, w)


def step(cfg: SchemeConfig, problem: SdeProblem, y, h: float, pkg: WienerPackage) -> np.ndarray:
    """Advance ``y`` (shape ``(d, ...)`` or ``(d,)``) by one step."""
    y = problem.as_state(y)
    m = problem.noise_dim
    if pkg.dW.shape[0] != m:
        raise ValueError(f"package has noise dim {pkg.dW.shape[0]}, problem has {m}")
    if not math.isclose(pkg.h, h, rel_tol=1e-12):
        raise ValueError("package step size differs from h")
    maps = cfg.maps
    f = problem.drift(y)
    g = problem.diffusion(y)

    w1 = w2 = None
    if cfg.companion_coupling:
        fn = vector_norm(f)
        w2 = fn
        if maps["T1"].family == "drift_tamed":
            w1 = fn
        else:
            w1 = vector_norm(g.reshape((-1,) + g.shape[2:]))  # Frobenius

    out = y + _tame(maps["T1"], f, h, w1) * h
    out += np.einsum("kr...,r...->k...", _tame(maps["T2"], g, h, w2), pkg.dW)
    if not cfg.second_order:
        return out

    ops = eval_operators(problem, y, f=f, g=g, check=False)
    lam_g = np.moveaxis(ops.lambda_g, 2, 0)      # (d, m, m, ...)
    L_g = np.moveaxis(ops.L_g, 1, 0)             # (d, m, ...)
    lam_f = np.moveaxis(ops.lambda_f, 1, 0)      # (d, m, ...)
    out += np.einsum("kab...,ab...->k...", _tame(maps["T3"], lam_g, h), pkg.dI)
    out += h * np.einsum("kr...,r...->k...", _tame(maps["T4"], L_g, h), pkg.dW)
    out += np.einsum("kr...,r...->k...", _tame(maps["T5"], lam_f - L_g, h), pkg.dZ)
    out += _tame(maps["T6"], ops.L_f, h) * (0.5 * h * h)
    return out


def _mesh(T: float, N: int) -> float:
    if N < 1 or not T > 0:
        raise ValueError("need N >= 1 and T > 0")
    h = T / N
    if not 0 < h < 1:
        raise ValueError(f"step size T/N = {h} must lie in (0, 1)")
    return h


def mark_divergence(y: np.ndarray, diverged: np.ndarray) -> np.ndarray:
    """Flag lanes whose state is non-finite or larger than the threshold."""
    norm = vector_norm(y)
    return diverged | ~(norm <= DIVERGENCE_THRESHOLD)


@dataclass
class BatchResult:
    terminal: np.ndarray       # (d, B), last finite state for diverged lanes
    diverged: np.ndarray       # (B,) bool
    sup_norm: np.ndarray | None  # (B,) max_n |Y_n|, inf for diverged lanes


def simulate_batch(cfg: SchemeConfig, problem: SdeProblem, x0, T: float, N: int,
                   stream, mode: str = "weak_substitute", track_sup: bool = False,
                   observer: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
                   ) -> BatchResult:
    """Integrate all trajectories of a batch stream on the uniform mesh.

    ``observer(n, y, diverged)`` is called at every mesh point n = 0..N.
    """
    h = _mesh(T, N)
    s = open_stream(stream)
    B = s.count
    d, m = problem.dim, problem.noise_dim
    x0 = np.asarray(x0, dtype=float).reshape(d)
    y = np.repeat(x0[:, None], B, axis=1)
    diverged = np.zeros(B, dtype=bool)
    sup = vector_norm(y).copy() if track_sup else None
    rows = rows_per_step(m, mode)
    if observer is not None:
        observer(0, y, diverged)
    with np.errstate(all="ignore"):
        for n in range(1, N + 1):
            pkg = package_from_normals(s.normals(rows), h, m, mode)
            y_new = step(cfg, problem, y, h, pkg)
            newly = mark_divergence(y_new, diverged)
            if newly.any():
                y = np.where(newly, y, y_new)
                diverged = newly
            else:
                y = y_new
            if track_sup:
                np.maximum(sup, vector_norm(y), out=sup)
            if observer is not None:
                observer(n, y, diverged)
    if track_sup:
        sup[diverged] = np.inf
    return BatchResult(terminal=y, diverged=diverged, sup_norm=sup)


@dataclass
class PathResult:
    terminal: np.ndarray
    diverged: bool
    sup_norm: float


def integrate(cfg: SchemeConfig, problem: SdeProblem, x0, T: float, N: int,
              stream: StreamSpec, mode: str = "weak_substitute") -> PathResult:
    """Single trajectory.  One package per step drawn from ``stream``."""
    res = simulate_batch(cfg, problem, x0, T, N, stream, mode, track_sup=True)
    return PathResult(terminal=res.terminal[:, 0], diverged=bool(res.diverged[0]),
                      sup_norm=float(res.sup_norm[0]))


@dataclass
class VariationResult:
    terminal_x: np.ndarray
    terminal_xi: np.ndarray
    diverged: np.ndarray | bool


def simulate_variation_batch(cfg: SchemeConfig, problem: SdeProblem, x0, T: float, N: int,
                             stream, direction: int, mode: str = "weak_substitute"
                             ) -> VariationResult:
    """Evolve (X, xi) with shared packages; xi follows the untamed Euler terms

    xi_{n+1} = xi_n + Df(X_n) xi_n h + sum_r Dg^r(X_n) xi_n dW_r,  xi_0 = e_direction.
    """
    h = _mesh(T, N)
    s = open_stream(stream)
    B = s.count
    d, m = problem.dim, problem.noise_dim
    if not 0 <= direction < d:
        raise ValueError("direction out of range")
    x0 = np.asarray(x0, dtype=float).reshape(d)
    y = np.repeat(x0[:, None], B, axis=1)
    xi = np.zeros((d, B))
    xi[direction] = 1.0
    diverged = np.zeros(B, dtype=bool)
    rows = rows_per_step(m, mode)
    with np.errstate(all="ignore"):
        for _ in range(N):
            pkg = package_from_normals(s.normals(rows), h, m, mode)
            df = problem.drift_jacobian(y)
            dg = problem.diffusion_jacobian(y)
            xi_new = (xi + np.einsum("ki...,i...->k...", df, xi) * h
                      + np.einsum("kri...,i...,r...->k...", dg, xi, pkg.dW))
            y_new = step(cfg, problem, y, h, pkg)
            newly = mark_divergence(y_new, diverged) | ~np.all(np.isfinite(xi_new), axis=0)
            y = np.where(newly, y, y_new)
            xi = np.where(newly, xi, xi_new)
            diverged = newly
    return VariationResult(terminal_x=y, terminal_xi=xi, diverged=diverged)


def integrate_with_variation(cfg: SchemeConfig, problem: SdeProblem, x0, T: float, N: int,
                             stream: StreamSpec, direction: int,
                             mode: str = "weak_substitute") -> VariationResult:
    """Single-trajectory form of :func:`simulate_variation_batch`."""
    res = simulate_variation_batch(cfg, problem, x0, T, N, stream, direction, mode)
    return VariationResult(terminal_x=res.terminal_x[:, 0], terminal_xi=res.terminal_xi[:, 0],
                           diverged=bool(res.diverged[0]))


__all__ = [
    "KINDS", "PRESETS", "SchemeConfig", "scheme_preset", "step", "integrate",
    "integrate_with_variation", "simulate_batch", "simulate_variation_batch",
    "BatchResult", "PathResult", "VariationResult", "DIVERGENCE_THRESHOLD",
    "BatchSpec", "BatchStream", "StreamSpec", "PackageAccumulator",
]
