"""Moment-bound and weak-order algebra for the modified schemes.

Given the growth exponent r, the monotonicity exponent p0' (minus slack)
and a map family's exponents, this module evaluates

    G1 = 6r  v  ((2r+1) l1 - 1) / tau
    B1 = (P - G1) / (1 + gamma1 G1)  ^  (P - G1) / (1 + (1/2 + gamma2) G1)
    B2 = B1 ^ (P - G1) / (1 + (gamma3 - 1/2) G1) ^ (P - G1) / (1 + (gamma4 - 1) G1)
    beta1(p) = 1 + ((p gamma1 + 1) G1 / p  ^  (1 + p/2 + p gamma2) G1 / p)
    beta2(p) = 1 + ((beta1 - 1) ^ (1 - p/2 + p gamma3) G1 / p ^ (1 - p + p gamma4) G1 / p)

(``v`` max, ``^`` min) and the required moment

    Euler: varkappa = (2q+2)(2r+1)(1 v eta)
    MT:    varkappa = (2q+2)(4r+1) eta  v  (2q+1)(6r+1)

then maximises q subject to q <= q0, q <= 1 (Euler) or 2 (MT) and
B >= max(2 kappa, beta kappa + varkappa).

Families satisfying the coupled dissipativity condition use G1 = 6r and
P = p_T (default p0' - eps).  The (tau, l1) pair enters G1 only, so G1 is
minimised over that family's admissible pairs separately from the free
parameter that sets (q0, eta).

For the fully tamed family at alpha_1 = 1 and q = 1 the formula gives
varkappa = 24 (eta = 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import P0_UNBOUNDED

Q_TOL = 1e-6
GRID = 2001


@dataclass(frozen=True)
class MapExponents:
    """Exponents of one scheme family as functions of its free parameter.

    ``q0(t)`` and ``eta(t)`` give the one-step defect order and growth for
    free parameter ``t`` in ``free_range``; ``tau_l1(t)`` gives the defect
    bound pair admissible for G1 and ``q0_inv`` the exact inverse of ``q0``.
    """

    name: str
    kind: str                       # "euler" or "mt"
    gamma: tuple[float, float, float, float]
    q0: Callable[[float], float]
    eta: Callable[[float], float]
    free_name: str
    free_range: tuple[float, float]
    tau_l1: Callable[[float], tuple[float, float]] | None = None
    q0_inv: Callable[[float], float] | None = None
    coupled: bool = False           # dissipativity-based branch: G1 = 6r, P = p_T
    covered: bool = True            # growth assumptions hold
    note: str = ""

    @property
    def ceiling(self) -> int:
        return 2 if self.kind == "mt" else 1

    def g1(self, r: float) -> float:
        if self.coupled or self.tau_l1 is None:
            return 6 * r
        lo, hi = self.free_range
        best = math.inf
        for t in np.linspace(lo, hi, GRID):
            tau, l1 = self.tau_l1(float(t))
            if tau <= 0:
                continue
            best = min(best, ((2 * r + 1) * l1 - 1) / tau)
        return max(6 * r, best)


def _inf4():
    return (math.inf,) * 4


def family_exponents(preset: str) -> MapExponents:
    """Exponent tables for the scheme presets."""
    key = preset.lower()
    if key == "bs1":
        return MapExponents("bs1", "euler", (1, 1, 0, 0),
                            q0=lambda s: 2 - 2 * s, eta=lambda s: 3 - 2 * s,
                            free_name="varsigma", free_range=(0.0, 1.0),
                            tau_l1=lambda s: (2 - 2 * s, 3 - 2 * s), q0_inv=lambda q: 1 - q / 2)
    if key == "te1":
        return MapExponents("te1", "euler", (1, 1, 0, 0),
                            q0=lambda s: s, eta=lambda s: 1 + s,
                            free_name="varsigma", free_range=(0.0, 1.0),
                            tau_l1=lambda s: (s, 1 + s), q0_inv=lambda q: q)
    if key == "ts1":
        a = 1.0
        return MapExponents("ts1", "euler", (a, a, 0, 0),
                            q0=lambda e: e, eta=lambda e: 1 + e / a,
                            free_name="epsilon", free_range=(1e-3, 4.0),
                            tau_l1=lambda e: (e, 1 + e / a), q0_inv=lambda q: q)
    if key == "ft1":
        a = 1.0
        return MapExponents("ft1", "euler", (a, a / 2, 0, 0),
                            q0=lambda s: s * a, eta=lambda s: 1 + s,
                            free_name="varsigma", free_range=(0.0, 1.0), coupled=True,
                            q0_inv=lambda q: q / a)
    if key == "ms1":
        return MapExponents("ms1", "euler", (0.5, math.inf, 0, 0),
                            q0=lambda s: s, eta=lambda s: 1 + 2 * s,
                            free_name="varsigma", free_range=(0.0, 1.0),
                            tau_l1=lambda s: (s, 1 + 2 * s), covered=False,
                            note="T2 = w/(1+h|f|^2) has no h-power growth cap; "
                                 "moment bounds are outside this algebra")
    if key == "bs2":
        return MapExponents("bs2", "mt", (2, 2, 2, 2),
                            q0=lambda s: 4 - 4 * s, eta=lambda s: 3 - 2 * s,
                            free_name="varsigma", free_range=(0.0, 1.0),
                            tau_l1=lambda s: (4 - 4 * s, 3 - 2 * s), q0_inv=lambda q: 1 - q / 4)
    if key == "ts2":
        a = 2.0
        return MapExponents("ts2", "mt", (a, a, a, a),
                            q0=lambda e: e, eta=lambda e: 1 + e / a,
                            free_name="epsilon", free_range=(1e-3, 4.0),
                            tau_l1=lambda e: (e, 1 + e / a), q0_inv=lambda q: q)
    if key == "ms2":
        # T1..T3 defect h^{2s}; T4..T6 defect h^{2s}, one order slack
        return MapExponents("ms2", "mt", (2, 2, 2, 2),
                            q0=lambda s: min(2 * s, 2 * s + 1), eta=lambda s: 1 + s,
                            free_name="varsigma", free_range=(0.0, 1.0), coupled=True,
                            q0_inv=lambda q: q / 2)
    if key in ("em", "mt"):
        return MapExponents(key, "mt" if key == "mt" else "euler", _inf4(),
                            q0=lambda s: math.inf, eta=lambda s: 1.0,
                            free_name="none", free_range=(0.0, 0.0), covered=False,
                            note="untamed scheme; no moment bound under superlinear growth")
    raise ValueError(f"no exponent table for scheme {preset!r}")


@dataclass
class MomentCaps:
    G1: float
    P: float
    B1: float
    B2: float | None
    gamma: tuple
    kind: str

    @property
    def B(self) -> float:
        return self.B2 if self.kind == "mt" else self.B1

    def beta(self, p: float) -> float:
        g1, g2, g3, g4 = self.gamma
        G = self.G1
        b1 = min((p * g1 + 1) * G / p, (1 + p / 2 + p * g2) * G / p)
        if self.kind != "mt":
            return 1 + b1
        return 1 + min(b1, (1 - p / 2 + p * g3) * G / p, (1 - p + p * g4) * G / p)


def moment_caps(scheme_kind: str, exps: MapExponents, r: float, p0_prime: float,
                eps_slack: float = 0.0, p_T: float | None = None) -> MomentCaps:
    """G1, B1/B2 and beta(p) for a family.  Negative caps are returned as is."""
    kind = "mt" if scheme_kind in ("mt", "modified_mt", "milstein_talay") else "euler"
    G1 = exps.g1(r)
    if exps.coupled:
        P = (p0_prime - eps_slack) if p_T is None else p_T
    else:
        P = p0_prime - eps_slack
    g1, g2, g3, g4 = exps.gamma
    if P >= P0_UNBOUNDED and exps.covered:
        return MomentCaps(G1, P, math.inf, math.inf if kind == "mt" else None, exps.gamma, kind)
    num = P - G1
    B1 = min(num / (1 + g1 * G1), num / (1 + (0.5 + g2) * G1))
    B2 = None
    if kind == "mt":
        B2 = min(B1, num / (1 + (g3 - 0.5) * G1), num / (1 + (g4 - 1) * G1))
    return MomentCaps(G1, P, B1, B2, exps.gamma, kind)


@dataclass
class Requirement:
    varkappa: float
    threshold: float
    beta: float


def required_moment(scheme_kind: str, q: float, r: float, kappa: float, eta_q0: float,
                    beta: float | Callable[[float], float]) -> Requirement:
    """varkappa and threshold = max(2 kappa, beta kappa + varkappa).

    A callable ``beta`` is evaluated at the threshold itself by fixed-point
    iteration (beta decreases in p, so the iteration settles quickly).
    """
    if q < 0:
        raise ValueError("q must be nonnegative")
    if scheme_kind in ("mt", "modified_mt", "milstein_talay"):
        vk = max((2 * q + 2) * (4 * r + 1) * eta_q0, (2 * q + 1) * (6 * r + 1))
    else:
        vk = (2 * q + 2) * (2 * r + 1) * max(1.0, eta_q0)
    if kappa == 0:
        b = beta(max(vk, 1.0)) if callable(beta) else float(beta)
        return Requirement(vk, vk, b)
    if not callable(beta):
        return Requirement(vk, max(2 * kappa, beta * kappa + vk), float(beta))
    p = max(2 * kappa, kappa + vk, 1.0)
    for _ in range(200):
        b = beta(p)
        new = max(2 * kappa, b * kappa + vk)
        if abs(new - p) <= 1e-12 * max(1.0, p):
            p = new
            break
        p = new
    return Requirement(vk, p, beta(p))


@dataclass
class OrderPrediction:
    G1: float
    B: float
    beta: float
    varkappa: float
    threshold: float
    q_raw: float
    q_integer_note: float
    chosen_free: dict
    feasible: bool
    B1: float = math.nan
    B2: float | None = None
    P: float = math.nan
    derivative_moment_needed: float = math.nan
    note: str = ""
    scheme: str = ""


def _best_free(exps: MapExponents, q: float, caps: MomentCaps, r: float, kappa: float):
    """Free parameter with q0 >= q that minimises the threshold, or None.

    Candidates are a uniform grid plus the exact point where q0 = q (eta is
    smallest there since it grows with q0 in every family).
    """
    lo, hi = exps.free_range
    cands = list(np.linspace(lo, hi, GRID)) if hi > lo else [lo]
    if exps.q0_inv is not None:
        t = exps.q0_inv(q)
        if lo <= t <= hi:
            cands.append(t)
    best = None
    for t in cands:
        t = float(t)
        if exps.q0(t) < q:
            continue
        req = required_moment(exps.kind, q, r, kappa, exps.eta(t), caps.beta)
        if best is None or req.threshold < best[1].threshold:
            best = (t, req)
    return best


def predict_order(meta: dict, scheme: str, kappa: float = 0.0) -> OrderPrediction:
    """Largest guaranteed weak order q for a scheme preset.

    ``meta`` holds ``r``, ``p0_prime``, ``eps_slack`` and optionally ``p_T``.
    """
    exps = family_exponents(scheme)
    r = float(meta["r"])
    p0p = float(meta["p0_prime"])
    eps = float(meta.get("eps_slack", 0.0))
    p_T = meta.get("p_T")
    caps = moment_caps(exps.kind, exps, r, p0p, eps, p_T)
    ceiling = exps.ceiling

    def infeasible(note):
        req = required_moment(exps.kind, 0.0, r, kappa, exps.eta(exps.free_range[0]),
                              caps.beta if math.isfinite(caps.G1) else 1.0)
        return OrderPrediction(caps.G1, caps.B, req.beta, req.varkappa, req.threshold, 0.0, 0.0,
                               {}, False, caps.B1, caps.B2, caps.P, 4.0, note, exps.name)

    if not exps.covered:
        return infeasible(exps.note)

    def check(q):
        best = _best_free(exps, q, caps, r, kappa)
        if best is None:
            return None
        t, req = best
        return (t, req) if caps.B >= req.threshold else None

    top = check(float(ceiling))
    if top is not None:
        q = float(ceiling)
        sol = top
    else:
        low = check(0.0)
        if low is None:
            return infeasible("no free parameter meets the moment requirement")
        a, b = 0.0, float(ceiling)
        sol = low
        while b - a > Q_TOL:
            mid = 0.5 * (a + b)
            res = check(mid)
            if res is None:
                b = mid
            else:
                a, sol = mid, res
        q = a
    t, req = sol
    return OrderPrediction(
        G1=caps.G1, B=caps.B, beta=req.beta, varkappa=req.varkappa, threshold=req.threshold,
        q_raw=q, q_integer_note=float(round(q)), chosen_free={exps.free_name: t},
        feasible=True, B1=caps.B1, B2=caps.B2, P=caps.P,
        derivative_moment_needed=4 * q + 4, note=exps.note, scheme=exps.name)


def format_prediction(pred: OrderPrediction) -> str:
    """Plain-text table of a prediction."""
    def f(v):
        if v is None:
            return "-"
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        return f"{v:.6g}"

    free = ", ".join(f"{k}={v:.6g}" for k, v in pred.chosen_free.items()) or "-"
    lines = [
        f"scheme      {pred.scheme}",
        f"G1          {f(pred.G1)}",
        f"B1          {f(pred.B1)}",
        f"B2          {f(pred.B2)}",
        f"B           {f(pred.B)}",
        f"beta        {f(pred.beta)}",
        f"varkappa    {f(pred.varkappa)}",
        f"threshold   {f(pred.threshold)}",
        f"free        {free}",
        f"q_raw       {pred.q_raw:.6f}",
        f"q_rounded   {f(pred.q_integer_note)}",
        f"feasible    {pred.feasible}",
        f"needs P >=  {f(pred.derivative_moment_needed)} derivative moments",
    ]
    if pred.note:
        lines.append(f"note        {pred.note}")
    return "\n".join(lines)
