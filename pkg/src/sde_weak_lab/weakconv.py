"""Monte Carlo weak-error estimation, order fitting and scheme diagnostics."""

from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .maps import vector_norm
from .model import SdeProblem
from .parallel import map_chunks
from .schemes import SchemeConfig, mark_divergence, scheme_preset, simulate_batch, step
from .stochastic import (
    BatchSpec, PackageAccumulator, package_from_normals, rows_per_step,
)

Z95 = 1.96
CSV_HEADER = ("scheme", "problem", "phi", "h", "M", "estimate", "ci95",
              "reference", "abs_error", "rate", "diverged")


class DivergenceWarning(UserWarning):
    """Some trajectories diverged and were left out of an average."""


class UnresolvedError(ValueError):
    """Too few rows have errors that stand out of their Monte Carlo noise."""


# --- test functions ---------------------------------------------------------


@dataclass(frozen=True)
class TestFunction:
    """phi(x): ``identity_coord`` x[coord], ``square`` |x|^2, ``cosine`` cos(x[coord])."""

    __test__ = False  # not a pytest class

    name: str
    coord: int = 0

    def __post_init__(self):
        aliases = {"cos": "cosine", "x": "identity_coord", "identity": "identity_coord",
                   "first": "identity_coord", "x2": "square"}
        name = aliases.get(self.name, self.name)
        if name not in ("identity_coord", "square", "cosine"):
            raise ValueError(f"unknown test function {self.name!r}")
        object.__setattr__(self, "name", name)

    @property
    def kappa(self) -> float:
        return {"cosine": 0.0, "identity_coord": 1.0, "square": 2.0}[self.name]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.name == "identity_coord":
            return x[self.coord]
        if self.name == "square":
            acc = x[0] * x[0]
            for i in range(1, x.shape[0]):
                acc = acc + x[i] * x[i]
            return acc
        return np.cos(x[self.coord])


# --- streaming statistics ---------------------------------------------------


@dataclass
class Moments:
    """Count, mean and centred sum of squares; merged in a fixed order."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, v: np.ndarray) -> "Moments":
        n = int(v.size)
        if n == 0:
            return cls()
        mu = float(np.mean(v))
        return cls(n, mu, float(np.sum((v - mu) ** 2)))

    def merge(self, o: "Moments") -> "Moments":
        if o.n == 0:
            return Moments(self.n, self.mean, self.m2)
        if self.n == 0:
            return Moments(o.n, o.mean, o.m2)
        n = self.n + o.n
        delta = o.mean - self.mean
        mean = self.mean + delta * o.n / n
        m2 = self.m2 + o.m2 + delta * delta * self.n * o.n / n
        return Moments(n, mean, m2)

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else math.nan

    @property
    def ci95(self) -> float:
        return Z95 * self.std / math.sqrt(self.n) if self.n > 1 else math.nan


def _merge_all(parts) -> Moments:
    acc = Moments()
    for p in parts:
        acc = acc.merge(p)
    return acc


def steps_for(T: float, h: float) -> tuple[int, float]:
    """Number of steps and the adjusted step size T/N."""
    N = max(1, int(round(T / h)))
    return N, T / N


# --- functional estimates ---------------------------------------------------


@dataclass
class Estimate:
    mean: float
    ci95_halfwidth: float
    diverged_count: int
    count: int
    std: float

    @property
    def warning(self) -> bool:
        return self.diverged_count > 0


def estimate_functional(problem: SdeProblem, cfg: SchemeConfig, phi: TestFunction, T: float,
                        h: float, M: int, seed: int, x0, mode: str = "weak_substitute",
                        substream: int = 0, threads: int | None = None) -> Estimate:
    """Mean of phi(Y_N) over M trajectories with a 95% normal half-width."""
    if M < 2:
        raise ValueError("need M >= 2")
    N, h = steps_for(T, h)

    def chunk(start, count):
        res = simulate_batch(cfg, problem, x0, T, N,
                             BatchSpec(seed, start, count, substream), mode)
        ok = ~res.diverged
        return Moments.of(phi(res.terminal[:, ok])), int(res.diverged.sum())

    parts = map_chunks(chunk, M, threads)
    mom = _merge_all(p[0] for p in parts)
    div = sum(p[1] for p in parts)
    if div:
        warnings.warn(f"{div} of {M} trajectories diverged and were excluded",
                      DivergenceWarning, stacklevel=2)
    if mom.n == 0:
        return Estimate(math.nan, math.nan, div, 0, math.nan)
    return Estimate(mom.mean, mom.ci95 if mom.n > 1 else 0.0, div, mom.n, mom.std)


# --- weak error tables ------------------------------------------------------


@dataclass
class WeakErrorRow:
    h: float
    M: int
    estimate: float
    ci95_halfwidth: float   # half-width of estimate - reference
    reference: float
    abs_error: float
    rate: float | None
    diverged: int

    @property
    def resolved(self) -> bool:
        return bool(self.abs_error > 2.0 * self.ci95_halfwidth)


@dataclass
class WeakErrorTable:
    rows: list[WeakErrorRow]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows.sort(key=lambda r: -r.h)
        fill_rates(self.rows)

    @property
    def resolved_rows(self) -> list[WeakErrorRow]:
        return [r for r in self.rows if r.resolved]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        m = self.meta
        for r in self.rows:
            w.writerow([m.get("scheme", ""), m.get("problem", ""), m.get("phi", ""),
                        _fmt(r.h), r.M, _fmt(r.estimate), _fmt(r.ci95_halfwidth),
                        _fmt(r.reference), _fmt(r.abs_error),
                        "" if r.rate is None else _fmt(r.rate), r.diverged])
        return buf.getvalue()

    def loglog_data(self) -> str:
        """Two columns: log10(h) and log10(abs_error)."""
        lines = [f"{_fmt(math.log10(r.h))} {_fmt(math.log10(r.abs_error))}"
                 for r in self.rows if r.abs_error > 0]
        return "\n".join(lines) + "\n"


def _fmt(v: float) -> str:
    return format(float(v), ".10g") if math.isfinite(v) else str(v)


def fill_rates(rows: list[WeakErrorRow]) -> None:
    """rate[k] = log(err[k]/err[k-1]) / log(h[k]/h[k-1]); first row has none."""
    for k, r in enumerate(rows):
        if k == 0:
            r.rate = None
            continue
        p = rows[k - 1]
        if r.abs_error > 0 and p.abs_error > 0:
            r.rate = math.log(r.abs_error / p.abs_error) / math.log(r.h / p.h)
        else:
            r.rate = math.nan


def weak_error_study(problem: SdeProblem, cfg: SchemeConfig, phi: TestFunction, T: float,
                     h_list, M: int, h_ref: float, M_ref: int, seed: int, x0,
                     mode: str = "weak_substitute", coupling: str = "independent",
                     threads: int | None = None) -> WeakErrorTable:
    """Weak errors of ``cfg`` against the same scheme run at ``h_ref``.

    ``independent``: every level and the reference use their own random
    substream (reference with ``M_ref`` paths).  ``common``: all levels are
    driven by the reference grid's increments, aggregated to each coarse
    step, and the half-width is that of the paired difference (``M_ref``
    is then unused).
    """
    h_list = sorted((float(h) for h in h_list), reverse=True)
    if not h_list:
        raise ValueError("empty h_list")
    if h_ref >= min(h_list):
        raise ValueError("h_ref must be smaller than every h in h_list")
    meta = {"scheme": cfg.label or cfg.kind, "problem": problem.name, "phi": phi.name,
            "M": M, "M_ref": M_ref if coupling == "independent" else M, "seed": seed,
            "h_ref": h_ref, "T": T, "coupling": coupling, "mode": mode}
    if coupling == "independent":
        ref = estimate_functional(problem, cfg, phi, T, h_ref, M_ref, seed, x0, mode,
                                  substream=0, threads=threads)
        rows = []
        for j, h in enumerate(h_list):
            est = estimate_functional(problem, cfg, phi, T, h, M, seed, x0, mode,
                                      substream=j + 1, threads=threads)
            hw = math.hypot(est.ci95_halfwidth, ref.ci95_halfwidth)
            rows.append(WeakErrorRow(h=steps_for(T, h)[1], M=M, estimate=est.mean,
                                     ci95_halfwidth=hw, reference=ref.mean,
                                     abs_error=abs(est.mean - ref.mean), rate=None,
                                     diverged=est.diverged_count))
        meta["reference_diverged"] = ref.diverged_count
        return WeakErrorTable(rows, meta)
    if coupling == "common":
        return _coupled_study(problem, cfg, phi, T, h_list, M, h_ref, seed, x0, mode,
                              threads, meta)
    raise ValueError(f"unknown coupling {coupling!r}")


def _coupled_study(problem, cfg, phi, T, h_list, M, h_ref, seed, x0, mode, threads, meta):
    N_ref, h_ref = steps_for(T, h_ref)
    levels = []
    for h in h_list:
        N, hh = steps_for(T, h)
        if N_ref % N:
            raise ValueError(f"T/h_ref must be a multiple of T/h for h={h}")
        levels.append((N, hh, N_ref // N))
    d, m = problem.dim, problem.noise_dim
    rows_n = rows_per_step(m, mode)
    x0 = np.asarray(x0, dtype=float).reshape(d)

    def chunk(start, count):
        s = BatchSpec(seed, start, count, 0).open()
        y_ref = np.repeat(x0[:, None], count, axis=1)
        div_ref = np.zeros(count, dtype=bool)
        ys = [y_ref.copy() for _ in levels]
        divs = [np.zeros(count, dtype=bool) for _ in levels]
        accs = [PackageAccumulator(m, (count,)) for _ in levels]
        with np.errstate(all="ignore"):
            for n in range(1, N_ref + 1):
                pkg = package_from_normals(s.normals(rows_n), h_ref, m, mode)
                y_new = step(cfg, problem, y_ref, h_ref, pkg)
                div_ref = mark_divergence(y_new, div_ref)
                y_ref = np.where(div_ref, y_ref, y_new)
                for j, (N, hh, ratio) in enumerate(levels):
                    accs[j].add(pkg)
                    if n % ratio == 0:
                        cp = accs[j].package(hh)
                        accs[j].reset()
                        y_new = step(cfg, problem, ys[j], hh, cp)
                        divs[j] = mark_divergence(y_new, divs[j])
                        ys[j] = np.where(divs[j], ys[j], y_new)
        phi_ref = phi(y_ref)
        out = []
        for j in range(len(levels)):
            ok = ~(divs[j] | div_ref)
            out.append((Moments.of(phi(ys[j])[ok]), Moments.of(phi_ref[ok]),
                        Moments.of(phi(ys[j])[ok] - phi_ref[ok]), int(divs[j].sum())))
        return out, int(div_ref.sum())

    parts = map_chunks(chunk, M, threads)
    rows = []
    for j, (N, hh, _) in enumerate(levels):
        est = _merge_all(p[0][j][0] for p in parts)
        ref = _merge_all(p[0][j][1] for p in parts)
        diff = _merge_all(p[0][j][2] for p in parts)
        div = sum(p[0][j][3] for p in parts)
        rows.append(WeakErrorRow(h=hh, M=M, estimate=est.mean, ci95_halfwidth=diff.ci95,
                                 reference=ref.mean, abs_error=abs(diff.mean), rate=None,
                                 diverged=div))
    meta["reference_diverged"] = sum(p[1] for p in parts)
    return WeakErrorTable(rows, meta)


@dataclass
class OrderFit:
    slope: float
    intercept: float
    r_squared: float
    rows_used: int


def fit_order(table: WeakErrorTable) -> OrderFit:
    """Least-squares slope of log(abs_error) against log(h) over resolved rows."""
    rows = table.resolved_rows
    if len(rows) < 2:
        raise UnresolvedError(
            f"only {len(rows)} of {len(table.rows)} rows have abs_error > 2 x half-width")
    x = np.log([r.h for r in rows])
    y = np.log([r.abs_error for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return OrderFit(float(slope), float(intercept), r2, len(rows))


# --- moment traces ----------------------------------------------------------


@dataclass
class MomentTrace:
    sup_over_n: float
    per_step: list[float]
    diverged_count: int


def moment_trace(problem: SdeProblem, cfg: SchemeConfig, p: float, T: float, h: float, M: int,
                 seed: int, x0, mode: str = "weak_substitute",
                 threads: int | None = None) -> MomentTrace:
    """E|Y_n|^p at every mesh point; +inf from the first divergence on."""
    if p < 1:
        raise ValueError("moment order p must be >= 1")
    N, h = steps_for(T, h)

    def chunk(start, count):
        sums = np.zeros(N + 1)
        first_div = [N + 1]

        def observer(n, y, diverged):
            if diverged.any() and first_div[0] > N:
                first_div[0] = n
            sums[n] = float(np.sum(vector_norm(y) ** p))

        res = simulate_batch(cfg, problem, x0, T, N, BatchSpec(seed, start, count, 0), mode,
                             observer=observer)
        return sums, first_div[0], int(res.diverged.sum())

    parts = map_chunks(chunk, M, threads)
    first = min(pt[1] for pt in parts)
    per = []
    for n in range(N + 1):
        if n >= first:
            per.append(math.inf)
        else:
            per.append(math.fsum(pt[0][n] for pt in parts) / M)
    return MomentTrace(max(per), per, sum(pt[2] for pt in parts))


# --- one-step diagnostic ----------------------------------------------------


@dataclass
class GapEstimate:
    indices: list[tuple[int, ...]]
    gap: np.ndarray
    ci95: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.gap)))


def one_step_moment_gap(problem: SdeProblem, cfg: SchemeConfig, x, h: float, s: int, M: int,
                        seed: int, substeps: int = 64, proxy: SchemeConfig | None = None,
                        mode: str = "weak_substitute",
                        threads: int | None = None) -> GapEstimate:
    """E[prod delta_X] - E[prod delta_Y] over one step from ``x``.

    delta_Y is one step of ``cfg``; delta_X comes from ``substeps`` steps of
    the proxy scheme (Milstein-Talay by default) at h/substeps.  The coarse
    step is driven by the aggregated fine increments (common random numbers).
    Products run over all index tuples i1 <= ... <= is.
    """
    if s not in (1, 2):
        raise ValueError("s must be 1 or 2")
    proxy = proxy or scheme_preset("mt")
    d, m = problem.dim, problem.noise_dim
    x = np.asarray(x, dtype=float).reshape(d)
    hf = h / substeps
    rows_n = rows_per_step(m, mode)
    idx = list(itertools.combinations_with_replacement(range(d), s))

    def prod(delta, t):
        out = delta[t[0]]
        for i in t[1:]:
            out = out * delta[i]
        return out

    def chunk(start, count):
        st = BatchSpec(seed, start, count, 0).open()
        y0 = np.repeat(x[:, None], count, axis=1)
        yf = y0.copy()
        acc = PackageAccumulator(m, (count,))
        with np.errstate(all="ignore"):
            for _ in range(substeps):
                pkg = package_from_normals(st.normals(rows_n), hf, m, mode)
                yf = step(proxy, problem, yf, hf, pkg)
                acc.add(pkg)
            yc = step(cfg, problem, y0, h, acc.package(h))
        dx, dy = yf - y0, yc - y0
        ok = np.all(np.isfinite(dx), axis=0) & np.all(np.isfinite(dy), axis=0)
        return [Moments.of((prod(dx, t) - prod(dy, t))[ok]) for t in idx]

    parts = map_chunks(chunk, M, threads)
    moms = [_merge_all(p[k] for p in parts) for k in range(len(idx))]
    gap = np.array([mo.mean for mo in moms])
    ci = np.array([mo.ci95 if mo.n > 1 else 0.0 for mo in moms])
    return GapEstimate(idx, gap, np.nan_to_num(ci))
