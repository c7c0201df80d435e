"""Command-line front end.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (dotted keys, ``#`` comments), then explicit flags.
The effective settings are echoed into a manifest next to the outputs; the
manifest can be passed back as ``--config`` to repeat the run (``meta.*``
keys are ignored on input).

Exit status: 0 success, 1 configuration or I/O error, 2 statistically
unresolved order fit, 3 a map property check found violations.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .maps import TamingMap, check_h1_h3
from .model import builtin_problem
from .predictor import format_prediction, predict_order
from .schemes import scheme_preset
from .stochastic import MODES
from .weakconv import (
    DivergenceWarning, TestFunction, UnresolvedError, fit_order, moment_trace,
    one_step_moment_gap, weak_error_study,
)

COMMANDS = ("run-weak-error", "predict-order", "check-maps", "moment-trace", "one-step",
            "divergence-demo")
EXIT_OK, EXIT_CONFIG, EXIT_UNRESOLVED, EXIT_VIOLATION = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def parse_number(text: str) -> float:
    """Float, or a power written ``a^b`` (e.g. ``2^-10``)."""
    text = text.strip()
    m = re.fullmatch(r"([0-9.eE+-]+)\^([0-9.eE+-]+)", text)
    if m:
        return float(m.group(1)) ** float(m.group(2))
    return float(text)


def parse_list(text: str) -> list[float]:
    return [parse_number(t) for t in str(text).split(",") if t.strip()]


def _names(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


@dataclass
class RunConfig:
    """Effective settings.  Field metadata carries the config-file key."""

    command: str
    problem: str = field(default="cubic_quadratic", metadata={"key": "problem.name"})
    sigma: float = field(default=0.1, metadata={"key": "problem.sigma"})
    scheme: str = field(default="bs2", metadata={"key": "scheme.preset"})
    phi: str = field(default="cosine", metadata={"key": "phi.name"})
    coord: int = field(default=0, metadata={"key": "phi.coord"})
    T: float = field(default=1.0, metadata={"key": "run.T"})
    x0: str = field(default="0.1", metadata={"key": "run.x0"})
    h: str = field(default="2^-2,2^-3,2^-4,2^-5,2^-6,2^-7", metadata={"key": "run.h"})
    M: int = field(default=100000, metadata={"key": "run.M"})
    h_ref: float = field(default=2.0 ** -10, metadata={"key": "run.h_ref"})
    M_ref: int | None = field(default=None, metadata={"key": "run.M_ref"})
    seed: int = field(default=42, metadata={"key": "run.seed"})
    threads: int | None = field(default=None, metadata={"key": "run.threads"})
    integral_mode: str = field(default="weak_substitute", metadata={"key": "run.integral_mode"})
    coupling: str = field(default="independent", metadata={"key": "run.coupling"})
    out_path: str = field(default="sde_weak_lab_out", metadata={"key": "run.out"})
    p: float = field(default=2.0, metadata={"key": "run.p"})
    s: int = field(default=1, metadata={"key": "run.s"})
    substeps: int = field(default=64, metadata={"key": "run.substeps"})
    p_T: float | None = field(default=None, metadata={"key": "run.p_T"})
    family: str = field(default="balanced_tanh", metadata={"key": "map.family"})
    alpha: float | None = field(default=None, metadata={"key": "map.alpha"})
    power: float | None = field(default=None, metadata={"key": "map.power"})
    theta: int = field(default=1, metadata={"key": "map.theta"})
    varsigma: str = field(default="0,0.5,1", metadata={"key": "map.varsigma"})
    epsilon: float | None = field(default=None, metadata={"key": "map.epsilon"})
    samples: int = field(default=100000, metadata={"key": "map.samples"})
    dim: int = field(default=1, metadata={"key": "map.dim"})
    z_radius: float = field(default=1e4, metadata={"key": "map.z_radius"})

    @staticmethod
    def key_map() -> dict[str, str]:
        return {f.metadata["key"]: f.name for f in fields(RunConfig) if "key" in f.metadata}

    def problem_params(self) -> dict:
        return {"sigma": self.sigma} if self.problem == "cubic_quadratic" else {}

    def x0_vector(self) -> list[float]:
        return parse_list(self.x0)

    def h_list(self) -> list[float]:
        return parse_list(self.h)

    def manifest_items(self) -> list[tuple[str, str]]:
        items = [("run.command", self.command)]
        for f in fields(self):
            if "key" not in f.metadata:
                continue
            v = getattr(self, f.name)
            items.append((f.metadata["key"], "" if v is None else _manifest_value(v)))
        return items


def _manifest_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config_file(path: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``meta.*`` keys are skipped."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (t.strip() for t in line.split("=", 1))
        if k.startswith("meta.") or k == "run.command":
            continue
        out[k] = v
    return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    if value is None or value == "":
        return None
    t = _TYPES[name]
    if "int" in t and "float" not in t:
        return int(float(value)) if isinstance(value, str) else int(value)
    if "float" in t:
        return parse_number(value) if isinstance(value, str) else float(value)
    return str(value)


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(command=args.command)
    if getattr(args, "config", None):
        keys = RunConfig.key_map()
        for k, v in read_config_file(args.config).items():
            if k not in keys:
                raise ConfigError(f"unknown config key {k!r}")
            setattr(cfg, keys[k], _coerce(keys[k], v))
    for f in fields(RunConfig):
        if f.name == "command":
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, _coerce(f.name, v))
    if cfg.integral_mode not in MODES:
        raise ConfigError(f"unknown integral mode {cfg.integral_mode!r}")
    if cfg.coupling not in ("independent", "common"):
        raise ConfigError(f"unknown coupling {cfg.coupling!r}")
    return cfg


def _add_common(p: argparse.ArgumentParser, *names):
    opts = {
        "problem": dict(help="cubic_linear, cubic_quadratic or fhn"),
        "sigma": dict(help="noise level for cubic_quadratic"),
        "scheme": dict(help="preset name(s), comma separated"),
        "phi": dict(help="cosine, square or identity_coord (comma separated)"),
        "coord": dict(help="coordinate used by phi"),
        "T": dict(help="time horizon"),
        "x0": dict(help="initial state, comma separated"),
        "h": dict(help="step sizes, comma separated; 2^-4 style allowed"),
        "M": dict(help="trajectories per estimate"),
        "h-ref": dict(help="reference step size"),
        "M-ref": dict(help="reference trajectories (default M)"),
        "seed": dict(help="master seed"),
        "threads": dict(help="worker threads (default $SDE_WEAK_LAB_THREADS or CPU count)"),
        "integral-mode": dict(help="weak_substitute or exact_gaussian"),
        "coupling": dict(help="independent (reference protocol) or common (paired levels)"),
        "out": dict(dest="out_path", help="output path prefix"),
        "p": dict(help="moment order"),
        "s": dict(help="one-step moment order, 1 or 2"),
        "substeps": dict(help="fine substeps of the one-step proxy"),
        "p-T": dict(dest="p_T", help="moment exponent for coupled families (default p0' - eps)"),
        "family": dict(help="map family"),
        "alpha": dict(), "power": dict(), "theta": dict(),
        "varsigma": dict(help="comma separated values in [0, 1]"),
        "epsilon": dict(help="truncation defect exponent"),
        "samples": dict(), "dim": dict(), "z-radius": dict(dest="z_radius"),
    }
    for n in names:
        kw = dict(opts[n])
        kw.setdefault("dest", n.replace("-", "_"))
        p.add_argument(f"--{n}", default=None, **kw)
    p.add_argument("--config", default=None, help="key = value settings file")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sde-weak-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    run_opts = ("problem", "sigma", "scheme", "phi", "coord", "T", "x0", "seed", "threads",
                "integral-mode", "out")
    _add_common(sub.add_parser("run-weak-error", help="weak error table and order fit"),
                *run_opts, "h", "M", "h-ref", "M-ref", "coupling")
    _add_common(sub.add_parser("predict-order", help="theoretical order from moment bounds"),
                "problem", "sigma", "scheme", "phi", "p-T")
    _add_common(sub.add_parser("check-maps", help="sampled growth/defect checks of a map"),
                "family", "alpha", "power", "theta", "varsigma", "epsilon", "samples", "seed",
                "dim", "z-radius", "h")
    _add_common(sub.add_parser("moment-trace", help="E|Y_n|^p along the mesh"),
                *run_opts, "h", "M", "p")
    _add_common(sub.add_parser("one-step", help="one-step moment gap against a fine proxy"),
                *run_opts, "h", "M", "s", "substeps")
    _add_common(sub.add_parser("divergence-demo", help="divergence counts, untamed vs tamed"),
                *run_opts, "h", "M", "p")
    return ap


def _prefix(cfg: RunConfig) -> Path:
    out = Path(cfg.out_path)
    if out.suffix in (".csv", ".txt", ".manifest"):
        out = out.with_suffix("")
    return out


def _write(path: Path, text: str):
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def write_manifest(cfg: RunConfig, path: Path, extra: dict | None = None):
    lines = [f"{k} = {v}" for k, v in cfg.manifest_items()]
    for k, v in (extra or {}).items():
        lines.append(f"meta.{k} = {v}")
    _write(path, "\n".join(lines) + "\n")


def _progress(msg: str):
    print(msg, file=sys.stderr, flush=True)


def cmd_run_weak_error(cfg: RunConfig) -> int:
    problem = builtin_problem(cfg.problem, cfg.problem_params())
    prefix = _prefix(cfg)
    t0 = time.perf_counter()
    csv_parts, status, slopes = [], EXIT_OK, {}
    for scheme in _names(cfg.scheme):
        sch = scheme_preset(scheme)
        for phi_name in _names(cfg.phi):
            phi = TestFunction(phi_name, cfg.coord)
            _progress(f"[run-weak-error] {scheme} phi={phi.name}")
            table = weak_error_study(problem, sch, phi, cfg.T, cfg.h_list(), cfg.M, cfg.h_ref,
                                     cfg.M_ref or cfg.M, cfg.seed, cfg.x0_vector(),
                                     mode=cfg.integral_mode, coupling=cfg.coupling,
                                     threads=cfg.threads)
            text = table.to_csv()
            csv_parts.append(text if not csv_parts else text.split("\n", 1)[1])
            _write(Path(f"{prefix}_{scheme}_{phi.name}.dat"), table.loglog_data())
            try:
                fit = fit_order(table)
                slopes[f"{scheme}.{phi.name}"] = f"{fit.slope:.6f}"
                print(f"{scheme:5s} {phi.name:14s} slope {fit.slope:.4f} "
                      f"(r2 {fit.r_squared:.4f}, {fit.rows_used} resolved rows)")
            except UnresolvedError as exc:
                status = EXIT_UNRESOLVED
                slopes[f"{scheme}.{phi.name}"] = "unresolved"
                print(f"{scheme:5s} {phi.name:14s} UNRESOLVED: {exc}")
    csv_text = "".join(csv_parts)
    _write(Path(f"{prefix}.csv"), csv_text)
    sys.stdout.write(csv_text)
    extra = {f"slope.{k}": v for k, v in slopes.items()}
    extra["wall_time"] = f"{time.perf_counter() - t0:.3f}"
    extra["version"] = __version__
    write_manifest(cfg, Path(f"{prefix}.manifest"), extra)
    return status


def cmd_predict_order(cfg: RunConfig) -> int:
    problem = builtin_problem(cfg.problem, cfg.problem_params())
    meta = problem.meta()
    if cfg.p_T is not None:
        meta["p_T"] = cfg.p_T
    kappa = TestFunction(_names(cfg.phi)[0]).kappa
    for scheme in _names(cfg.scheme):
        pred = predict_order(meta, scheme, kappa)
        print(format_prediction(pred))
        print()
    return EXIT_OK


def cmd_check_maps(cfg: RunConfig) -> int:
    status = EXIT_OK
    h_grid = cfg.h_list() if cfg.h != RunConfig.h else [2.0 ** -k for k in range(1, 21)]
    power = cfg.power
    alpha = cfg.alpha
    if power is None and cfg.family in ("balanced", "balanced_tanh", "tamed", "modified",
                                        "drift_tamed"):
        power = 1.0
    if alpha is None and cfg.family in ("truncation", "fully_tamed"):
        alpha = 1.0
    t0 = time.perf_counter()
    for s in parse_list(cfg.varsigma):
        m = TamingMap(cfg.family, alpha=alpha, power=power, theta=cfg.theta, varsigma=s,
                      epsilon=cfg.epsilon)
        rep = check_h1_h3(m, cfg.samples, h_grid, cfg.z_radius, cfg.seed, dim=cfg.dim)
        e = m.declared
        print(f"{m.family} varsigma={s:g} gamma={e.gamma:g} tau={e.tau:g} l1={e.l1:g} "
              f"q0={e.q0:g} eta={e.eta_q0:g}: {rep.violations} violations in {rep.samples} "
              f"samples (max relative excess {rep.max_violation:.3g})")
        for w in rep.witnesses:
            print(f"  witness {w}")
        if not rep.ok:
            status = EXIT_VIOLATION
    print(f"elapsed {time.perf_counter() - t0:.2f}s")
    return status


def cmd_moment_trace(cfg: RunConfig) -> int:
    problem = builtin_problem(cfg.problem, cfg.problem_params())
    prefix = _prefix(cfg)
    rows = ["scheme,h,n,t,moment"]
    for scheme in _names(cfg.scheme):
        for h in cfg.h_list():
            tr = moment_trace(problem, scheme_preset(scheme), cfg.p, cfg.T, h, cfg.M, cfg.seed,
                              cfg.x0_vector(), cfg.integral_mode, cfg.threads)
            N = len(tr.per_step) - 1
            for n, v in enumerate(tr.per_step):
                rows.append(f"{scheme},{h!r},{n},{cfg.T * n / N!r},{v!r}")
            print(f"{scheme:5s} h={h:g} sup_n E|Y_n|^{cfg.p:g} = {tr.sup_over_n:.6g} "
                  f"(diverged {tr.diverged_count})")
    _write(Path(f"{prefix}_moments.csv"), "\n".join(rows) + "\n")
    write_manifest(cfg, Path(f"{prefix}.manifest"), {"version": __version__})
    return EXIT_OK


def cmd_one_step(cfg: RunConfig) -> int:
    import numpy as np

    problem = builtin_problem(cfg.problem, cfg.problem_params())
    prefix = _prefix(cfg)
    rows = ["scheme,h,index,gap,ci95"]
    for scheme in _names(cfg.scheme):
        hs, gaps = [], []
        for h in cfg.h_list():
            g = one_step_moment_gap(problem, scheme_preset(scheme), cfg.x0_vector(), h, cfg.s,
                                    cfg.M, cfg.seed, cfg.substeps, mode=cfg.integral_mode,
                                    threads=cfg.threads)
            for idx, v, c in zip(g.indices, g.gap, g.ci95):
                rows.append(f"{scheme},{h!r},{'-'.join(map(str, idx))},{v!r},{c!r}")
            print(f"{scheme:5s} h={h:g} gap={g.gap.tolist()} ci95={g.ci95.tolist()}")
            hs.append(h)
            gaps.append(g.max_abs)
        if len(hs) >= 2 and all(v > 0 for v in gaps):
            slope = np.polyfit(np.log(hs), np.log(gaps), 1)[0]
            print(f"{scheme:5s} one-step gap slope {slope:.3f}")
    _write(Path(f"{prefix}_onestep.csv"), "\n".join(rows) + "\n")
    return EXIT_OK


def cmd_divergence_demo(cfg: RunConfig) -> int:
    problem = builtin_problem(cfg.problem, cfg.problem_params())
    h = cfg.h_list()[0]
    for scheme in _names(cfg.scheme):
        tr = moment_trace(problem, scheme_preset(scheme), cfg.p, cfg.T, h, cfg.M, cfg.seed,
                          cfg.x0_vector(), cfg.integral_mode, cfg.threads)
        print(f"{scheme:5s} diverged {tr.diverged_count:6d} of {cfg.M}  "
              f"sup_n E|Y_n|^{cfg.p:g} = {tr.sup_over_n:.6g}")
    return EXIT_OK


DEMO_DEFAULTS = {"problem": "cubic_quadratic", "sigma": 0.5, "scheme": "em,ts2,bs2,ms2",
                 "h": "2^-4", "M": 10000, "x0": "0.1", "T": 1.0}

HANDLERS = {
    "run-weak-error": cmd_run_weak_error,
    "predict-order": cmd_predict_order,
    "check-maps": cmd_check_maps,
    "moment-trace": cmd_moment_trace,
    "one-step": cmd_one_step,
    "divergence-demo": cmd_divergence_demo,
}


def run(cfg: RunConfig) -> int:
    """Dispatch a fully built configuration."""
    with warnings.catch_warnings():
        # divergence counts are reported in the outputs
        warnings.simplefilter("ignore", DivergenceWarning)
        return HANDLERS[cfg.command](cfg)


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    if args.command == "divergence-demo":
        for k, v in DEMO_DEFAULTS.items():
            if getattr(args, k, None) is None and not args.config:
                setattr(args, k, str(v))
    try:
        cfg = build_config(args)
        return run(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
