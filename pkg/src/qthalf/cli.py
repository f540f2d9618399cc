"""Command-line harness: configuration, experiment dispatch and report files.

Usage::

    qthalf <kind> --config run.ini [--seed S] [--out DIR]

Exit status is 0 when every configured check passes, 1 when at least one
check fails, 2 for configuration or usage errors and 3 for runtime failures
(solver errors, I/O). See the README for the configuration grammar.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .tensor_ops import ModelParams

log = logging.getLogger("qthalf")

KINDS = ("invariants", "resolvent-sweep", "decay-fit", "gn-check", "picard", "simulate")
SECTIONS = ("run", "model", "grid", "scheme", "experiment", "tolerances")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    """All violations found in a configuration, one per line."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------
# Value types: int, float, frac (exact fraction), floats (comma list),
# ints (comma list), bool, str.

_TWO_PI = 2.0 * math.pi

_GRID_DEFAULTS = {
    "invariants": (16, 17, _TWO_PI, math.pi),
    "resolvent-sweep": (32, 33, _TWO_PI, math.pi),
    "decay-fit": (128, 129, 64.0, 64.0),
    "gn-check": (256, 129, 64.0, 32.0),
    "picard": (32, 33, 16.0, 8.0),
    "simulate": (32, 33, 16.0, 8.0),
}

_EXPERIMENT = {
    "invariants": {"samples": ("int", 1000)},
    "resolvent-sweep": {
        "epsilon": ("float", 0.70),
        "lam_min": ("float", 0.1),
        "lam_max": ("float", 100.0),
        "n_lam": ("int", 13),
        "args_deg": ("floats", (0.0, 90.0, -90.0)),
        "q": ("floats", (2.0, 4.0)),
        "smooth_lam_min": ("float", 1.0),
        "smooth_lam_max": ("float", 100.0),
        "n_smooth": ("int", 9),
        "smooth_q": ("float", 4.0),
        "smooth_q_tilde": ("float", 2.0),
    },
    "decay-fit": {
        "T": ("float", 12.0),
        "dt": ("float", 0.05),
        "store_every": ("int", 2),
        "t_start": ("float", 1.0),
        "q": ("float", 4.0),
        "q_tilde": ("float", 2.0),
        "r_flat": ("float", 24.0),
        "r_cut": ("float", 30.0),
        "core": ("float", 0.5),
    },
    "gn-check": {
        "scales": ("floats", (1.0, 1.5, 2.0, 3.0, 4.0)),
        "levels": ("ints", (0, 1)),
        "samples": ("int", 200),
        "kmax": ("int", 4),
        "random_n": ("ints", (32, 64, 128)),
    },
    "picard": {
        "T": ("float", 40.0),
        "dt": ("float", 0.1),
        "size": ("float", 1e-3),
        "k_max": ("int", 12),
        "iter_tol": ("float", 1e-10),
        "halving": ("bool", True),
    },
    "simulate": {
        "T": ("float", 20.0),
        "dt": ("float", 0.1),
        "size": ("float", 1e-3),
        "store_every": ("int", 10),
        "nonlinear": ("bool", True),
    },
}

_TOLERANCES = {
    "invariants": {"residual": ("float", 1e-12)},
    "resolvent-sweep": {"bound_slope": ("float", 0.1), "smoothing_margin": ("float", 0.15),
                        "residual": ("float", 1e-8)},
    "decay-fit": {"slope": ("float", 0.15)},
    "gn-check": {"dilation_variation": ("float", 0.05), "random_stability": ("float", 0.1)},
    "picard": {"max_delta": ("float", 0.5), "residual": ("float", 1e-8), "E_max": ("float", 1e-2)},
    "simulate": {"energy_rise": ("float", 1e-6), "sym_traceless": ("float", 1e-10),
                 "div_rel": ("float", 1e-8), "E_max": ("float", 1e-2)},
}


def _schema(kind: str) -> dict:
    n_tan, n_wall, L, H = _GRID_DEFAULTS[kind]
    return {
        "run": {"kind": ("str", kind), "seed": ("int", 0), "out": ("str", "qthalf-out")},
        "model": {"N": ("int", 2), "xi": ("float", 1.0), "a": ("float", 1.0),
                  "b": ("float", 1.0), "c": ("float", 1.0)},
        "grid": {"n_tan": ("int", n_tan), "n_wall": ("int", n_wall),
                 "L_tan": ("float", L), "H_wall": ("float", H)},
        "scheme": {"theta": ("frac", Fraction(1, 4)), "p_margin": ("int", 2)},
        "experiment": dict(_EXPERIMENT[kind]),
        "tolerances": dict(_TOLERANCES[kind]),
    }


def _convert(kind: str, text: str):
    text = text.strip()
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "frac":
        return Fraction(text)
    if kind == "floats":
        return tuple(float(t) for t in text.split(",") if t.strip())
    if kind == "ints":
        return tuple(int(t) for t in text.split(",") if t.strip())
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return text


def _format(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "ints":
        return ", ".join(str(int(v)) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """A validated run configuration; ``sections[name][key]`` holds typed values."""

    kind: str
    sections: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.sections["run"]["seed"]

    @property
    def out(self) -> str:
        return self.sections["run"]["out"]

    @property
    def experiment(self) -> dict:
        return self.sections["experiment"]

    @property
    def tolerances(self) -> dict:
        return self.sections["tolerances"]

    def params(self) -> ModelParams:
        return ModelParams(**self.sections["model"])

    def grid(self):
        from .grid import Grid

        g = self.sections["grid"]
        return Grid(self.sections["model"]["N"], g["n_tan"], g["n_wall"], g["L_tan"], g["H_wall"])

    def scheme(self):
        from .driver import exponent_setup

        s = self.sections["scheme"]
        return exponent_setup(self.sections["model"]["N"], s["theta"], s["p_margin"])

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        if seed is not None:
            sections["run"]["seed"] = int(seed)
        if out is not None:
            sections["run"]["out"] = str(out)
        return RunConfig(self.kind, sections)

    def to_text(self, include_out: bool = True) -> str:
        """Normalized text form: every section and key in schema order.

        ``include_out=False`` drops ``run.out``; the echo written next to a report
        and the config digest use that form, so the output location does not
        change any report byte."""
        schema = _schema(self.kind)
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            for key, (typ, _) in schema[sec].items():
                if sec == "run" and key == "out" and not include_out:
                    continue
                lines.append(f"{key} = {_format(typ, self.sections[sec][key])}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text(include_out=False).encode()).hexdigest()


def _validate(kind: str, s: dict) -> list[str]:
    v: list[str] = []
    m, g, sc, ex, tol = s["model"], s["grid"], s["scheme"], s["experiment"], s["tolerances"]
    if m["N"] not in (2, 3):
        v.append(f"model.N = {m['N']}: N must be 2 or 3")
    if m["xi"] == 0:
        v.append("model.xi = 0: xi must be nonzero")
    for key in ("a", "b", "c"):
        if not m[key] > 0:
            v.append(f"model.{key} = {m[key]}: must be positive")
    n = g["n_tan"]
    if n < 4 or n & (n - 1):
        v.append(f"grid.n_tan = {n}: must be a power of two and at least 4")
    if g["n_wall"] < 8:
        v.append(f"grid.n_wall = {g['n_wall']}: must be at least 8")
    for key in ("L_tan", "H_wall"):
        if not g[key] > 0:
            v.append(f"grid.{key} = {g[key]}: must be positive")
    if not 0 < sc["theta"] < Fraction(1, 2):
        v.append(f"scheme.theta = {sc['theta']}: violates the integrability constraint 0 < theta < 1/2")
    if sc["p_margin"] < 0:
        v.append(f"scheme.p_margin = {sc['p_margin']}: must be non-negative")
    for key, val in tol.items():
        if not val > 0:
            v.append(f"tolerances.{key} = {val}: must be positive")

    def positive(*keys):
        for key in keys:
            if not ex[key] > 0:
                v.append(f"experiment.{key} = {ex[key]}: must be positive")

    def horizon():
        positive("T", "dt")
        if ex["T"] > 0 and ex["dt"] > 0:
            steps = ex["T"] / ex["dt"]
            if abs(steps - round(steps)) > 1e-9 * steps:
                v.append(f"experiment.T = {ex['T']} is not an integer multiple of experiment.dt = {ex['dt']}")

    if kind == "invariants":
        positive("samples")
    elif kind == "resolvent-sweep":
        beta = 2.0 * abs(m["xi"]) / m["N"] if m["N"] else 0.0
        eps0 = math.atan(beta / math.sqrt(2.0))
        if not eps0 < ex["epsilon"] < math.pi / 2:
            v.append(f"experiment.epsilon = {ex['epsilon']}: sector angle must lie in ({eps0:.4f}, pi/2)")
        positive("lam_min", "lam_max", "smooth_lam_min", "smooth_lam_max")
        if ex["lam_min"] >= ex["lam_max"] or ex["smooth_lam_min"] >= ex["smooth_lam_max"]:
            v.append("experiment: lam ranges must satisfy min < max")
        if ex["n_lam"] < 2 or ex["n_smooth"] < 2:
            v.append("experiment: n_lam and n_smooth must be at least 2")
        for a in ex["args_deg"]:
            if not abs(math.radians(a)) < math.pi - ex["epsilon"]:
                v.append(f"experiment.args_deg contains {a}: outside the sector |arg| < pi - epsilon")
        for q in tuple(ex["q"]) + (ex["smooth_q"], ex["smooth_q_tilde"]):
            if not q > 1:
                v.append(f"experiment: Lebesgue exponent {q} must exceed 1")
        if not ex["smooth_q_tilde"] <= ex["smooth_q"]:
            v.append("experiment: smooth_q_tilde must not exceed smooth_q")
    elif kind == "decay-fit":
        horizon()
        if m["N"] != 2:
            v.append("model.N: decay-fit needs N = 2 (the vortex profile is two-dimensional)")
        if ex["store_every"] < 1:
            v.append("experiment.store_every must be at least 1")
        if not 0 < ex["core"] < ex["r_flat"] < ex["r_cut"]:
            v.append("experiment: need 0 < core < r_flat < r_cut")
        if ex["r_cut"] >= 0.5 * min(g["L_tan"], g["H_wall"]):
            v.append("experiment.r_cut must stay below half of min(L_tan, H_wall)")
        if not 1 < ex["q_tilde"] <= ex["q"]:
            v.append("experiment: need 1 < q_tilde <= q")
        t_end = min(ex["T"], 0.1 * (g["L_tan"] / _TWO_PI) ** 2)
        if not t_end > ex["t_start"]:
            v.append(f"experiment: empty fit window [{ex['t_start']}, {t_end:.4g}]")
    elif kind == "gn-check":
        if not ex["scales"] or any(sv <= 0 for sv in ex["scales"]):
            v.append("experiment.scales must be non-empty and positive")
        if any(lv not in (0, 1) for lv in ex["levels"]) or not ex["levels"]:
            v.append("experiment.levels must be drawn from 0, 1")
        positive("samples", "kmax")
        if len(ex["random_n"]) < 2 or any(r < 4 or r & (r - 1) for r in ex["random_n"]):
            v.append("experiment.random_n needs at least two powers of two >= 4")
    elif kind in ("picard", "simulate"):
        horizon()
        positive("size")
        if kind == "picard" and ex["k_max"] < 2:
            v.append("experiment.k_max must be at least 2")
        if kind == "picard":
            positive("iter_tol")
        if kind == "simulate" and ex["store_every"] < 1:
            v.append("experiment.store_every must be at least 1")
    return v


def parse_config_text(text: str, kind: str | None = None, source: str = "<text>") -> RunConfig:
    """Parse and validate configuration text; raise :class:`ConfigError` listing
    every violation. ``kind`` (from the command line) must agree with ``run.kind``
    when both are given."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    violations: list[str] = []
    bad_values = False
    file_kind = cp.get("run", "kind", fallback=None)
    if file_kind is not None:
        file_kind = file_kind.strip()
    if kind is not None and file_kind is not None and kind != file_kind:
        violations.append(f"run.kind = {file_kind} disagrees with the command-line kind {kind}")
    kind = kind or file_kind
    if kind not in KINDS:
        raise ConfigError(violations + [f"run.kind = {kind}: must be one of {', '.join(KINDS)}"])
    schema = _schema(kind)
    sections = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in schema.items()}
    for sec in cp.sections():
        if sec not in schema:
            violations.append(f"unknown section [{sec}]")
            continue
        for key, raw in cp.items(sec):
            if key not in schema[sec]:
                violations.append(f"unknown key {sec}.{key} for kind {kind}")
                continue
            typ = schema[sec][key][0]
            try:
                sections[sec][key] = _convert(typ, raw)
            except (ValueError, ZeroDivisionError) as exc:
                violations.append(f"{sec}.{key} = {raw!r}: expected {typ} ({exc})")
                bad_values = True
    sections["run"]["kind"] = kind
    if not bad_values:  # typed values are needed for the constraint checks
        violations.extend(_validate(kind, sections))
    if violations:
        raise ConfigError(violations)
    return RunConfig(kind, sections)


def parse_config(path, kind: str | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {p}: {exc.strerror}"]) from None
    return parse_config_text(text, kind, str(p))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class Metric:
    name: str
    value: float | None
    tolerance: float | None
    comparator: str  # "<=", ">=", "abs<=" (|value - target| <= tol), "==", "info"
    passed: bool
    source: str  # module operation that produced the value
    estimate: str  # plain-language statement being checked
    target: float | None = None

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": _json_number(self.value),
            "tolerance": _json_number(self.tolerance),
            "target": _json_number(self.target),
            "comparator": self.comparator,
            "passed": self.passed,
            "source": self.source,
            "estimate": self.estimate,
        }


def _json_number(x):
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    x = float(x)
    return x if math.isfinite(x) else None


def check_le(name, value, tol, source, estimate) -> Metric:
    ok = value is not None and math.isfinite(value) and value <= tol
    return Metric(name, value, tol, "<=", bool(ok), source, estimate)


def check_ge(name, value, tol, source, estimate) -> Metric:
    ok = value is not None and math.isfinite(value) and value >= tol
    return Metric(name, value, tol, ">=", bool(ok), source, estimate)


def check_near(name, value, target, tol, source, estimate) -> Metric:
    ok = value is not None and math.isfinite(value) and abs(value - target) <= tol
    return Metric(name, value, tol, "abs<=", bool(ok), source, estimate, target)


def check_true(name, flag, source, estimate) -> Metric:
    return Metric(name, 1.0 if flag else 0.0, None, "==", bool(flag), source, estimate, 1.0)


@dataclass
class Report:
    kind: str
    metrics: list[Metric] = field(default_factory=list)
    series: dict = field(default_factory=dict)  # name -> (header, rows)
    config_text: str = ""
    config_hash: str = ""
    snapshots: dict = field(default_factory=dict)  # file name -> (grid, array)

    @property
    def passed(self) -> bool:
        return all(m.passed for m in self.metrics)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "passed": self.passed,
            "metrics": [m.as_dict() for m in self.metrics],
            "series": {name: f"{name}.csv" for name in sorted(self.series)},
            "snapshots": sorted(self.snapshots),
            "provenance": {"config_sha256": self.config_hash, "code_version": __version__},
        }


def emit_report(report: Report, out_dir) -> list[Path]:
    """Write ``report.json`` (sorted keys), one CSV per series, the normalized
    config echo ``config.ini`` and any field snapshots. Returns the paths written."""
    from .grid import save_snapshot

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    written = []

    def write(path: Path, text: str):
        try:
            path.write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        written.append(path)

    write(out / "report.json", json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    for name in sorted(report.series):
        header, rows = report.series[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_cell(c) for c in row])
        write(out / f"{name}.csv", buf.getvalue())
    write(out / "config.ini", report.config_text)
    for name in sorted(report.snapshots):
        grid, values = report.snapshots[name]
        path = out / name
        try:
            save_snapshot(path, grid, values)
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        written.append(path)
    return written


def _csv_cell(c):
    if c is None:
        return ""
    if isinstance(c, (float, np.floating)):
        return repr(float(c))
    return str(c)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _run_invariants(cfg: RunConfig, rep: Report):
    from .experiments import invariant_suite

    res = invariant_suite(cfg.seed, cfg.experiment["samples"])
    tol = cfg.tolerances["residual"]
    for name in sorted(res):
        rep.metrics.append(check_le(f"invariant:{name}", res[name], tol,
                                    "experiments.invariant_suite",
                                    "pointwise algebraic identity of the model tensors"))


def _run_resolvent(cfg: RunConfig, rep: Report):
    from .experiments import centred_data, band_data, resolvent_sweep, smoothing_slope
    from .linear import Sector

    ex, tol = cfg.experiment, cfg.tolerances
    grid, prm = cfg.grid(), cfg.params()
    sector = Sector(prm.beta, ex["epsilon"])
    f, G = centred_data(grid, cfg.seed)
    mags = np.logspace(math.log10(ex["lam_min"]), math.log10(ex["lam_max"]), ex["n_lam"])
    args = [math.radians(a) for a in ex["args_deg"]]
    sw = resolvent_sweep(grid, prm, f, G, mags, args, ex["q"], sector)
    rows = []
    for a_deg, a in zip(ex["args_deg"], args):
        for q in ex["q"]:
            rep.metrics.append(check_near(f"bound_slope[arg={a_deg:g}deg,q={q:g}]", sw.slopes[(a, q)], 0.0,
                                          tol["bound_slope"], "experiments.resolvent_sweep",
                                          "resolvent bound: (|lam|, |lam|^1/2 grad, grad^2)(u,Q) <= C (f, grad G)"))
            for m, r in zip(mags, sw.ratios[(a, q)]):
                rows.append([a_deg, q, float(m), float(r)])
    rep.series["resolvent_ratio"] = (["arg_deg", "q", "abs_lambda", "ratio"], rows)
    rep.metrics.append(check_le("max_mode_residual", sw.max_residual, tol["residual"],
                                "linear.ModeSolver.solve", "per-mode linear solve residual"))
    q, qt = ex["smooth_q"], ex["smooth_q_tilde"]
    kappa = prm.N * (1.0 / qt - 1.0 / q)
    fb, Gb = band_data(grid, cfg.seed)
    smags = np.logspace(math.log10(ex["smooth_lam_min"]), math.log10(ex["smooth_lam_max"]), ex["n_smooth"])
    slope, vals = smoothing_slope(grid, prm, fb, Gb, smags, q, qt)
    rep.metrics.append(check_le("smoothing_slope", slope, -(1.0 - kappa / 2.0) + tol["smoothing_margin"],
                                "experiments.smoothing_slope",
                                "resolvent smoothing: ||u(lam)||_q <= C |lam|^-(1 - kappa/2) ||F||_q~"))
    rep.series["smoothing"] = (["abs_lambda", "norm_u_Lq"], [[float(m), float(v)] for m, v in zip(smags, vals)])


def _run_decay(cfg: RunConfig, rep: Report):
    from .experiments import decay_fit, vortex_data

    ex = cfg.experiment
    grid, prm = cfg.grid(), cfg.params()
    u0, Q0 = vortex_data(grid, ex["r_flat"], ex["r_cut"], ex["core"])
    fit = decay_fit(grid, prm, u0, Q0, ex["T"], ex["dt"], ex["q"], ex["store_every"], ex["t_start"])
    kappa = prm.N * (1.0 / ex["q_tilde"] - 1.0 / ex["q"])
    rep.metrics.append(check_near("decay_slope", fit.slope, -kappa / 2.0, cfg.tolerances["slope"],
                                  "experiments.decay_fit",
                                  "semigroup decay: ||T(t) U0||_q <= C t^(-kappa/2) ||U0||_q~"))
    rep.metrics.append(Metric("fit_window_end", fit.window[1], None, "info", True,
                              "experiments.decay_fit", "upper end of the fit window"))
    rep.series["decay"] = (["t", "norm"], [[float(t), float(v)] for t, v in zip(fit.times, fit.values)])


def _run_gn(cfg: RunConfig, rep: Report):
    from .experiments import gn_dilation_sweep, gn_random_sweep
    from .grid import Grid

    ex, tol = cfg.experiment, cfg.tolerances
    grid, sch = cfg.grid(), cfg.scheme()
    rows = []
    for level in ex["levels"]:
        ratios, spread = gn_dilation_sweep(grid, sch, ex["scales"], level)
        rep.metrics.append(check_le(f"dilation_variation[level={level}]", spread, tol["dilation_variation"],
                                    "experiments.gn_dilation_sweep",
                                    "Gagliardo-Nirenberg ratio is dilation invariant"))
        rows += [[level, float(s), float(r)] for s, r in zip(ex["scales"], ratios)]
    rep.series["gn_dilation"] = (["level", "scale", "ratio"], rows)
    rows = []
    N = cfg.sections["model"]["N"]
    for level in ex["levels"]:
        maxima = []
        for n in ex["random_n"]:
            g = Grid(N, n, n // 2 + 1, _TWO_PI, math.pi)
            maxima.append(gn_random_sweep(g, sch, ex["samples"], ex["kmax"], level, cfg.seed))
            rows.append([level, n, maxima[-1]])
        change = max(abs(b - a) / a for a, b in zip(maxima, maxima[1:]))
        rep.metrics.append(check_le(f"random_max_change[level={level}]", change, tol["random_stability"],
                                    "experiments.gn_random_sweep",
                                    "largest random-field ratio stays bounded under refinement"))
    rep.series["gn_random"] = (["level", "n_tan", "max_ratio"], rows)


def _run_picard(cfg: RunConfig, rep: Report):
    from .driver import picard_iterate, small_data

    ex, tol = cfg.experiment, cfg.tolerances
    grid, prm, sch = cfg.grid(), cfg.params(), cfg.scheme()

    def run(size):
        u0, Q0 = small_data(grid, prm, sch, size, seed=cfg.seed)
        return picard_iterate(u0, Q0, grid, prm, sch, ex["T"], ex["dt"], ex["k_max"], ex["iter_tol"])

    res = run(ex["size"])
    src = "driver.picard_iterate"
    rep.metrics.append(check_le("max_delta", res.max_delta, tol["max_delta"], src,
                                "contraction: E(Phi(U1) - Phi(U2)) <= delta E(U1 - U2)"))
    rep.metrics.append(check_le("final_residual", res.final_residual, tol["residual"], src,
                                "fixed point solves the discrete nonlinear system"))
    E = res.reports[-1].E_total if res.reports else 0.0
    rep.metrics.append(check_le("E_limit", E, tol["E_max"], src, "small data give a small solution norm E"))
    rep.metrics.append(check_true("converged", res.converged and not res.diverging, src,
                                  "iteration converges"))
    rows = [[r.k, r.E, r.E_diff, r.delta, r.residual] for r in res.records]
    rep.series["picard"] = (["k", "E", "E_diff", "delta", "residual"], rows)
    if ex["halving"]:
        half = run(0.5 * ex["size"])
        rep.metrics.append(check_le("max_delta_halved", half.max_delta, res.max_delta, src,
                                    "halving the data does not increase the contraction factor"))
        rows = [[r.k, r.E, r.E_diff, r.delta, r.residual] for r in half.records]
        rep.series["picard_halved"] = (["k", "E", "E_diff", "delta", "residual"], rows)


def _run_simulate(cfg: RunConfig, rep: Report):
    from .driver import simulate, small_data, weighted_norm_E

    ex, tol = cfg.experiment, cfg.tolerances
    grid, prm, sch = cfg.grid(), cfg.params(), cfg.scheme()
    u0, Q0 = small_data(grid, prm, sch, ex["size"], seed=cfg.seed)
    traj = simulate(u0, Q0, grid, prm, ex["T"], ex["dt"], nonlinear=ex["nonlinear"],
                    store_every=ex["store_every"])
    diag = [d for d in traj.diagnostics if "energy" in d]
    energy = np.array([d["energy"] for d in diag])
    rise = float(np.max(np.diff(energy)) / energy[0]) if len(energy) > 1 and energy[0] > 0 else 0.0
    src = "driver.simulate"
    rep.metrics.append(check_le("energy_rise", max(rise, 0.0), tol["energy_rise"], src,
                                "total energy is non-increasing"))
    rep.metrics.append(check_le("sym_traceless", max(d["sym_traceless"] for d in diag), tol["sym_traceless"],
                                src, "Q stays symmetric and traceless"))
    rep.metrics.append(check_le("div_rel", max(d["div_rel"] for d in diag), tol["div_rel"], src,
                                "velocity stays divergence free"))
    rep.metrics.append(check_le("wall_u", max(d["wall_u"] for d in diag), 0.0, src,
                                "velocity vanishes on the walls"))
    rep.metrics.append(check_true("no_blowup", traj.status == "ok", src, "run completes without blow-up"))
    E = weighted_norm_E(traj, sch)
    rep.metrics.append(check_le("E", E.E_total, tol["E_max"], "driver.weighted_norm_E",
                                "small data give a small solution norm E"))
    rep.metrics.append(Metric("E_tail_fraction", E.tail_fraction, None, "info", True,
                              "driver.weighted_norm_E", "share of E from the last tenth of the horizon"))
    keys = ["t", "energy", "max_abs", "sym_traceless", "wall_u", "div_rel"]
    rep.series["diagnostics"] = (keys, [[d[k] for k in keys] for d in diag])
    rep.snapshots["final_u.qth"] = (grid, traj.u[-1])
    rep.snapshots["final_Q.qth"] = (grid, traj.Q[-1])


_RUNNERS = {
    "invariants": _run_invariants,
    "resolvent-sweep": _run_resolvent,
    "decay-fit": _run_decay,
    "gn-check": _run_gn,
    "picard": _run_picard,
    "simulate": _run_simulate,
}


def run_experiment(cfg: RunConfig) -> Report:
    """Run the configured experiment and return its report (nothing is written)."""
    rep = Report(cfg.kind, config_text=cfg.to_text(include_out=False), config_hash=cfg.digest())
    try:
        _RUNNERS[cfg.kind](cfg, rep)
    except Exception as exc:
        raise RuntimeError(f"experiment {cfg.kind} (config {cfg.digest()[:12]}) failed: {exc}") from exc
    return rep


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qthalf", description="Q-tensor half-space verification harness")
    ap.add_argument("kind", choices=KINDS, help="experiment to run")
    ap.add_argument("--config", required=True, help="configuration file (flat INI sections)")
    ap.add_argument("--seed", type=int, default=None, help="override run.seed")
    ap.add_argument("--out", default=None, help="override run.out (output directory)")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(ns.config, ns.kind).with_overrides(ns.seed, ns.out)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    try:
        rep = run_experiment(cfg)
        emit_report(rep, cfg.out)
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for m in rep.metrics:
        flag = "info" if m.comparator == "info" else ("PASS" if m.passed else "FAIL")
        print(f"{flag:4s} {m.name} = {_json_number(m.value)!r}")
    print(f"{'PASS' if rep.passed else 'FAIL'} {cfg.kind}: report in {cfg.out}")
    return EXIT_OK if rep.passed else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
