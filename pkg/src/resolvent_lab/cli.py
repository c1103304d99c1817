"""Command-line runner: sectioned key = value configs, experiment rows, CSV and JSON reports.

Config format::

    # comment
    [run]
    command = exceptional-scan
    seed = 0
    [grid]
    N = 13
    [potential]
    kind = square_well
    depth = 10
    radius = 1.3
    [scan]
    lo = -12
    hi = -0.01

Lists are comma separated.  Every error in a file is reported, each with its
line and column.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

SCHEMA_VERSION = 1
COMMANDS = ("resolvent-scan", "exceptional-scan", "spectral-density", "multiplier", "strichartz", "keller", "smoothing")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


@dataclass(frozen=True)
class ConfigIssue:
    line: int
    column: int
    kind: str  # syntax | unknown-key | precondition
    message: str

    def __str__(self):
        return f"line {self.line}, column {self.column}: {self.kind}: {self.message}"


# ---------------------------------------------------------------- value types


def _float(text):
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    return float(t)


def _int(text):
    return int(text.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text):
    return text.strip()


def _list(conv):
    def parse(text):
        items = [t for t in (s.strip() for s in text.split(",")) if t]
        return tuple(conv(t) for t in items)

    parse.item = conv
    return parse


def _complex(text):
    return complex(text.strip().replace(" ", ""))


def _ratio(text):
    # exponents may be written as fractions, e.g. 4/3
    t = text.strip()
    if "/" in t:
        a, b = t.split("/", 1)
        return float(a) / float(b)
    return _float(t)


def _pair(text):
    a, b = text.split(":", 1)
    return (_ratio(a), _ratio(b))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return "inf" if value == math.inf else repr(value)
    if isinstance(value, complex):
        return repr(value).strip("()")
    return str(value)


def _format_pair(pair) -> str:
    return f"{_format(float(pair[0]))}:{_format(float(pair[1]))}"


# ---------------------------------------------------------------- schema

GRID_KEYS = {"n": (_int, 3), "N": (_int, 13), "L": (_float, 6.0), "refine_N": (_int, None), "rule": (_str, "zeta")}

POTENTIAL_KEYS = {
    "kind": (_str, "zero"),
    "depth": (_float, None),
    "height": (_float, None),
    "radius": (_float, None),
    "strength": (_float, None),
    "width": (_float, None),
    "value": (_float, None),
    "s": (_float, 1.0),
    "mode": (_str, "cell"),
}

PRESET_PARAMS = {
    "zero": ((), ()),
    "square_well": (("depth", "radius"), ()),
    "barrier": (("height", "radius"), ()),
    "inverse_square": (("strength",), ("radius",)),
    "gaussian": (("depth", "width"), ()),
    "constant": (("value",), ()),
}

SCAN_KEYS = {
    "resolvent-scan": {
        "z": (_list(_complex), (-0.25 + 0j, -1 + 0j, -4 + 0j, -16 + 0j)),
        "side": (_str, "auto"),
        "pairs": (_list(_pair), ((4 / 3, 4.0), (6 / 5, 6.0))),
        "lorentz_q": (_float, 2.0),
        "trials": (_int, 2),
        "steps": (_int, 30),
    },
    "exceptional-scan": {
        "lo": (_float, -12.0),
        "hi": (_float, -0.01),
        "steps": (_int, 41),
        "tol": (_float, 0.05),
        "split": (_float, 1.0),
    },
    "spectral-density": {"lams": (_list(_float), (1.0, 2.0, 4.0)), "eps0": (_float, 0.1), "levels": (_int, 4)},
    "multiplier": {
        "kind": (_str, "heat"),
        "params": (_list(_float), (0.5, 1.0, 2.0)),
        "p": (_list(_float), (1.5, 2.0, 4.0)),
        "trials": (_int, 2),
        "steps": (_int, 30),
    },
    "strichartz": {
        "T": (_float, 8.0),
        "steps": (_int, 129),
        "pairs": (_list(_pair), ((2.0, 6.0), (4.0, 3.0))),
        "s_values": (_list(_float), ()),
        "count": (_int, 20),
        "forcings": (_int, 4),
        "pieces": (_int, 3),
    },
    "keller": {
        "kappa_min": (_float, 0.5),
        "kappa_max": (_float, 5.0),
        "members": (_int, 10),
        "radius": (_float, 1.0),
        "gamma": (_float, 0.5),
        "delta": (_float, 0.1),
        "loc_radius": (_float, None),
        "loc_threshold": (_float, 0.6),
        "resolution": (_float, 1.0),
        "bs_N": (_int, None),
        "bs_L": (_float, None),
        "check": (_bool, True),
    },
    "smoothing": {
        "rho": (_float, 1.0),
        "T": (_float, 8.0),
        "steps": (_int, 129),
        "count": (_int, 20),
        "kato": (_bool, True),
        "lam_points": (_int, 13),
    },
}

RUN_KEYS = {"command": (_str, None), "seed": (_int, 0), "schema_version": (_int, SCHEMA_VERSION), "out": (_str, "results")}

SECTIONS = ("run", "grid", "potential", "scan")


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    out: str = "results"
    grid: dict = field(default_factory=dict)
    potential: dict = field(default_factory=dict)
    scan: dict = field(default_factory=dict)

    def to_sections(self) -> dict:
        """Canonical text of every set key, per section (the report echo)."""
        run = {"command": self.command, "seed": str(self.seed), "schema_version": str(self.schema_version), "out": self.out}
        out = {"run": run}
        for name in ("grid", "potential", "scan"):
            sec = {}
            for k, v in getattr(self, name).items():
                if v is None:
                    continue
                if k == "pairs":
                    sec[k] = ", ".join(_format_pair(p) for p in v)
                else:
                    sec[k] = _format(v)
            out[name] = sec
        return out

    def to_text(self) -> str:
        lines = []
        for name, sec in self.to_sections().items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in sec.items())
        return "\n".join(lines) + "\n"


def sections_to_text(sections: dict) -> str:
    lines = []
    for name, sec in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {v}" for k, v in sec.items())
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Parse and validate a config; raises ConfigError carrying every issue found."""
    issues = []
    raw = {s: {} for s in SECTIONS}
    where = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        col = len(line) - len(line.lstrip()) + 1
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                issues.append(ConfigIssue(lineno, col + len(stripped), "syntax", "section header lacks a closing ']'"))
                section = None
                continue
            name = stripped[1:-1].strip()
            if name not in SECTIONS:
                issues.append(ConfigIssue(lineno, col + 1, "unknown-key", f"unknown section [{name}]"))
                section = None
                continue
            section = name
            continue
        if "=" not in stripped:
            issues.append(ConfigIssue(lineno, col, "syntax", "expected 'key = value'"))
            continue
        key, value = stripped.split("=", 1)
        key = key.strip()
        vcol = line.index("=") + 2
        if not key:
            issues.append(ConfigIssue(lineno, col, "syntax", "empty key"))
            continue
        if section is None:
            issues.append(ConfigIssue(lineno, col, "syntax", f"key {key!r} outside any section"))
            continue
        if key in raw[section]:
            issues.append(ConfigIssue(lineno, col, "syntax", f"duplicate key {key!r} in [{section}]"))
            continue
        raw[section][key] = value.strip()
        where[(section, key)] = (lineno, col, vcol)

    command = raw["run"].get("command")
    if command is None:
        issues.append(ConfigIssue(1, 1, "precondition", "[run] command is required"))
    elif command not in COMMANDS:
        ln, _, vc = where[("run", "command")]
        issues.append(ConfigIssue(ln, vc, "precondition", f"unknown command {command!r}; one of {', '.join(COMMANDS)}"))

    schemas = {"run": RUN_KEYS, "grid": GRID_KEYS, "potential": POTENTIAL_KEYS, "scan": SCAN_KEYS.get(command, {})}
    values = {}
    for name in SECTIONS:
        schema = schemas[name]
        out = {k: default for k, (_, default) in schema.items()}
        for key, text_value in raw[name].items():
            ln, col, vcol = where[(name, key)]
            if key not in schema:
                if name == "scan" and command not in COMMANDS:
                    continue
                issues.append(ConfigIssue(ln, col, "unknown-key", f"unknown key {key!r} in [{name}]"))
                continue
            conv = schema[key][0]
            try:
                out[key] = conv(text_value)
            except (ValueError, TypeError, ZeroDivisionError) as exc:
                issues.append(ConfigIssue(ln, vcol, "syntax", f"{key}: cannot parse {text_value!r} ({exc})"))
        values[name] = out

    issues.extend(_validate(values, where))
    if issues:
        raise ConfigError(sorted(issues, key=lambda e: (e.line, e.column)))
    run = values["run"]
    return RunConfig(run["command"], run["seed"], run["schema_version"], run["out"], values["grid"], values["potential"], values["scan"])


def _validate(values, where):
    issues = []

    def at(section, key, msg):
        ln, col, vcol = where.get((section, key), (1, 1, 1))
        issues.append(ConfigIssue(ln, vcol, "precondition", msg))

    run, grid, pot, scan = values["run"], values["grid"], values["potential"], values["scan"]
    if run["schema_version"] != SCHEMA_VERSION:
        at("run", "schema_version", f"schema_version {run['schema_version']} is not supported (expected {SCHEMA_VERSION})")
    if run["seed"] < 0:
        at("run", "seed", "seed must be non-negative")
    if grid["n"] not in (3, 5):
        at("grid", "n", "dimension n must be 3 or 5")
    for key in ("N", "refine_N"):
        N = grid[key]
        if N is not None and (N < 5 or N % 2 == 0):
            at("grid", key, f"{key} = {N}: build_grid needs an odd per-axis count N >= 5")
    if not grid["L"] > 0:
        at("grid", "L", "extent L must be positive")
    if grid["rule"] not in ("zeta", "cell"):
        at("grid", "rule", "diagonal rule must be zeta or cell")
    kind = pot["kind"]
    if kind not in PRESET_PARAMS:
        at("potential", "kind", f"unknown potential kind {kind!r}; one of {', '.join(PRESET_PARAMS)}")
    else:
        required, optional = PRESET_PARAMS[kind]
        for key in ("depth", "height", "radius", "strength", "width", "value"):
            if key in required and pot[key] is None:
                at("potential", "kind", f"{kind} needs {key}")
            if pot[key] is not None and key not in required + optional:
                at("potential", key, f"{key} does not apply to {kind}")
        for key in ("radius", "width"):
            if pot[key] is not None and not pot[key] > 0:
                at("potential", key, f"{key} must be positive")
    if not 0.5 < pot["s"] < 1.5:
        at("potential", "s", "split exponent s must lie in (1/2, 3/2)")
    if pot["mode"] not in ("cell", "point"):
        at("potential", "mode", "mode must be cell or point")

    command = run["command"]
    if command == "resolvent-scan":
        if scan["side"] not in ("auto", "plus", "minus"):
            at("scan", "side", "side must be auto, plus or minus")
        for p, q in scan["pairs"]:
            if not (1 < p < math.inf and 1 < q < math.inf):
                at("scan", "pairs", f"pair {p}:{q} needs 1 < p, q < inf")
        if not scan["lorentz_q"] >= 1:
            at("scan", "lorentz_q", "secondary exponent must be >= 1")
        for z in scan["z"]:
            if z.imag == 0 and z.real >= 0 and scan["side"] == "auto":
                pass  # real nonnegative energies default to the plus side
    elif command == "exceptional-scan":
        if not scan["lo"] < scan["hi"]:
            at("scan", "hi", "need lo < hi")
        if scan["steps"] < 3:
            at("scan", "steps", "need at least 3 steps")
        if not 0.5 < scan["split"] < 1.5:
            at("scan", "split", "split exponent must lie in (1/2, 3/2)")
    elif command == "spectral-density":
        if any(not lam > 0 for lam in scan["lams"]):
            at("scan", "lams", "spectral densities need lam > 0")
    elif command == "multiplier":
        if scan["kind"] not in ("heat", "imaginary_power", "littlewood_paley"):
            at("scan", "kind", "multiplier kind must be heat, imaginary_power or littlewood_paley")
        if any(not 1 < p < math.inf for p in scan["p"]):
            at("scan", "p", "need 1 < p < inf")
    elif command == "strichartz":
        if not scan["T"] > 0:
            at("scan", "T", "horizon must be positive")
        if scan["steps"] < 2:
            at("scan", "steps", "need at least 2 time steps")
        n = grid["n"]
        lo, hi = n / (2.0 * (n - 1)), (3.0 * n - 4) / (2.0 * (n - 1)) if n > 1 else (0, 0)
        for s in scan["s_values"]:
            if not lo - 1e-12 <= s <= hi + 1e-12:
                at("scan", "s_values", f"s = {s} outside [{lo:.4g}, {hi:.4g}]")
    elif command == "keller":
        if not scan["gamma"] > 0:
            at("scan", "gamma", "gamma must be positive")
        if scan["members"] < 1:
            at("scan", "members", "family needs at least one member")
        if not 0 < scan["kappa_min"] <= scan["kappa_max"]:
            at("scan", "kappa_max", "need 0 < kappa_min <= kappa_max")
        if (scan["bs_N"] is None) != (scan["bs_L"] is None):
            at("scan", "bs_N", "bs_N and bs_L go together")
        if scan["bs_N"] is not None and (scan["bs_N"] < 5 or scan["bs_N"] % 2 == 0):
            at("scan", "bs_N", "bs_N must be odd and >= 5")
    elif command == "smoothing":
        if not scan["rho"] > 0.5:
            at("scan", "rho", "weight exponent rho must exceed 1/2")
    return issues


# ---------------------------------------------------------------- experiments


@dataclass
class RunReport:
    config: RunConfig
    columns: list
    rows: list
    notes: dict
    timings: dict
    failures: int = 0

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.to_sections(),
            "environment": {"package": "resolvent_lab", "version": _version(), "seed": self.config.seed},
            "rows": self.rows,
            "notes": self.notes,
            "timings": self.timings,
        }
        return json.dumps(_jsonable(doc), indent=2, sort_keys=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_cell(row.get(c)) for c in self.columns])
        return buf.getvalue()


def _version() -> str:
    from . import __version__

    return __version__


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _grid(cfg: RunConfig, N=None):
    from .discretization import build_grid

    g = cfg.grid
    return build_grid(g["n"], N or g["N"], g["L"])


def _preset(cfg: RunConfig):
    from .discretization import PotentialPreset

    p = cfg.potential
    required, optional = PRESET_PARAMS[p["kind"]]
    params = tuple((k, float(p[k])) for k in required + optional if p[k] is not None)
    return PotentialPreset(p["kind"], params)


def _potential(cfg: RunConfig, g):
    from .discretization import make_potential

    return make_potential(_preset(cfg), g, cfg.potential["s"], cfg.potential["mode"])


def _run_rows(tasks, threads):
    """Evaluate (key, thunk) tasks; failures become rows with status 'failed'."""

    def one(task):
        key, thunk = task
        try:
            rows = thunk()
            return [dict(r, status="ok", error="") for r in rows]
        except Exception as exc:  # fail-soft: the row records the error
            return [dict(key, status="failed", error=f"{type(exc).__name__}: {exc}")]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, tasks))
    else:
        parts = [one(t) for t in tasks]
    return [r for part in parts for r in part]


def _resolvent_scan(cfg, g, V, threads):
    from .birman_schwinger import resolvent_operator
    from .discretization import assemble_free_resolvent, lorentz_operator_norm
    from .kernels import Side, SpectralPoint
    from .lorentz import LorentzExponent

    sc = cfg.scan
    tasks = []
    for z in sc["z"]:
        side = Side.INTERIOR
        if z.imag == 0 and z.real >= 0:
            side = Side.MINUS if sc["side"] == "minus" else Side.PLUS
        point = SpectralPoint(z, side)
        for p, q in sc["pairs"]:
            key = {"z_re": z.real, "z_im": z.imag, "side": side.value, "p": p, "q": q}

            def thunk(point=point, p=p, q=q, key=key):
                if V.is_zero:
                    R = assemble_free_resolvent(g, point, cfg.grid["rule"])
                else:
                    R = resolvent_operator(V, point, g)
                est = lorentz_operator_norm(
                    R, LorentzExponent(p, sc["lorentz_q"]), LorentzExponent(q, sc["lorentz_q"]),
                    trials=sc["trials"], seed=cfg.seed, steps=sc["steps"], grid=g,
                )
                return [dict(key, norm_lb=est.value, witness_id=est.witness_id)]

            tasks.append((key, thunk))
    cols = ["z_re", "z_im", "side", "p", "q", "norm_lb", "witness_id"]
    return cols, _run_rows(tasks, threads), {}


def _exceptional_scan(cfg, g, V, threads):
    from .birman_schwinger import SplitExponent, exceptional_scan

    sc = cfg.scan
    key = {"lam": None}

    def thunk():
        rep = exceptional_scan(V, (sc["lo"], sc["hi"]), steps=sc["steps"], split=SplitExponent(sc["split"], g.n), g=g, tol=sc["tol"])
        thunk.report = rep
        return [
            {"lam": c.lam, "bs_distance": c.bs_distance, "kernel_dim": c.kernel_dim, "confirmed_distance": c.confirmed_distance}
            for c in rep.candidates
        ]

    rows = _run_rows([(key, thunk)], 1)
    notes = {}
    rep = getattr(thunk, "report", None)
    if rep is not None:
        notes = {"scan_range": list(rep.scan_range), "tolerance": rep.tolerance, "profile": [list(map(float, p)) for p in rep.profile]}
    return ["lam", "bs_distance", "kernel_dim", "confirmed_distance"], rows, notes


def _spectral_density(cfg, g, V, threads):
    from .spectral import kernel_values, spectral_density

    sc = cfg.scan
    o = g.index_of_origin()
    tasks = []
    for lam in sc["lams"]:
        key = {"lam": lam}

        def thunk(lam=lam, key=key):
            st = kernel_values(spectral_density(V, lam, g, "stone", sc["eps0"], sc["levels"]))
            fa = kernel_values(spectral_density(V, lam, g, "factorized", sc["eps0"], sc["levels"]))
            return [dict(key, stone_diag=float(st[o, o].real), factorized_diag=float(fa[o, o].real),
                         max_entry_diff=float(np.max(np.abs(st - fa))), free_diag=math.sqrt(lam) / (4 * math.pi**2))]

        tasks.append((key, thunk))
    return ["lam", "stone_diag", "factorized_diag", "max_entry_diff", "free_diag"], _run_rows(tasks, threads), {}


def _multiplier(cfg, g, V, threads):
    from .discretization import DiscreteOperator, lorentz_operator_norm
    from .lorentz import LorentzExponent
    from .spectral import dyadic_bump, hamiltonian_spectrum

    sc = cfg.scan
    sd = hamiltonian_spectrum(g, V)
    lam = sd.eigenvalues
    positive = lam > sd.tol_zero
    tasks = []
    for a in sc["params"]:
        if sc["kind"] == "heat":
            values = np.exp(-a * lam)
        elif sc["kind"] == "imaginary_power":
            values = np.where(positive, np.exp(1j * a * np.log(np.where(positive, lam, 1.0))), 0.0)
        else:
            values = np.where(positive, dyadic_bump(2.0 ** (-a) * np.where(positive, lam, 1.0)), 0.0)
        A = DiscreteOperator(sd.function_matrix(values), sd.weights, sd.weights, f"{sc['kind']}({a:g})", g)
        for p in sc["p"]:
            key = {"kind": sc["kind"], "param": a, "p": p}

            def thunk(A=A, p=p, key=key):
                e = LorentzExponent.lebesgue(p)
                est = lorentz_operator_norm(A, e, e, trials=sc["trials"], seed=cfg.seed, steps=sc["steps"], grid=g)
                return [dict(key, norm_lb=est.value, witness_id=est.witness_id)]

            tasks.append((key, thunk))
    return ["kind", "param", "p", "norm_lb", "witness_id"], _run_rows(tasks, threads), {"negative_count": sd.negative_count}


def _strichartz(cfg, g, V, threads):
    from . import dispersive as D
    from .spectral import hamiltonian_spectrum

    sc = cfg.scan
    sd = hamiltonian_spectrum(g, V)
    ok, found = D.dispersive_hypothesis(V)
    data = D.packet_family(g, sc["count"], cfg.seed)
    forcings = [D.random_simple_forcing(g, sc["T"], sc["pieces"], cfg.seed + 1000 + j) for j in range(sc["forcings"])]
    pairs = [D.AdmissiblePair(p, q, g.n) for p, q in sc["pairs"]]
    key = {"label": None}

    def thunk():
        rep = D.strichartz_table(sd, pairs, data, sc["T"], sc["steps"], forcings, sc["s_values"], ok, found)
        return [{"label": r.label, "p": r.p, "q": r.q, "admissible": r.admissible, "max_ratio": r.max_ratio, "argmax": r.argmax} for r in rep.rows]

    rows = _run_rows([(key, thunk)], 1)
    notes = {"hypothesis_ok": ok, "exceptional": found, "negative_count": sd.negative_count}
    return ["label", "p", "q", "admissible", "max_ratio", "argmax"], rows, notes


def _keller(cfg, g, V, threads):
    from . import eigenvalue_bounds as EB
    from .discretization import build_grid

    sc = cfg.scan
    kappas = np.linspace(sc["kappa_min"], sc["kappa_max"], sc["members"])
    family = EB.imaginary_well_family(g, kappas, sc["radius"], sc["gamma"], cfg.potential["mode"])
    bs_grid = build_grid(g.n, sc["bs_N"], sc["bs_L"]) if sc["bs_N"] is not None else None
    Vk = None if V.is_zero else V
    key = {"member": None}
    holder = {}

    def thunk():
        rep = EB.keller_scan(
            Vk, family, sc["gamma"], sc["delta"], g,
            loc_radius=sc["loc_radius"], loc_threshold=sc["loc_threshold"], resolution=sc["resolution"],
            bs_grid=bs_grid, check=sc["check"],
        )
        holder["rep"] = rep
        return [
            {"member": r.member, "kappa": float(kappas[r.member]), "E_re": r.energy.real, "E_im": r.energy.imag,
             "ratio": r.ratio, "localisation": r.localisation, "bs_distance": r.bs_distance}
            for r in rep.rows
        ]

    rows = _run_rows([(key, thunk)], 1)
    notes = {}
    rep = holder.get("rep")
    if rep is not None:
        notes = {
            "sup_ratio": rep.sup_ratio,
            "regime": rep.regime,
            "gamma": rep.gamma,
            "delta": rep.delta,
            "exceptional": rep.exceptional,
            "sector": list(rep.sector) if rep.sector else None,
            "max_bs_distance": rep.max_bs_distance,
            "exclusion_counts": rep.exclusion_counts(),
            "excluded": [[x.member, x.energy.real, x.energy.imag, x.reason, x.detail] for x in rep.excluded],
        }
        if rep.gamma > 0.5:
            notes["im_trend"] = rep.im_trend()
    cols = ["member", "kappa", "E_re", "E_im", "ratio", "localisation", "bs_distance"]
    return cols, rows, notes


def _smoothing(cfg, g, V, threads):
    from . import dispersive as D
    from .spectral import FreeDirichletCalculus, hamiltonian_spectrum

    sc = cfg.scan
    sd = hamiltonian_spectrum(g, V)
    free = FreeDirichletCalculus(g)
    data = D.packet_family(g, sc["count"], cfg.seed)
    tasks = []
    for j, v in enumerate(data):
        key = {"datum": j}

        def thunk(v=v, key=key):
            val = D.kato_smoothing_norm(free, sd, v, sc["rho"], sc["T"], sc["steps"])
            return [dict(key, ratio=val / v.l2_norm())]

        tasks.append((key, thunk))
    rows = _run_rows(tasks, threads)
    notes = {}
    if sc["kato"]:
        lam_grid = np.linspace(0.0, float(sd.eigenvalues.max()), sc["lam_points"])
        kc = D.kato_smoothing_check(free, sd, sc["rho"], data, sc["T"], sc["steps"], lam_grid=lam_grid)
        notes = {"kato_a": kc.a, "argmax": list(kc.argmax), "measured": kc.measured, "bound": kc.bound}
    return ["datum", "ratio"], rows, notes


DISPATCH = {
    "resolvent-scan": _resolvent_scan,
    "exceptional-scan": _exceptional_scan,
    "spectral-density": _spectral_density,
    "multiplier": _multiplier,
    "strichartz": _strichartz,
    "keller": _keller,
    "smoothing": _smoothing,
}


def run(cfg: RunConfig, out_dir: Optional[Path] = None, threads: int = 1) -> RunReport:
    """Run the configured experiment and write results.csv and report.json."""
    out_dir = Path(out_dir if out_dir is not None else cfg.out)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        g = _grid(cfg)
        V = _potential(cfg, g)
        t1 = time.perf_counter()
        columns, rows, notes = DISPATCH[cfg.command](cfg, g, V, threads)
    t2 = time.perf_counter()
    notes = dict(notes)
    msgs = sorted({str(w.message) for w in caught})
    if msgs:
        notes["warnings"] = msgs
    full_columns = columns + ["status", "error"]
    failures = sum(1 for r in rows if r.get("status") == "failed")
    report = RunReport(cfg, full_columns, rows, notes, {"setup_s": t1 - t0, "experiment_s": t2 - t1}, failures)
    out_dir.mkdir(parents=True, exist_ok=True)
    # single writer per directory: both files are written here, in order
    (out_dir / "results.csv").write_text(report.to_csv(), encoding="utf-8", newline="")
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


def _threads(arg: Optional[int]) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("RESOLVENT_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="resolvent-lab", description="Spectral and dispersive experiments for -Delta + V on grids.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to the key = value config")
    parser.add_argument("--out", default=None, help="output directory (overrides [run] out)")
    parser.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    parser.add_argument("--threads", type=int, default=None, help="parallel experiment rows (env RESOLVENT_LAB_THREADS)")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        for issue in exc.errors:
            print(f"{args.config}: {issue}", file=sys.stderr)
        return 1
    if cfg.command != args.command:
        print(f"{args.config}: config command {cfg.command!r} does not match {args.command!r}", file=sys.stderr)
        return 1
    if args.seed is not None:
        if args.seed < 0:
            print("error: seed must be non-negative", file=sys.stderr)
            return 1
        cfg.seed = args.seed
    report = run(cfg, args.out, _threads(args.threads))
    print(f"{cfg.command}: {len(report.rows)} rows, {report.failures} failed")
    return 2 if report.failures else 0


if __name__ == "__main__":
    sys.exit(main())
