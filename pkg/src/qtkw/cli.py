"""Command-line front end: ``qt <command> [options]``.

Every command prints a JSON report
``{"command", "config", "checks": [{"name", "value", "tol", "pass"}], "pass", "seconds"}``
(certify adds a ``"certificate"`` block).  Exit status: 0 when all checks
pass, 1 when a check fails, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from . import expr as ex
from .conformal import (
    BASIS_NAMES,
    AlgebraElement,
    ConformalMap,
    MobiusMap,
    conformal_factor,
    divergence,
    flow,
    phi,
    rotation_from_planes,
)
from .functionals import (
    FOUR_PI2,
    PrescribedData,
    cocycle_terms,
    curvature_integrals,
    manufacture,
    neumann_defect,
    scale_of,
    weak_residual_terms,
)
from .kwcert import (
    Certificate,
    CertifyOptions,
    certify,
    kw_report,
    observed_order,
    orbit_derivative_check,
)
from .quadrature import Rules
from .simplex import LPError
from .sphere import (
    ScalarField,
    laplace,
    laplace_homogeneous,
    normal_derivative,
    normal_derivative_homogeneous,
    paneitz3,
    paneitz4,
    tangent_frame,
)

COMMANDS = ("verify", "certify", "gbc", "mobius-check", "paneitz-check", "orbit-check")
DEFAULT_NODES = {"certify": 8}
NODE_RANGE = (8, 256)

# Neumann-compatible test functions for the weak formulation
WEAK_TESTS = ("1", "x1", "x1*x2", "x5^2", "x3*x5^2", "x4^2 - x1^2 + x5^4")
# building blocks of the pseudo-random cocycle directions
COCYCLE_BASIS = ("1", "x1", "x2", "x3", "x4", "x5^2", "x1*x2", "x3*x5^2")
HARMONICS = (("x1", 1), ("x2 - x5", 1), ("x1*x2", 2), ("x3^2 - x5^2", 2),
             ("x1*x2*x3", 3), ("x1^3 - 3*x1*x2^2", 3))


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    command: str
    u: str | None = None
    q: str | None = None
    t: str | None = None
    a: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    rot: tuple[tuple[int, int, float], ...] = ()
    nodes: int | None = None
    h: float = 1e-3
    field: str = "X1"
    out: str | None = None
    threads: int = dc_field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self):
        if self.nodes is None:
            self.nodes = DEFAULT_NODES.get(self.command, 16)

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if math.fsum(x * x for x in self.a) >= 1.0:
            raise ConfigError(f"--a: need |a| < 1, got |a| = {math.sqrt(sum(x * x for x in self.a)):.6g}")
        lo, hi = NODE_RANGE
        if not lo <= self.nodes <= hi:
            raise ConfigError(f"--nodes: must lie in [{lo}, {hi}], got {self.nodes}")
        if not 1e-4 <= abs(self.h) <= 1e-2:
            raise ConfigError(f"--h: orbit step must satisfy 1e-4 <= |h| <= 1e-2, got {self.h}")
        if self.threads < 1:
            raise ConfigError("--threads: must be positive")
        for i, j, _ in self.rot:
            if not (1 <= i <= 4 and 1 <= j <= 4 and i != j):
                raise ConfigError(f"--rot: plane ({i},{j}) must use two distinct axes among 1..4")
        for name in ("u", "q", "t"):
            src = getattr(self, name)
            if src is not None:
                _parse_field(name, src)
        if self.t is not None and 5 in ex.variables(ex.parse(self.t)):
            raise ConfigError("--t: boundary curvature may reference x1..x4 only")
        _algebra_element(self.field)
        if self.command in ("verify", "gbc") and self.u is None:
            raise ConfigError(f"{self.command} needs --u")
        if self.command == "certify" and self.q is None:
            raise ConfigError("certify needs --q")

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("out")
        d.pop("threads")  # results do not depend on it
        d["a"] = list(self.a)
        d["rot"] = [list(r) for r in self.rot]
        return d


def _parse_field(name: str, src: str) -> ex.Expr:
    try:
        return ex.parse(src)
    except ex.SourceError as err:
        pointer = " " * (len(f"--{name}: ") + err.position) + "^"
        raise ConfigError(f"--{name}: {err.message} at offset {err.position}\n"
                          f"--{name}: {src}\n{pointer}") from err


def _algebra_element(spec: str) -> AlgebraElement:
    if spec in BASIS_NAMES:
        return AlgebraElement.basis(BASIS_NAMES.index(spec))
    try:
        vals = [float(v) for v in spec.split(",")]
    except ValueError:
        vals = []
    if len(vals) != 10:
        raise ConfigError(f"--field: expected a basis name ({', '.join(BASIS_NAMES)}) "
                          f"or 10 comma-separated coefficients, got {spec!r}")
    return AlgebraElement(vals)


def _parse_a(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--a: not a list of numbers: {text!r}") from None
    if len(vals) != 4:
        raise ConfigError(f"--a: expected 4 comma-separated reals, got {len(vals)}")
    return vals


def _parse_rot(text: str) -> tuple[tuple[int, int, float], ...]:
    """``"i,j,angle;i,j,angle"`` (``;`` or whitespace between triples)."""
    out = []
    for chunk in text.replace(";", " ").split():
        parts = chunk.split(",")
        try:
            if len(parts) != 3:
                raise ValueError
            out.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise ConfigError(f"--rot: expected i,j,angle triples, got {chunk!r}") from None
    return tuple(out)


def read_config_file(path: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            entries[key.replace("-", "_")] = value
    return entries


_CONVERT = {
    "u": str, "q": str, "t": str, "field": str, "out": str,
    "a": _parse_a, "rot": _parse_rot, "nodes": int, "h": float, "threads": int,
}


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if args.config:
        try:
            entries = read_config_file(args.config)
        except OSError as err:
            raise ConfigError(f"--config: {err.strerror}: {args.config}") from None
        for key, text in entries.items():
            if key not in _CONVERT:
                raise ConfigError(f"{args.config}: unknown key {key!r}")
            try:
                values[key] = _CONVERT[key](text)
            except ValueError:
                raise ConfigError(f"{args.config}: bad value for {key}: {text!r}") from None
    for key, conv in _CONVERT.items():
        given = getattr(args, key, None)
        if given is not None:
            values[key] = conv(given) if conv in (_parse_a, _parse_rot) else given
    cfg = RunConfig(command=args.command, **values)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "verify": "check a solution (manufactured data unless --q/--t given)",
        "certify": "search for a nonexistence certificate for (Q, T)",
        "gbc": "Gauss-Bonnet-Chern split for a solution",
        "mobius-check": "properties of the conformal map given by --a/--rot",
        "paneitz-check": "operator spectrum and extension independence",
        "orbit-check": "derivatives along a conformal orbit",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--u", help="solution expression")
        p.add_argument("--q", help="interior curvature Q")
        p.add_argument("--t", help="boundary curvature T (x1..x4)")
        p.add_argument("--a", help="Moebius parameter, 4 comma-separated reals")
        p.add_argument("--rot", help="rotation as i,j,angle triples separated by ';'")
        p.add_argument("--nodes", type=int, help="quadrature size N: (N, N, 2N)")
        p.add_argument("--h", type=float, help="orbit step")
        p.add_argument("--field", help="algebra element: basis name or 10 coefficients")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--threads", type=int, help="worker threads for evaluation")
        p.add_argument("--config", help="key = value file; flags override it")
    return parser


# ---------------------------------------------------------------------------
# checks


@dataclass
class Check:
    name: str
    value: float | None
    tol: float
    passed: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "value": _num(self.value), "tol": self.tol, "pass": bool(self.passed)}


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _below(name: str, value: float, tol: float) -> Check:
    return Check(name, float(value), tol, bool(abs(value) < tol))


def _conformal_map(cfg: RunConfig) -> ConformalMap:
    return ConformalMap(MobiusMap(np.array(cfg.a), rotation_from_planes(cfg.rot)))


def _data(cfg: RunConfig, rules: Rules, u) -> PrescribedData:
    if cfg.q is None and cfg.t is None:
        return manufacture(u, rules)
    return PrescribedData(cfg.q or "3", cfg.t or "0")


def _cocycle_directions() -> list[str]:
    rng = np.random.default_rng(0)
    out = []
    for _ in range(3):
        coeffs = rng.uniform(-0.2, 0.2, len(COCYCLE_BASIS))
        out.append(" + ".join(f"({c:.6f})*{b}" for c, b in zip(coeffs, COCYCLE_BASIS)))
    return out


def cmd_verify(cfg: RunConfig, rules: Rules) -> tuple[list[Check], dict]:
    u = ScalarField(ex.parse(cfg.u))
    checks = [_below("neumann_defect", neumann_defect(u, rules), 1e-9)]
    if not checks[0].passed:
        return checks, {}
    data = _data(cfg, rules, u)
    nq, bt = curvature_integrals(u, data, rules)
    checks.append(_below("gbc_defect", nq + bt - FOUR_PI2, 1e-7 * FOUR_PI2))
    for v in WEAK_TESTS:
        terms = weak_residual_terms(u, data, v, rules)
        checks.append(_below(f"weak_residual[{v}]", sum(terms) / scale_of(terms), 1e-6))
    for k, v in enumerate(_cocycle_directions()):
        terms = cocycle_terms(u, data, v, rules)
        checks.append(_below(f"cocycle_defect[v{k}]", sum(terms) / scale_of(terms), 1e-6))
    for entry in kw_report(u, data, rules).entries:
        checks.append(_below(f"kw_residual[{entry.name}]", entry.normalized, 1e-7))
    return checks, {}


def cmd_gbc(cfg: RunConfig, rules: Rules) -> tuple[list[Check], dict]:
    u = ScalarField(ex.parse(cfg.u))
    checks = [_below("neumann_defect", neumann_defect(u, rules), 1e-9)]
    if not checks[0].passed:
        return checks, {}
    nq, bt = curvature_integrals(u, _data(cfg, rules, u), rules)
    pi2 = np.pi ** 2
    checks.append(Check("N_Q/pi^2", nq / pi2, 0.0, True))
    checks.append(Check("B_T/pi^2", bt / pi2, 0.0, True))
    checks.append(_below("gbc_defect", nq + bt - FOUR_PI2, 1e-7 * FOUR_PI2))
    return checks, {}


def _sample_points(seed: int, n: int, boundary: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(n, 5))
    if boundary:
        p[:, 4] = 0.0
    else:
        p[:, 4] = np.abs(p[:, 4]) + 0.05
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def cmd_mobius(cfg: RunConfig, rules: Rules) -> tuple[list[Check], dict]:
    psi = _conformal_map(cfg)
    a = np.array(cfg.a)
    checks = []
    for sign, label in ((1.0, "+e1"), (-1.0, "-e1")):
        e = np.array([sign, 0.0, 0.0, 0.0])
        denom = 1.0 + 2.0 * sign * a[0] + a @ a
        closed = ((1.0 - a @ a) * e + (2.0 + 2.0 * sign * a[0]) * a) / denom
        checks.append(_below(f"phi_a({label})", np.max(np.abs(phi(a, e) - closed)), 1e-14))
    inner = _sample_points(1, 200)
    edge = _sample_points(2, 100, boundary=True)
    pts = np.vstack([inner, edge])
    checks.append(_below("roundtrip", np.max(np.abs(psi.inverse(psi.forward(pts)) - pts)), 1e-11))
    checks.append(_below("boundary_preserved", np.max(np.abs(psi.forward(edge)[:, 4])), 1e-12))
    img = psi.forward(inner)
    checks.append(Check("hemisphere_preserved", float(img[:, 4].min()), 0.0, bool(img[:, 4].min() > 0.0)))
    jac = psi.jacobian(pts)
    frame = tangent_frame(pts)
    cols = np.einsum("nij,nkj->nki", jac, frame)
    gram = np.einsum("nki,nli->nkl", cols, cols)
    e2p = np.exp(2.0 * conformal_factor(psi, pts))
    conf = np.max(np.abs(gram - e2p[:, None, None] * np.eye(4)) / e2p[:, None, None])
    checks.append(_below("conformality", conf, 1e-10))
    factor = ScalarField(psi.factor_expr)
    p100 = _sample_points(3, 100)
    lhs = ex.evaluate(paneitz4(factor).expr, p100) + 6.0 - 6.0 * np.exp(4.0 * ex.evaluate(factor.expr, p100))
    checks.append(_below("liouville_residual", np.max(np.abs(lhs)), 1e-6))
    checks.append(_below("factor_neumann", np.max(np.abs(normal_derivative(factor, edge))), 1e-6))
    return checks, {}


def cmd_paneitz(cfg: RunConfig, rules: Rules) -> tuple[list[Check], dict]:
    pts = _sample_points(4, 50)
    checks = []
    for src, k in HARMONICS:
        f = ScalarField(ex.parse(src))
        fv = ex.evaluate(f.expr, pts)
        lap = ex.evaluate(laplace(f).expr, pts)
        p4 = ex.evaluate(paneitz4(f).expr, pts)
        checks.append(_below(f"laplace[{src}]", np.max(np.abs(lap + k * (k + 3) * fv)), 1e-9))
        checks.append(_below(f"paneitz4[{src}]",
                             np.max(np.abs(p4 - k * (k + 1) * (k + 2) * (k + 3) * fv)), 1e-9))
    if cfg.u is not None:
        f = ScalarField(ex.parse(cfg.u))
        a = ex.evaluate(laplace(f).expr, pts)
        b = ex.evaluate(laplace_homogeneous(f).expr, pts)
        checks.append(_below("extension_independence", np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a))), 1e-9))
        edge = _sample_points(5, 50, boundary=True)
        nd = np.max(np.abs(normal_derivative(f, edge) - normal_derivative_homogeneous(f, edge)))
        checks.append(_below("normal_derivative_routes", nd, 1e-9))
        neu = float(np.max(np.abs(normal_derivative(f, edge))))
        checks.append(_below("neumann_defect", neu, 1e-9))
        if neu < 1e-9:
            p3 = paneitz3(f, edge)
            alt = -0.5 * normal_derivative_homogeneous(laplace_homogeneous(f), edge)
            checks.append(_below("paneitz3_routes", np.max(np.abs(p3 - alt)), 1e-8))
    return checks, {}


def cmd_orbit(cfg: RunConfig, rules: Rules) -> tuple[list[Check], dict]:
    c = _algebra_element(cfg.field)
    u = ScalarField(ex.parse(cfg.u or "0"))
    pts = rules.hemi.points[:: max(1, len(rules.hemi) // 4096)]
    h = cfg.h
    rate = (flow(c, pts, h).factor - flow(c, pts, -h).factor) / (2 * h)
    checks = [_below("factor_rate_vs_div", np.max(np.abs(rate - 0.25 * divergence(c, pts))), 1e-5)]
    if neumann_defect(u, rules) > 1e-9:
        checks.append(_below("neumann_defect", neumann_defect(u, rules), 1e-9))
        return checks, {}
    data = _data(cfg, rules, u)
    steps = (h, h / 2, h / 4)
    runs = [orbit_derivative_check(u, data, c, s, rules) for s in steps]
    scale = runs[0].scale
    floor = 1e-10 * scale
    for k, label in ((0, "d1"), (1, "d2")):
        for i in range(2):
            order = observed_order(tuple(runs[i])[k], tuple(runs[i + 1])[k], floor)
            ok = order is None or order >= 1.9
            checks.append(Check(f"{label}_order[h/{2 ** i}]", order, 1.9, ok))
    checks.append(_below("d3", runs[0].d3, 1e-4 * scale))
    extra = {"defects": [[s, r.d1, r.d2, r.d3] for s, r in zip(steps, runs)]}
    return checks, extra


def cmd_certify(cfg: RunConfig, rules: Rules) -> tuple[list[Check], dict]:
    psi = _conformal_map(cfg)
    if psi.is_identity:
        psi = None
    data = PrescribedData(cfg.q, cfg.t or "0")
    opts = CertifyOptions(psi=psi)
    try:
        res = certify(data, rules, opts)
    except LPError as err:
        return [Check("lp_solved", None, 0.0, False)], {"certificate": {"decision": "lp_failure",
                                                                         "reason": str(err)}}
    block: dict = {"objective": res.objective}
    if isinstance(res, Certificate):
        m = res.margins
        block.update(decision="certificate",
                     basis=[("Psi*" if psi else "") + n for n in BASIS_NAMES],
                     direction=[float(v) for v in res.direction],
                     interior_min=m.interior_min, boundary_min=m.boundary_min,
                     maximum=m.maximum, scale=m.scale, samples=list(m.samples),
                     polished_min=list(res.polished_min), rounds=res.rounds)
    else:
        block.update(decision="none_found", reason=res.reason,
                     note="absence of a certificate is inconclusive")
        if res.c is not None:
            block["best_candidate"] = [float(v) for v in res.c.c]
    return [Check("lp_solved", 1.0, 0.0, True)], {"certificate": block}


HANDLERS = {
    "verify": cmd_verify,
    "certify": cmd_certify,
    "gbc": cmd_gbc,
    "mobius-check": cmd_mobius,
    "paneitz-check": cmd_paneitz,
    "orbit-check": cmd_orbit,
}


def execute(cfg: RunConfig) -> dict:
    ex.set_threads(cfg.threads)
    start = time.perf_counter()
    rules = Rules.with_n(cfg.nodes)
    checks, extra = HANDLERS[cfg.command](cfg, rules)
    report = {"command": cfg.command, "config": cfg.echo(),
              "checks": [c.as_dict() for c in checks]}
    report.update(extra)
    report["pass"] = all(c.passed for c in checks)
    report["seconds"] = round(time.perf_counter() - start, 3)
    return report


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = build_config(args)
    except ConfigError as err:
        print(f"qt {args.command}: error: {err}", file=sys.stderr)
        return 2
    report = execute(cfg)
    text = json.dumps(report, indent=2) + "\n"
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if report["pass"] else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
