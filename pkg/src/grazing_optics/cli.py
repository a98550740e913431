"""Command-line front end: ``grazing-optics <stage> --scenario FILE``.

Stages and their prerequisites::

    classify -> trace, flowmap, zeta
    flowmap -> jacobian -> profiles -> synthesize -> verify -> report

Each stage writes ``<out>/<stage>/`` holding its outputs and a
``manifest.json``.  The manifest hash covers the stage name, tool version,
scenario digest, parameters, seed and the manifest hashes of the stages it
read; every CSV starts with ``# manifest_sha256=<hash>``.  Thread count is not
part of the hash, so reruns with any ``--threads`` give byte-identical files.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import Scenario, load_scenario
from .errors import ConfigError, GrazingError, ManifestMismatch, MissingDependency, WrongDimension

STAGES = ("classify", "trace", "flowmap", "jacobian", "zeta", "profiles", "synthesize", "verify", "report")
REQUIRES = {
    "classify": (),
    "trace": ("classify",),
    "flowmap": ("classify",),
    "zeta": ("classify",),
    "jacobian": ("flowmap",),
    "profiles": ("jacobian",),
    "synthesize": ("profiles",),
    "verify": ("synthesize",),
    "report": ("verify",),
}


class UsageError(Exception):
    pass


# -- files ------------------------------------------------------------------------

def atomic_write(path: Path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _num(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_bytes(manifest_hash: str, header: list[str], rows) -> bytes:
    buf = io.StringIO()
    buf.write(f"# manifest_sha256={manifest_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    return buf.getvalue().encode()


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n").encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def read_csv(path: Path) -> tuple[str, list[str], list[list[str]]]:
    """(manifest hash, header, rows) of a CSV written by :func:`csv_bytes`."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("# manifest_sha256="):
            raise ManifestMismatch(f"{path}: missing manifest header")
        rows = list(csv.reader(fh))
    return first.split("=", 1)[1], rows[0], rows[1:]


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- manifests ----------------------------------------------------------------------

class Stage:
    """Collects outputs of one stage and writes them with a manifest."""

    def __init__(self, name: str, ctx: "Context", inputs: dict[str, str], parameters: dict):
        self.name = name
        self.dir = ctx.out / name
        self.core = {
            "stage": name,
            "tool_version": __version__,
            "scenario_sha256": ctx.scenario.digest(),
            "seed": ctx.seed,
            "parameters": _jsonable(parameters),
            "inputs": dict(sorted(inputs.items())),
        }
        self.hash = hashlib.sha256(json.dumps(self.core, sort_keys=True).encode()).hexdigest()
        self.files: dict[str, bytes] = {}

    def csv(self, name: str, header: list[str], rows) -> None:
        self.files[name] = csv_bytes(self.hash, header, rows)

    def json(self, name: str, obj) -> None:
        self.files[name] = json_bytes(obj)

    def text(self, name: str, text: str) -> None:
        self.files[name] = text.encode()

    def commit(self, checks: dict[str, bool], summary: dict | None = None) -> dict:
        for name, data in sorted(self.files.items()):
            atomic_write(self.dir / name, data)
        manifest = dict(self.core)
        manifest["manifest_sha256"] = self.hash
        manifest["outputs"] = {n: hashlib.sha256(d).hexdigest() for n, d in sorted(self.files.items())}
        manifest["checks"] = {k: bool(v) for k, v in checks.items()}
        manifest["passed"] = all(checks.values())
        manifest["summary"] = _jsonable(summary or {})
        atomic_write(self.dir / "manifest.json", json_bytes(manifest))
        return manifest


def load_manifest(out: Path, stage: str, scenario: Scenario) -> dict:
    """Manifest of a finished stage, checked against the scenario and its files."""
    path = out / stage / "manifest.json"
    if not path.exists():
        raise MissingDependency(stage, str(path))
    man = json.loads(path.read_text(encoding="utf-8"))
    if man.get("scenario_sha256") != scenario.digest():
        raise ManifestMismatch(f"stage '{stage}' was produced from a different scenario")
    for name, digest in man.get("outputs", {}).items():
        f = out / stage / name
        if not f.exists():
            raise MissingDependency(stage, str(f))
        if sha256_file(f) != digest:
            raise ManifestMismatch(f"{f}: contents do not match the manifest")
        if name.endswith(".csv") and read_csv(f)[0] != man["manifest_sha256"]:
            raise ManifestMismatch(f"{f}: manifest hash header does not match")
    return man


# -- context -------------------------------------------------------------------------

class Context:
    def __init__(self, args: argparse.Namespace):
        self.scenario = load_scenario(args.scenario)
        sc = self.scenario
        self.out = Path(args.out if args.out else sc["scenario"]["output"])
        self.seed = sc.seed if args.seed is None else int(args.seed)
        self.threads = max(1, int(args.threads))
        self.eps = sc.eps if args.eps is None else args.eps
        self.mu = tuple(sc["asymptotics"]["mu"]) if args.mu is None else args.mu
        self.ob = sc.obstacle()
        self.theta = sc.theta

    def require(self, stage: str) -> dict[str, str]:
        return {dep: load_manifest(self.out, dep, self.scenario)["manifest_sha256"] for dep in REQUIRES[stage]}

    def pmap(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(fn, items))

    def scenario2d(self, mu: float | None = None):
        """Two-dimensional profile scenario built from the config sections."""
        from .profiles import DataSpec, MeanData, Scenario2D
        from .transport import SourceSpec
        if self.ob.dim != 2:
            raise WrongDimension("profiles, synthesize and verify need a two-dimensional obstacle")
        if self.theta[0] != 1.0:
            raise WrongDimension("profiles, synthesize and verify need theta = +1")
        v = self.scenario.values
        d = v["data"]
        g = v["grids"]
        return Scenario2D(
            self.ob, T=v["asymptotics"]["T"],
            data=DataSpec(center=tuple(d["center"]), width=tuple(d["width"]), amplitude=d["amplitude"]),
            mean_data=MeanData(center=tuple(d["mean_center"]), width=d["mean_width"],
                               amplitude=d["mean_amplitude"]),
            mu=self.mu[0] if mu is None else mu, n_modes=v["asymptotics"]["N"],
            source=SourceSpec(v["source"]["kind"], v["source"]["kappa"]),
            n_incoming=tuple(int(x) for x in g["n_incoming"]),
            n_reflected=tuple(int(x) for x in g["n_reflected"]), fd_h=g["fd_h"])


# -- svg --------------------------------------------------------------------------------

def grazing_svg(ob, theta, patch: float, grazing_points, chart, size: int = 400) -> str:
    """Illuminated/shadow partition of the boundary with the grazing set marked."""
    pad = 20
    m = ob.m
    lit_c, shd_c, grz_c = "#f2a541", "#7f7f7f", "#c0392b"
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             "<title>grazing set and illuminated/shadow partition</title>",
             f'<rect width="{size}" height="{size}" fill="white"/>']
    span = size - 2 * pad

    if m == 1:
        x2 = np.linspace(-patch, patch, 201)
        f = ob.F(x2[:, None])
        lo, hi = float(np.min(f)), float(np.max(f))
        hi = hi if hi > lo else lo + 1.0

        def pt(a, b):
            return (pad + (a + patch) / (2 * patch) * span, pad + (hi - b) / (hi - lo) * span)
        lit = ob.grad(x2[:, None]) @ theta >= 0
        for k in range(len(x2) - 1):
            (x0, y0), (x1, y1) = pt(x2[k], f[k]), pt(x2[k + 1], f[k + 1])
            col = lit_c if lit[k] and lit[k + 1] else shd_c
            parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                         f'stroke="{col}" stroke-width="3"/>')
        for g in grazing_points:
            cx, cy = pt(float(g[0]), float(ob.F(np.array([g[0]]))))
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="5" fill="{grz_c}"/>')
    else:
        n = 40
        cell = span / n
        axis = np.linspace(-patch, patch, n)
        for i, a in enumerate(axis):
            for j, b in enumerate(axis):
                if a * a + b * b > patch * patch:
                    continue
                x = np.zeros(m)
                x[0], x[1] = a, b
                col = lit_c if float(ob.grad(x) @ theta) >= 0 else shd_c
                parts.append(f'<rect x="{pad + i * cell:.2f}" y="{pad + (n - 1 - j) * cell:.2f}" '
                             f'width="{cell:.2f}" height="{cell:.2f}" fill="{col}"/>')
        for g in grazing_points:
            cx = pad + (g[0] + patch) / (2 * patch) * span
            cy = pad + (patch - g[1]) / (2 * patch) * span
            parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="3" fill="{grz_c}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- stages --------------------------------------------------------------------------------

def _grazing_points(ob, theta, patch: float, chart, count: int = 9) -> np.ndarray:
    """Sample points on the grazing set {<grad F, theta> = 0} inside B(0, patch)."""
    from scipy.optimize import brentq
    m = ob.m
    if m == 1:
        x = np.linspace(-patch, patch, 801)
        g = ob.grad(x[:, None]) @ theta
        pts = [x[k] for k in range(len(x)) if g[k] == 0.0]
        for k in range(len(x) - 1):
            if g[k] * g[k + 1] < 0:
                pts.append(brentq(lambda y: float(ob.grad(np.array([y])) @ theta), x[k], x[k + 1], xtol=1e-15))
        return np.unique(np.round(np.array(pts, float), 14))[:, None]
    if chart is None or chart.line_normal is None:
        return np.zeros((0, m))
    nrm = np.asarray(chart.line_normal, float)
    nrm = nrm / np.linalg.norm(nrm)
    rng = np.random.default_rng(0)
    v = rng.normal(size=(count, m))
    v -= (v @ nrm)[:, None] * nrm
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * np.linspace(-0.9 * patch, 0.9 * patch, count)[:, None]


def cmd_classify(ctx: Context, args) -> int:
    from .hamiltonian import glancing_order
    from .obstacle import build_grazing_chart
    sc = ctx.scenario
    patch = sc["chart"]["patch"] * ctx.ob.r
    cap = 12
    st = Stage("classify", ctx, ctx.require("classify"), {"patch": patch, "cap": cap})
    m = ctx.ob.m
    try:
        chart = build_grazing_chart(ctx.ob, ctx.theta)
    except GrazingError:
        chart = None
    grazing = _grazing_points(ctx.ob, ctx.theta, patch, chart)
    k = 21 if m == 1 else 9
    axis = np.linspace(-patch, patch, k)
    if m == 1:
        grid = axis[:, None]
    else:
        mesh = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        grid = np.zeros((len(mesh), m))
        grid[:, :2] = mesh
        grid = grid[np.linalg.norm(grid, axis=1) <= patch]
    pts = [(p, True) for p in grazing] + [(p, False) for p in grid]

    def run(item):
        p, on = item
        rep = glancing_order(ctx.ob, ctx.theta, p, cap=cap).to_dict()
        rep["x0"] = p.tolist()
        rep["grazing_function"] = float(ctx.ob.grad(p) @ ctx.theta)
        rep["on_grazing_set"] = on
        return rep
    reports = ctx.pmap(run, pts)
    st.text("classify.jsonl", "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in reports))
    st.text("grazing.svg", grazing_svg(ctx.ob, ctx.theta, patch, grazing, chart))
    summary = {"grazing_points": grazing, "dim": ctx.ob.dim, "family": ctx.ob.family}
    if chart is not None:
        summary.update({"chart_kind": chart.kind, "regularity": chart.regularity, "slope": chart.slope,
                        "line_normal": chart.line_normal, "hp_zeta": chart.hp_zeta()})
    orders = sorted({r["order"] for r in reports if r["on_grazing_set"]})
    summary["grazing_orders"] = orders
    st.json("summary.json", summary)
    st.commit({"grazing_set_found": len(grazing) > 0}, summary)
    return 0


def cmd_trace(ctx: Context, args) -> int:
    from .hamiltonian import integrate_batch
    from .phase import ReflectedFlow, illuminated_patch, reflected_covector
    sc = ctx.scenario
    patch = sc["chart"]["patch"] * ctx.ob.r
    s0 = sc["chart"]["s0"]
    n_rays, n_s = 16, 11
    st = Stage("trace", ctx, ctx.require("trace"), {"patch": patch, "s0": s0, "rays": n_rays, "steps": n_s})
    flow = ReflectedFlow(ctx.ob, ctx.theta)
    feet = illuminated_patch(ctx.ob, ctx.theta, patch, 4 * n_rays, seed=ctx.seed, grid=False)[:n_rays]
    xi1, xib = reflected_covector(ctx.ob, flow.theta, feet)
    P = len(feet)
    start = np.concatenate([ctx.ob.F(feet)[:, None], feet, np.zeros((P, 1)), xi1[:, None], xib,
                            -np.ones((P, 1))], axis=1)
    n = ctx.ob.dim
    rows, err = [], 0.0
    for s in np.linspace(0.0, s0, n_s):
        num = integrate_batch(start, s) if s > 0 else start
        exact = flow.forward(np.full(P, s), feet, 0.0)
        got = np.concatenate([num[:, :n], num[:, n:n + 1]], axis=1)
        err = max(err, float(np.max(np.abs(got - exact))))
        for r in range(P):
            rows.append([r, s] + list(got[r]) + [float(np.max(np.abs(got[r] - exact[r])))])
    header = ["ray", "s"] + [f"x{k + 1}" for k in range(n)] + ["t", "closed_form_gap"]
    st.csv("rays.csv", header, rows)
    ok = err <= sc["tolerances"]["flow"]
    st.commit({"rays_match_closed_form": ok}, {"max_gap": err, "rays": P})
    return 0 if ok else 1


def cmd_flowmap(ctx: Context, args) -> int:
    from .phase import build_flow_chart, flow_map_oracle
    sc = ctx.scenario
    c = sc["chart"]
    patch = c["patch"] * ctx.ob.r
    st = Stage("flowmap", ctx, ctx.require("flowmap"),
               {"patch": patch, "s0": c["s0"], "n_s": c["n_s"], "n_params": c["n_params"], "samples": c["samples"]})
    chart = build_flow_chart(ctx.ob, ctx.theta, s0=c["s0"], patch=patch, n_s=c["n_s"], n_params=c["n_params"])
    m = ctx.ob.m
    rows = []
    for k, s in enumerate(chart.s):
        for p in range(len(chart.params)):
            rows.append([s] + list(chart.params[p]) + list(chart.images[k, p]) + [chart.j[k, p]])
    header = ["s"] + [f"xb{i + 2}" for i in range(m)] + [f"x{i + 1}" for i in range(m + 1)] + ["j"]
    st.csv("flowmap.csv", header, rows)
    rep = flow_map_oracle(ctx.ob, ctx.theta, count=c["samples"], s_max=c["s0"], patch=patch, seed=ctx.seed)
    ok = rep.max_error <= sc["tolerances"]["flow"]
    # conditioning of the inverse chart, logged without a rate claim
    S, P = np.meshgrid(chart.s[1:], np.arange(len(chart.params)), indexing="ij")
    cond = np.linalg.cond(chart.flow.spatial_jacobian(S.ravel(), chart.params[P.ravel()]))
    cond = cond[np.isfinite(cond)]
    info = rep.to_dict()
    info["inverse_condition"] = {"max": float(cond.max()), "median": float(np.median(cond))} if len(cond) else None
    st.commit({"flow_oracle": ok}, info)
    return 0 if ok else 1


def cmd_jacobian(ctx: Context, args) -> int:
    from .phase import ReflectedFlow, illuminated_patch, matrix_lemma_checks
    sc = ctx.scenario
    c = sc["chart"]
    tol = sc["tolerances"]
    patch = c["patch"] * ctx.ob.r
    count = min(int(c["samples"]), 2000)
    st = Stage("jacobian", ctx, ctx.require("jacobian"), {"patch": patch, "s0": c["s0"], "count": count})
    flow = ReflectedFlow(ctx.ob, ctx.theta)
    rng = np.random.default_rng(ctx.seed)
    xb = illuminated_patch(ctx.ob, ctx.theta, patch, 3 * count, seed=ctx.seed, grid=False)[:count]
    a = ctx.ob.grad(xb) @ flow.theta
    xb, a = xb[a > 0.05], a[a > 0.05]   # away from grazing
    s = rng.uniform(0.0, c["s0"], len(xb))
    ja = flow.jacobian_analytic(s, xb)
    jf = flow.jacobian_fd(s, xb)
    rel = np.abs(ja - jf) / np.maximum(np.abs(ja), 1e-300)
    bound = ja - 2.0 * a
    rows = [[s[k]] + list(xb[k]) + [ja[k], jf[k], rel[k], bound[k]] for k in range(len(xb))]
    header = ["s"] + [f"xb{i + 2}" for i in range(ctx.ob.m)] + ["j_analytic", "j_fd", "rel_error", "j_minus_bound"]
    st.csv("jacobian.csv", header, rows)
    checks = {"analytic_vs_fd": float(np.max(rel)) <= tol["jacobian"],
              "lower_bound": bool(np.all(bound >= -1e-12 * np.maximum(1.0, np.abs(ja))))}
    summary = {"samples": len(xb), "max_rel_error": float(np.max(rel)), "min_bound_gap": float(np.min(bound))}
    if ctx.ob.m >= 2:
        worst = 0.0
        for p in xb[:200]:
            r = matrix_lemma_checks(ctx.ob.grad(p), flow.theta)
            scale = max(1.0, r.matrix_scale)
            worst = max(worst, abs(r.det_b - r.det_b_expected) / scale, r.cbt_error / scale)
        checks["matrix_lemmas"] = worst <= tol["matrix"]
        summary["matrix_lemma_error"] = worst
    st.commit(checks, summary)
    return 0 if all(checks.values()) else 1


def cmd_zeta(ctx: Context, args) -> int:
    from .obstacle import build_grazing_chart
    sc = ctx.scenario
    patch = sc["chart"]["patch"] * ctx.ob.r
    st = Stage("zeta", ctx, ctx.require("zeta"), {"patch": patch})
    chart = build_grazing_chart(ctx.ob, ctx.theta)
    m = ctx.ob.m
    k = 41 if m == 1 else 21
    axis = np.linspace(-patch, patch, k)
    if m == 1:
        pts = axis[:, None]
    else:
        mesh = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        pts = np.zeros((len(mesh), m))
        pts[:, :2] = mesh
    z = chart.zeta(pts)
    g = chart.grazing_function(pts)
    rows = [list(pts[i]) + [z[i], g[i]] for i in range(len(pts))]
    st.csv("zeta.csv", [f"xb{i + 2}" for i in range(m)] + ["zeta", "grazing_function"], rows)
    # zeta and <grad F, theta> share their zero set with one fixed orientation
    nz = (np.abs(g) > 1e-12) & (np.abs(z) > 1e-12)
    prod = np.sign(z[nz] * g[nz])
    agree = bool(len(prod) > 0 and np.all(prod == prod[0]))
    hp = chart.hp_zeta()
    st.commit({"sign_agreement": agree, "transversal": hp != 0.0},
              {"hp_zeta": hp, "kind": chart.kind, "regularity": chart.regularity, "slope": chart.slope})
    return 0 if agree and hp != 0.0 else 1


def cmd_profiles(ctx: Context, args) -> int:
    from .profiles import as_profile_grids, picard_iterate, profile_rows
    sc2 = ctx.scenario2d()
    tol = ctx.scenario["tolerances"]["picard"]
    st = Stage("profiles", ctx, ctx.require("profiles"),
               {"mu": sc2.mu, "N": sc2.n_modes, "T": sc2.T, "source": [sc2.source.kind, sc2.source.kappa]})
    res = picard_iterate(sc2, max_iter=12, tol=tol)
    gi, gr = as_profile_grids(res.solver, res.state)
    head = ["ray", "sample", "mode", "re", "im"]
    st.csv("incoming.csv", head, profile_rows(gi))
    st.csv("reflected.csv", head, profile_rows(gr))
    st.csv("picard.csv", ["iter", "diff", "diff_u", "diff_wi", "diff_wr"],
           [[r["iter"], r["diff"], r["diff_u"], r["diff_wi"], r["diff_wr"]] for r in res.trace])
    coupling = res.boundary_coupling()
    checks = {"converged": res.converged_iterate is not None, "boundary_coupling": coupling <= 1e-8}
    st.commit(checks, {"converged_iterate": res.converged_iterate, "contraction_ratio": res.contraction_ratio(),
                       "boundary_coupling": coupling})
    return 0 if all(checks.values()) else 1


def _residual_rows(ctx: Context, sc2, eps_list, count: int):
    from .profiles import LinearProfiles
    from .synthesis import AsymptoticField, default_region, residual_scan
    lin = LinearProfiles(sc2)
    region = default_region(sc2)
    src = sc2.source if sc2.source.kind != "zero" else None

    def run(e):
        return residual_scan(AsymptoticField(lin, e), sc2, source=src, region=region, count=count, seed=ctx.seed)
    return ctx.pmap(run, eps_list)


def _strictly_decreasing(v) -> bool:
    return all(b < a for a, b in zip(v, v[1:]))


def cmd_synthesize(ctx: Context, args) -> int:
    from .profiles import LinearProfiles
    from .synthesis import AsymptoticField
    sc2 = ctx.scenario2d()
    count = 3000
    st = Stage("synthesize", ctx, ctx.require("synthesize"),
               {"eps": list(ctx.eps), "mu": sc2.mu, "N": sc2.n_modes, "count": count})
    reps = _residual_rows(ctx, sc2, ctx.eps, count)
    head = ["eps", "h", "samples", "illuminated", "overlap", "shadow", "total", "eikonal_max", "dirichlet_defect"]
    st.csv("residual.csv", head, [[r.eps, r.h, r.samples, r.norms["illuminated"], r.norms["overlap"],
                                   r.norms["shadow"], r.norms["total"], r.eikonal_max, r.dirichlet_defect]
                                  for r in reps])
    lin = LinearProfiles(sc2)
    (a1, b1), (a2, b2) = sc2.data.support_box()
    x1 = np.linspace(max(a1, 0.0), b1 + 0.3, 41)
    x2 = np.linspace(a2, b2 + 2 * sc2.T, 41)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    m = np.stack([X1, X2, np.full_like(X1, sc2.T)], axis=-1).reshape(-1, 3)
    ext = m[:, 0] > sc2.obstacle.F(np.clip(m[:, 1:2], -sc2.obstacle.r, sc2.obstacle.r))
    rows = []
    for e in ctx.eps:
        u = AsymptoticField(lin, e).evaluate(m)
        rows += [[e, *m[k], u[k] if ext[k] else 0.0] for k in range(len(m))]
    st.csv("field.csv", ["eps", "x1", "x2", "t", "u_a"], rows)
    totals = [r.norms["total"] for r in reps]
    checks = {"finite": bool(np.all(np.isfinite(totals)))}
    st.commit(checks, {"totals": totals})
    return 0 if all(checks.values()) else 1


def cmd_verify(ctx: Context, args) -> int:
    deps = ctx.require("verify")
    syn_dir = ctx.out / "synthesize"
    _, head, rows = read_csv(syn_dir / "residual.csv")
    col = {h: i for i, h in enumerate(head)}
    eps = [float(r[col["eps"]]) for r in rows]
    totals = [float(r[col["total"]]) for r in rows]
    eik = max(float(r[col["eikonal_max"]]) for r in rows)
    count = 3000
    st = Stage("verify", ctx, deps, {"eps": list(ctx.eps), "mu": list(ctx.mu), "count": count})
    table, per_mu = [], {}
    # order of limits: mu outer, eps inner
    for mu in ctx.mu:
        sc2 = ctx.scenario2d(mu)
        reps = _residual_rows(ctx, sc2, ctx.eps, count)
        for r in reps:
            table.append([mu, r.eps, r.norms["illuminated"], r.norms["overlap"], r.norms["total"], r.eikonal_max])
        per_mu[mu] = _strictly_decreasing([r.norms["total"] for r in reps])
        eik = max(eik, max(r.eikonal_max for r in reps))
    st.csv("mu_eps_table.csv", ["mu", "eps", "illuminated", "overlap", "total", "eikonal_max"], table)
    upstream = {}
    for stage in ("flowmap", "jacobian", "profiles", "synthesize"):
        man = load_manifest(ctx.out, stage, ctx.scenario)
        upstream[stage] = man["passed"]
    checks = {"residual_decreasing": len(eps) > 1 and _strictly_decreasing(totals),
              "eikonal_coefficient": eik <= 1e-12,
              "mu_sweep_decreasing": all(per_mu.values())}
    checks.update({f"stage_{k}": v for k, v in upstream.items()})
    st.commit(checks, {"eps": eps, "totals": totals, "eikonal_max": eik,
                       "mu_decreasing": {str(k): v for k, v in per_mu.items()}})
    return 0 if all(checks.values()) else 1


def cmd_report(ctx: Context, args) -> int:
    deps = ctx.require("report")
    st = Stage("report", ctx, deps, {})
    lines = [f"# Report: {ctx.scenario['scenario']['name']}", "",
             f"scenario sha256: `{ctx.scenario.digest()}`", "", "| stage | passed | checks |", "|---|---|---|"]
    status = {}
    for stage in STAGES[:-1]:
        path = ctx.out / stage / "manifest.json"
        if not path.exists():
            continue
        man = load_manifest(ctx.out, stage, ctx.scenario)
        status[stage] = man["passed"]
        checks = ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in man["checks"].items())
        lines.append(f"| {stage} | {'yes' if man['passed'] else 'no'} | {checks} |")
    st.text("report.md", "\n".join(lines) + "\n")
    st.json("report.json", status)
    ok = all(status.values())
    st.commit({"all_stages_passed": ok}, status)
    return 0 if ok else 1


COMMANDS = {
    "classify": cmd_classify, "trace": cmd_trace, "flowmap": cmd_flowmap, "jacobian": cmd_jacobian,
    "zeta": cmd_zeta, "profiles": cmd_profiles, "synthesize": cmd_synthesize, "verify": cmd_verify,
    "report": cmd_report,
}


# -- argument parsing -----------------------------------------------------------------------

def _float_list(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("values must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grazing-optics",
                                description="Geometric optics near grazing rays: flow maps, profiles, verification.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sp = sub.add_parser(name, help=f"run the {name} stage")
        sp.add_argument("--scenario", required=True, help="scenario file")
        sp.add_argument("--out", default=None, help="output directory (default: [scenario] output)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--eps", type=_float_list, default=None, help="eps schedule, e.g. 0.1,0.05,0.025")
        sp.add_argument("--mu", type=_float_list, default=None, help="truncation values, e.g. 0.2,0.1,0.05")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.eps is not None and not _strictly_decreasing(args.eps):
        print("error: --eps must be strictly decreasing", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        ctx = Context(args)
        code = COMMANDS[args.command](ctx, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, MissingDependency, ManifestMismatch, WrongDimension, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GrazingError as exc:
        print(f"check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: {'ok' if code == 0 else 'FAILED'} ({ctx.out / args.command})")
    return code


if __name__ == "__main__":
    sys.exit(main())
