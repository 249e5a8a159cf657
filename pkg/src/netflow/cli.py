"""Command line entry point: ``netflow <subcommand>``.

Networks are read from JSON files (see ``network.load_network``) or named
fixtures written ``fixture:NAME``.  Vertex ids in ``--topology`` are 1-based,
like the ray labels of the descriptors, so ``v1:12|34`` resolves the first
vertex of the file with the pairing of rays 1,2 against 3,4.
"""

from __future__ import annotations

import csv
import json
import math
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from . import __version__
from .errors import (
    InvalidCurveError,
    InvalidNetworkError,
    NetflowError,
    SolverFailure,
    StartupError,
    UnsupportedSingularityError,
)
from .network import Fan, Network, check_regular, dump_network, extract_fans, load_network

EXIT_OK = 0
EXIT_AUDIT = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_SOLVER = 4
EXIT_SINGULAR = 5
EXIT_OTHER = 6

EXIT_HELP = """\b
Exit codes:
  0  success, all audits passed
  1  an invariant audit failed
  2  usage error
  3  unreadable or invalid input network
  4  solver, startup or step failure
  5  unsupported singularity (edge vanishing with curvature blowup)
  6  other precondition or domain error
"""

FIXTURES = ("cross", "triod", "bowtie", "circle")


@dataclass
class RunConfig:
    """Everything that affects the output of one run."""

    subcommand: str
    network: str | None = None
    topology: dict = field(default_factory=dict)
    t0: float = 0.005
    dt: float = 1e-3
    t_end: float = 0.1
    mesh: int = 64
    radius: float | None = None
    J: int = 0
    cfl: float = 100.0
    snapshots: list = field(default_factory=list)
    seed: int = 0
    out: str = "."
    emit_svg: bool = False
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        doc["topology"] = {int(k): v for k, v in doc.get("topology", {}).items()}
        doc["snapshots"] = [float(x) for x in doc.get("snapshots", [])]
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def validate(self) -> None:
        for name in ("t0", "dt", "t_end", "cfl"):
            if not getattr(self, name) > 0:
                raise click.BadParameter(f"{name} must be positive")
        if self.radius is not None and not self.radius > 0:
            raise click.BadParameter("radius must be positive")
        if self.mesh < 3:
            raise click.BadParameter("mesh needs at least three nodes per curve")


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def fixture(name: str, mesh: int = 64) -> Network:
    from .flow import bowtie, circle, straight_network

    if name == "cross":
        ends = [(math.cos(a), math.sin(a)) for a in np.radians([45, 135, 225, 315])]
        return straight_network((0.0, 0.0), ends, mesh)
    if name == "triod":
        ends = [(math.cos(a), math.sin(a)) for a in np.radians([90, 210, 330])]
        return straight_network((0.0, 0.0), ends, mesh)
    if name == "bowtie":
        return bowtie(M=mesh)
    if name == "circle":
        return circle(1.0, mesh)
    raise click.BadParameter(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")


def read_network(spec: str, mesh: int = 64) -> Network:
    if spec.startswith("fixture:"):
        return fixture(spec.split(":", 1)[1], mesh)
    return load_network(spec)


def parse_topology(items, net: Network | None = None) -> dict:
    """``("v1:12|34", ...)`` to ``{0: descriptor}`` (0-based vertex index)."""
    from .resolution import parse_descriptor

    out = {}
    for item in items:
        if ":" not in item or not item.startswith("v"):
            raise click.BadParameter(f"topology {item!r} must look like v1:12|34")
        head, desc = item.split(":", 1)
        try:
            vi = int(head[1:]) - 1
        except ValueError as exc:
            raise click.BadParameter(f"bad vertex id in {item!r}") from exc
        if net is not None:
            if not 0 <= vi < len(net.vertices):
                raise click.BadParameter(f"vertex {head} does not exist")
            k = net.vertices[vi].valence
        else:
            k = max(int(ch) for ch in desc if ch.isdigit())
        out[vi] = parse_descriptor(desc, k)
    return out


def _floats(text: str | None) -> list[float]:
    if not text:
        return []
    return [float(x) for x in text.split(",") if x.strip()]


def write_trajectory_csv(snapshots, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t", "curve", "node", "x", "y"])
        for t, net in snapshots:
            for ci, c in enumerate(net.curves):
                for ni, (x, y) in enumerate(c.points):
                    out.writerow([repr(float(t)), ci, ni, repr(float(x)), repr(float(y))])


def write_svg(net: Network, box: tuple[float, float, float, float], path: Path) -> None:
    x0, y0, w, h = box
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0!r} {-(y0 + h)!r} {w!r} {h!r}">']
    stroke = 0.003 * max(w, h)
    for c in net.curves:
        pts = np.vstack([c.points, c.points[:1]]) if c.closed else c.points
        coords = " ".join(f"{x:.6f},{-y:.6f}" for x, y in pts)
        lines.append(f'<polyline fill="none" stroke="black" stroke-width="{stroke:.6f}" points="{coords}"/>')
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n")


def view_box(net: Network) -> tuple[float, float, float, float]:
    """Bounding box of ``net`` inflated by 10% of its size on every side."""
    pts = np.vstack([c.points for c in net.curves])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.1 * np.maximum(hi - lo, 1e-9)
    lo, hi = lo - pad, hi + pad
    return float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])


def write_manifest(cfg: RunConfig, audits: dict, path: Path, extra: dict | None = None) -> None:
    doc = {"version": version_string(), "config": cfg.to_dict(), "audits": audits}
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _load_config(ctx, _param, value):
    if value is None:
        return None
    doc = json.loads(Path(value).read_text())
    ctx.default_map = {name: dict(doc) for name in ("check", "solitons", "resolve", "evolve",
                                                    "heatmodel", "expand")}
    return value


@click.group(epilog=EXIT_HELP)
@click.version_option(__version__)
@click.option("--config", type=click.Path(exists=True, dir_okay=False), callback=_load_config,
              is_eager=True, expose_value=False,
              help="JSON file of option defaults; command line flags override it.")
def main():
    """Curvature flow of planar networks with irregular junctions."""


def _run(fn):
    """Map package errors to exit codes."""
    try:
        code = fn()
    except (InvalidNetworkError, InvalidCurveError, OSError, json.JSONDecodeError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(EXIT_INPUT)
    except UnsupportedSingularityError as exc:
        click.echo(f"unsupported singularity: {exc} {exc.diagnostics}", err=True)
        sys.exit(EXIT_SINGULAR)
    except (SolverFailure, StartupError) as exc:
        click.echo(f"solver failure: {exc}", err=True)
        sys.exit(EXIT_SOLVER)
    except NetflowError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_OTHER)
    sys.exit(code)


@main.command(epilog=EXIT_HELP)
@click.argument("network")
@click.option("--tol", default=1e-9, show_default=True, help="Herring tolerance.")
def check(network, tol):
    """Report whether every interior vertex of NETWORK is regular."""

    def go():
        net = read_network(network)
        rep = check_regular(net, tol)
        if rep.regular:
            click.echo("regular")
        else:
            labels = ", ".join(f"v{vi + 1}" for vi in rep.irregular_vertices())
            click.echo(f"irregular: {labels}")
        for v in rep.vertices:
            click.echo(f"  v{v.vertex + 1}: valence {v.valence}, |sum tau| = {v.tangent_sum_norm:.3e}")
        return EXIT_OK

    _run(go)


@main.command(epilog=EXIT_HELP)
@click.option("--angles", default=None, help="Comma separated ray angles in degrees.")
@click.option("--network", "network", default=None, help="Take the fan of a network vertex instead.")
@click.option("--vertex", default=1, show_default=True, help="1-based vertex id for --network.")
@click.option("--disconnected", is_flag=True, help="Include disconnected topologies.")
@click.option("--radius", default=4.0, show_default=True, help="Truncation radius in similarity units.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Write solitons.json here.")
def solitons(angles, network, vertex, disconnected, radius, out):
    """Solve every expanding soliton of a fan and report its quality."""
    from .expander import all_solitons, asymptotic_fit, soliton_residual

    def go():
        if angles:
            fan = Fan.from_angles(np.radians(_floats(angles)))
        elif network:
            net = read_network(network)
            fans = dict(zip(net.interior_vertices(), extract_fans(net)))
            if vertex - 1 not in fans:
                raise click.BadParameter(f"v{vertex} is not an interior vertex")
            fan = fans[vertex - 1]
        else:
            raise click.UsageError("give --angles or --network")
        sols = all_solitons(fan, disconnected, radius)
        rows = []
        for name, sol in sols.items():
            res = max(soliton_residual(a) for a in sol.arcs)
            slope = max(asymptotic_fit(sol.arcs[ai])[1].slope for ai in sol.leaf_arcs)
            internal = [float(np.sum(np.linalg.norm(np.diff(sol.arcs[i].points, axis=0), axis=1)))
                        for i in sol.internal_arcs()]
            rows.append({"topology": name, "residual": res, "balance": sol.junction_balance(),
                         "decay_slope": slope, "internal_lengths": internal})
            click.echo(f"{name}: residual {res:.2e}, balance {sol.junction_balance():.2e}, "
                       f"decay slope {slope:.3f}, internal lengths {[round(x, 6) for x in internal]}")
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "solitons.json").write_text(json.dumps(rows, indent=1, default=_jsonable) + "\n")
        return EXIT_OK

    _run(go)


def _startup(cfg: RunConfig, net: Network):
    from .expander import solve_soliton
    from .flow import start_from_irregular

    if cfg.radius is None:
        cfg.radius = 3.0 * math.sqrt(2.0 * cfg.t0)
    radius = cfg.radius
    fans = dict(zip(net.interior_vertices(), extract_fans(net)))
    choices = parse_topology([f"v{vi + 1}:{d}" for vi, d in cfg.topology.items()], net)
    missing = [vi for vi in choices if vi not in fans]
    if missing:
        raise click.BadParameter(f"v{missing[0] + 1} is not an interior vertex")
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        futures = {vi: pool.submit(solve_soliton, fans[vi], d) for vi, d in choices.items()}
        sols = {vi: f.result() for vi, f in futures.items()}
    return start_from_irregular(net, choices, cfg.t0, radius, J=cfg.J, M=cfg.mesh, solitons=sols)


def _topology_dict(items) -> dict:
    out = {}
    for item in items:
        head, desc = item.split(":", 1) if ":" in item else ("", "")
        if not head.startswith("v") or not head[1:].isdigit():
            raise click.BadParameter(f"topology {item!r} must look like v1:12|34")
        out[int(head[1:]) - 1] = desc
    return out


@main.command(epilog=EXIT_HELP)
@click.argument("network")
@click.option("--topology", multiple=True, help="Per-vertex choice such as v1:12|34 (repeatable).")
@click.option("--t0", default=0.005, show_default=True, help="Startup time.")
@click.option("--radius", default=None, type=float, help="Excision radius (default 3 sqrt(2 t0)).")
@click.option("--order", "J", default=0, show_default=True, help="Expansion order of the inserted slice.")
@click.option("--mesh", default=64, show_default=True, help="Nodes per curve.")
@click.option("--workers", default=1, show_default=True, help="Threads for soliton solves.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True)
def resolve(network, topology, t0, radius, J, mesh, workers, out):
    """Insert scaled solitons at the irregular vertices of NETWORK and write the result."""

    def go():
        cfg = RunConfig("resolve", network, _topology_dict(topology), t0=t0, mesh=mesh, radius=radius,
                        J=J, out=out, workers=workers)
        cfg.validate()
        net = read_network(network, mesh)
        state, rep = _startup(cfg, net)
        Path(out).mkdir(parents=True, exist_ok=True)
        dump_network(state.network, Path(out) / "resolved.json")
        ok = check_regular(state.network, 1e-2).regular
        audits = {"curves": len(state.network.curves), "predicted_curves": rep.predicted_curves,
                  "counts_match": len(state.network.curves) == rep.predicted_curves,
                  "blends": {f"{k[0]}:{k[1]}": asdict(v) for k, v in rep.blends.items()},
                  "near_regular": ok}
        write_manifest(cfg, audits, Path(out) / "manifest.json")
        click.echo(f"resolved network with {len(state.network.curves)} curves at t = {state.t:g}")
        return EXIT_OK if audits["counts_match"] else EXIT_AUDIT

    _run(go)


@main.command(epilog=EXIT_HELP)
@click.argument("network")
@click.option("--topology", multiple=True, help="Per-vertex choice such as v1:12|34 (repeatable).")
@click.option("--t0", default=0.005, show_default=True, help="Startup time for irregular data.")
@click.option("--dt", default=1e-3, show_default=True, help="Largest time step.")
@click.option("--t-end", "t_end", default=0.1, show_default=True, help="Final time.")
@click.option("--mesh", default=64, show_default=True, help="Nodes per curve.")
@click.option("--radius", default=None, type=float, help="Excision radius (default 3 sqrt(2 t0)).")
@click.option("--cfl", default=100.0, show_default=True, help="Factor of the step bound min h^2|gamma_x|^2.")
@click.option("--snapshots", default=None, help="Comma separated snapshot times.")
@click.option("--seed", default=0, show_default=True, help="Recorded for reproducibility; the pipeline is deterministic.")
@click.option("--emit-svg", is_flag=True, help="Write one SVG frame per snapshot.")
@click.option("--workers", default=1, show_default=True, help="Threads for soliton solves.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True)
def evolve(network, topology, t0, dt, t_end, mesh, radius, cfl, snapshots, seed, emit_svg, workers, out):
    """Run the flow from NETWORK and write trajectory.csv and manifest.json."""
    from .flow import FlowState, evolve as run_flow, herring_residual

    def go():
        cfg = RunConfig("evolve", network, _topology_dict(topology), t0=t0, dt=dt, t_end=t_end, mesh=mesh,
                        radius=radius, cfl=cfl, snapshots=_floats(snapshots), seed=seed, out=out,
                        emit_svg=emit_svg, workers=workers)
        cfg.validate()
        np.random.default_rng(seed)
        net = read_network(network, mesh)
        irregular = check_regular(net).irregular_vertices()
        if irregular and not cfg.topology:
            raise click.UsageError(
                "network has irregular vertices " + ", ".join(f"v{v + 1}" for v in irregular)
                + "; choose a resolution with --topology")
        if cfg.topology:
            state, rep = _startup(cfg, net)
            startup = {"predicted_curves": rep.predicted_curves,
                       "blends": {f"{k[0]}:{k[1]}": asdict(v) for k, v in rep.blends.items()}}
        else:
            from .flow import _resample_all

            state = FlowState.initial(_resample_all(net, mesh) if mesh else net)
            startup = {}
        if t_end < state.t:
            raise click.BadParameter("t-end precedes the startup time")
        traj = run_flow(state, t_end, cfg.snapshots, dt=dt, cfl=cfl)
        outdir = Path(out)
        outdir.mkdir(parents=True, exist_ok=True)
        write_trajectory_csv(traj.snapshots, outdir / "trajectory.csv")
        if emit_svg:
            box = view_box(traj.snapshots[0][1])
            for i, (_, snap) in enumerate(traj.snapshots):
                write_svg(snap, box, outdir / f"frame_{i:04d}.svg")
        a = traj.audit
        diffs = np.diff(traj.lengths) if len(traj.lengths) > 1 else np.zeros(1)
        audits = {
            "exterior_pinned": a["exterior_pinned"],
            "max_coincidence_over_diameter": a["max_coincidence"],
            "max_herring": a["max_herring"],
            "max_length_increase": float(np.max(diffs)),
            "length_monotone": bool(np.all(diffs <= 1e-10)),
            "min_boundary_eigenvalue": a["min_boundary_eigenvalue"],
            "steps": a["steps"],
            "final_herring": herring_residual(traj.final.network),
            "curves": len(traj.final.network.curves),
        }
        passed = (audits["exterior_pinned"] and audits["max_coincidence_over_diameter"] <= 1e-9
                  and audits["max_herring"] <= 1e-6 and audits["length_monotone"])
        audits["passed"] = bool(passed)
        write_manifest(cfg, audits, outdir / "manifest.json", {"startup": startup})
        click.echo(f"{len(traj.final.network.curves)} curves, {a['steps']} steps, t = {traj.final.t:g}; "
                   f"audits {'PASS' if passed else 'FAIL'}")
        return EXIT_OK if passed else EXIT_AUDIT

    _run(go)


@main.command(epilog=EXIT_HELP)
@click.option("--order", "J", default=12, show_default=True, help="Highest order j of the tables.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True)
def heatmodel(J, out):
    """Build the exact corner coefficient tables and check their identities."""
    from .heat import cross_consistency, recursion_defects, series_table, write_table_csv

    def go():
        table = series_table(J)
        ok, where = cross_consistency(table)
        defects = recursion_defects(table)
        Path(out).mkdir(parents=True, exist_ok=True)
        write_table_csv(table, Path(out) / "coefficients.csv")
        passed = ok and not any(defects.values())
        click.echo(f"c/A consistency: {'PASS' if ok else 'FAIL'}")
        click.echo("recursion defects: " + ", ".join(f"{k}={v}" for k, v in defects.items()))
        if where is not None:
            click.echo(f"first mismatch at j={where[0]}, p={where[1]}")
        cfg = RunConfig("heatmodel", J=J, out=out)
        write_manifest(cfg, {"consistent": ok, "defects": defects, "passed": passed},
                       Path(out) / "manifest.json")
        return EXIT_OK if passed else EXIT_AUDIT

    _run(go)


@main.command(epilog=EXIT_HELP)
@click.option("--angles", default="45,135,225,315", show_default=True, help="Fan ray angles in degrees.")
@click.option("--topology", default="12|34", show_default=True, help="Resolution descriptor.")
@click.option("--order", "J", default=2, show_default=True, help="Expansion order (at most 3).")
@click.option("--curvature", default=0.5, show_default=True, help="Curvature of the incoming circular arcs.")
@click.option("--mode", type=click.Choice(["herring", "frozen"]), default="herring", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True)
def expand(angles, topology, J, curvature, mode, out):
    """Expand the flow out of a soliton for circular incoming arcs; write jets and defects."""
    from .expander import solve_soliton
    from .expansion import build_expansion, circular_jets, defect_order, write_defect_csv
    from .resolution import parse_descriptor

    def go():
        fan = Fan.from_angles(np.radians(_floats(angles)))
        sol = solve_soliton(fan, parse_descriptor(topology, fan.k))
        jets = [circular_jets(fan.directions[l], curvature, J + 1) for l in range(fan.k)]
        exp = build_expansion(sol, jets, J, mode=mode)
        rep = defect_order(exp)
        Path(out).mkdir(parents=True, exist_ok=True)
        exp.jets_to_json(Path(out) / "jets.json")
        write_defect_csv(rep.taus, rep.defects, Path(out) / "defect.csv")
        click.echo(f"defect order {rep.order}, log-log slope {rep.slope:.3f}")
        cfg = RunConfig("expand", J=J, out=out)
        write_manifest(cfg, {"order": rep.order, "slope": rep.slope, "parity": exp.parity_ok(),
                             "degree": exp.degree_ok()}, Path(out) / "manifest.json",
                       {"fan_degrees": _floats(angles), "topology": topology, "curvature": curvature,
                        "mode": mode})
        return EXIT_OK if exp.parity_ok() and exp.degree_ok() else EXIT_AUDIT

    _run(go)


if __name__ == "__main__":
    main()
