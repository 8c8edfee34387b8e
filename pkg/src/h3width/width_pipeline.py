"""End-to-end width bound: configuration, orchestration, report and CLI."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import hkernel as hk
from . import morse_field as mf
from . import oracles
from . import quotient_manifold as qm
from . import sweep_surfaces as ss
from . import voronoi_complex as vc
from .hkernel import GeometryError

log = logging.getLogger("h3width")

REPORT_SCHEMA = "h3width.report/1"
EXIT_OK, EXIT_CONFIG, EXIT_DEGENERACY, EXIT_INEQUALITY = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A module error, tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    """Run parameters, read from JSON.

    ``manifold`` is a path to a manifold file, ``"builtin:seifert-weber"``,
    or ``{"flat": [L1, L2, L3]}`` for the flat analogue.  Exactly one of
    ``epsilon`` (desk mode, empty thin part) and ``mv`` (Margulis-compatible
    constants mu, mu1, mu2, delta) must be given.
    """

    manifold: Any
    epsilon: float | None = None
    mv: dict | None = None
    field: dict = field(default_factory=lambda: {"kind": "distance_to_point"})
    seed: int = 0
    splitter_samples: int = 2048
    tau_split: float = 1e-4
    mesh_h: float = 0.2
    area_grid: int = 24
    max_probes: int = 150_000
    base_dir: str = "."

    def __post_init__(self):
        if (self.epsilon is None) == (self.mv is None):
            raise ConfigError("give exactly one of 'epsilon' (desk mode) and 'mv'")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.mv is not None:
            missing = {"mu", "mu1", "mu2", "delta"} - set(self.mv)
            if missing:
                raise ConfigError(f"mv block lacks {sorted(missing)}")
        for name in ("tau_split", "mesh_h"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.splitter_samples < 2 or self.area_grid < 1:
            raise ConfigError("sample and grid sizes must be positive")
        if self.field.get("kind") not in mf.FIELD_KINDS:
            raise ConfigError(f"field kind must be one of {mf.FIELD_KINDS}")

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "RunConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if "manifold" not in data:
            raise ConfigError("config needs a 'manifold'")
        try:
            return cls(**data, base_dir=str(base_dir))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, path.parent)


def bundled_manifold_path() -> Path:
    return Path(str(resources.files("h3width") / "data" / "seifert_weber.json"))


def load_space(cfg: RunConfig, epsilon: float):
    """The metric space named by the config."""
    spec = cfg.manifold
    if isinstance(spec, dict):
        if "flat" not in spec:
            raise ConfigError("inline manifolds must be {'flat': [L1, L2, L3]}")
        return oracles.FlatTorusModel(spec["flat"])
    if spec in ("builtin:seifert-weber", "builtin:seifert_weber"):
        return vc.as_space(qm.seifert_weber())
    path = Path(spec)
    if not path.is_absolute():
        path = Path(cfg.base_dir) / path
    try:
        return vc.as_space(qm.load_manifold(path))
    except OSError as exc:
        raise ConfigError(f"cannot read manifold {path}: {exc}") from exc
    except (qm.ManifoldFormatError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad manifold file {path}: {exc}") from exc


def make_field(space, spec: dict) -> mf.MorseField:
    kind = spec["kind"]
    try:
        if kind == "distance_to_point":
            target = spec.get("target", "basepoint")
            p = space.basepoint if target == "basepoint" else np.asarray(target, float)
            return mf.distance_to_point(space, p)
        if kind == "radial_bump_sum":
            return mf.radial_bump_sum(space, spec["points"], spec["weights"], spec["radius"])
        return mf.axis_sweep(space, spec.get("axis", 0))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad field block: {exc}") from exc


# ---------------------------------------------------------------------------
# constants


def bound_constant(c: vc.DerivedConstants) -> float:
    """66 J^2 K with K = L / A."""
    return 66.0 * c.J * c.J * (c.L / c.A)


def gauss_bonnet_area(g: int | Sequence[int]) -> float:
    """Area bound 4 pi g for minimal surfaces of genus g, summed over components.

    Genus zero contributes 0; the bound is only meaningful for g >= 1.
    """
    gs = [g] if isinstance(g, (int, np.integer)) else list(g)
    if any(x < 0 for x in gs):
        raise ValueError("genus must be non-negative")
    return float(sum(4 * math.pi * x for x in gs))


# ---------------------------------------------------------------------------
# report


@dataclass
class WidthReport:
    data: dict
    census: list[dict]
    timings: dict

    @property
    def width_upper(self) -> int:
        return self.data["width_upper"]

    @property
    def violations(self) -> list[str]:
        return [k for k, v in self.data["inequalities"].items() if v.get("violations", 0)]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        (out / "census.csv").write_text(ss.census_csv(self.census))
        (out / "timings.json").write_text(json.dumps(self.timings, indent=2, sort_keys=True) + "\n")


def _r(x: float) -> float:
    """Round for the report so that it is stable across platforms."""
    x = float(x)
    if not math.isfinite(x) or x == 0:
        return x
    return float(f"{x:.12g}")


class _Ineq:
    def __init__(self):
        self.checked = 0
        self.skipped = 0
        self.violations: list = []
        self.min_slack = math.inf

    def record(self, lhs: float, rhs: float, where) -> None:
        self.checked += 1
        if lhs > rhs:
            self.violations.append(where)
        elif lhs > 0:
            self.min_slack = min(self.min_slack, rhs / lhs)

    def as_dict(self) -> dict:
        return {
            "checked": self.checked,
            "not_applicable": self.skipped,
            "violations": len(self.violations),
            "first_violation": self.violations[0] if self.violations else None,
            "min_slack": _r(self.min_slack) if math.isfinite(self.min_slack) else None,
        }


def run_pipeline(cfg: RunConfig) -> WidthReport:
    """Sample, decompose, sweep and bound; raises StageError on module errors."""
    timings: dict = {}
    clock = time.perf_counter()

    def stage(name):
        nonlocal clock
        now = time.perf_counter()
        timings[name] = round(now - clock, 3)
        clock = now

    notes = []
    try:
        if cfg.mv is not None:
            mv = qm.MVConstants.from_margulis(**{k: float(cfg.mv[k]) for k in ("mu", "mu1", "mu2", "delta")})
            eps = mv.epsilon
        else:
            mv, eps = None, float(cfg.epsilon)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    space = load_space(cfg, eps)
    flat = isinstance(space, oracles.FlatTorusModel)
    if mv is not None and not flat:
        if not space.model.thin.tubes:
            notes.append("mv mode with no declared tubes: thin part is empty")
    stage("manifold")

    try:
        samples = vc.sample_maximal(space, eps, cfg.seed, max_probes=cfg.max_probes)
        v = vc.build_voronoi(space, samples, seed=cfg.seed)
        d = vc.build_dual(v)
    except GeometryError as exc:
        raise StageError("voronoi", exc) from exc
    c = v.constants
    inj_min = float(min(cell.inj for cell in v.cells))
    desk_ok = eps < inj_min / 2
    if mv is None and not desk_ok:
        notes.append(f"desk mode: epsilon is not below half the sampled injectivity radius {inj_min:.6g}")
    thin = ss.cell_thin_labels(v)
    stage("voronoi")

    try:
        f = make_field(space, cfg.field)
        splitters = mf.all_splitters(f, v, cfg.splitter_samples, cfg.seed, cfg.tau_split)
        order = mf.order_cells(splitters)
    except GeometryError as exc:
        raise StageError("splitters", exc) from exc
    if order.ties:
        notes.append(f"{len(order.ties)} splitter ties broken by cell id")
    values = np.asarray(order.values)
    stage("splitters")

    if order.ties:
        # regions follow the tie-broken order; levels sit at the tied values
        sched = ss.nested_schedule(np.arange(len(values), dtype=float))
        points = [float(values[0]) - 1.0] + [0.5 * (a + b) for a, b in zip(values, values[1:])] + [float(values[-1]) + 1.0]
    else:
        sched = ss.nested_schedule(values)
        points = list(sched.points)
    try:
        areas = mf.level_areas(f, points, cfg.mesh_h)
    except GeometryError as exc:
        raise StageError("level_areas", exc) from exc
    stage("level_areas")

    face_ineq, deep_ineq, cap_ineq, step_ineq = _Ineq(), _Ineq(), _Ineq(), _Ineq()
    rows, genus_seq, capped_seq, norms = [], [], [], []
    surfaces = []
    for i, u in enumerate(points):
        k = sched.prefix[i]
        region = ss.PolyhedralRegion(float(u), frozenset(order.order[:k]), v.n_cells)
        try:
            s = ss.extract_surface(v, d, region)
            st = ss.surface_stats(s, "all", thin)
            deep_st = ss.surface_stats(s, "deep", thin)
            cap = ss.cap_surface(s, thin, region, i, len(points))
        except GeometryError as exc:
            raise StageError("surfaces", exc) from exc
        n = s.norm_W
        norms.append(n)
        genus_seq.append(st.genus)
        capped_seq.append(cap.stats.genus)
        surfaces.append((s, st))
        if not flat:
            rep = ss.face_bound_check(s, st, areas[i], c)
            face_ineq.record(n, rep.bound, i)
            deep_ineq.record(deep_st.genus, ss.deep_genus_bound(c, n), i)
            if n > 0:
                cap_ineq.record(cap.stats.genus, ss.capped_genus_bound(c, n), i)
            else:
                cap_ineq.skipped += 1
        rows.append(
            {
                "index": i,
                "u": repr(_r(u)),
                "cells": k,
                "norm_S_W": n,
                "V": st.vertices,
                "E": st.edges,
                "F": st.faces,
                "chi": st.chi,
                "components": st.components,
                "genus": st.genus,
                "capped_genus": cap.stats.genus,
            }
        )
    handles = []
    for i, row in enumerate(rows):
        if i + 1 < len(rows):
            cell = order.order[i]
            n1, n2 = norms[i], norms[i + 1]
            try:
                h = ss.handle_bound_step(cell, v, thin, c, n1, n2)
            except ss.InequalityViolation:
                J = c.J
                h = 54 * J * J + 4 * J * n2 + 2 * J * n1
                step_ineq.violations.append(i)
            top = max(n1, n2)
            if top > 0 and not flat:
                step_ineq.record(h, 60 * c.J * c.J * top, i)
            else:
                step_ineq.skipped += 1
        else:
            h = 0
        handles.append(h)
        row["handle_bound_next"] = h
    stage("surfaces")

    try:
        morse = mf.morse_area_estimate(f, None, cfg.area_grid, cfg.mesh_h, refine=1)
    except GeometryError as exc:
        raise StageError("morse_area", exc) from exc
    stage("morse_area")

    max_capped = max(capped_seq)
    max_handles = max(handles)
    width_upper = max_capped + max_handles
    B = bound_constant(c)
    width_ineq = _Ineq()
    if flat:
        width_ineq.skipped += 1
        notes.append("flat analogue: hyperbolic constants are reported but not asserted")
    else:
        width_ineq.record(width_upper, B * morse.area, "final")

    data = {
        "schema": REPORT_SCHEMA,
        "manifold": {
            "name": "flat-torus" if flat else space.model.name,
            "volume": _r(space.volume),
            "flat": flat,
            "lengths": [float(x) for x in space.L] if flat else None,
            "R_search": None if flat else _r(space.model.R_search),
        },
        "mode": "mv" if mv is not None else "desk",
        "epsilon": _r(eps),
        "mv": None if mv is None else {k: _r(getattr(mv, k)) for k in ("mu", "mu1", "mu2", "delta", "epsilon")},
        "seed": cfg.seed,
        "constants": {k: (_r(x) if isinstance(x, float) else x) for k, x in c.to_dict().items()},
        "complex": {
            "cells": v.n_cells,
            "faces": v.n_faces,
            "edges": v.n_edges,
            "vertices": v.n_vertices,
            "deep_cells": int(np.sum(v.deep)),
            "thin_cells": int(np.sum(thin >= 0)),
            "perturbations": v.perturbations,
            "inj_min_sampled": _r(inj_min),
            "checks": {k: (_r(x) if isinstance(x, float) else (bool(x) if isinstance(x, (bool, np.bool_)) else x)) for k, x in v.checks.items()},
            "dual_tetrahedra": int(len(d.tetrahedra)),
        },
        "field": {
            "kind": f.kind,
            "spec": cfg.field,
            "lipschitz": _r(f.lipschitz),
            "splitter_samples": cfg.splitter_samples,
            "tau_split": cfg.tau_split,
        },
        "splitters": {
            "ties": [list(t) for t in order.ties],
            "shallow": int(sum(s.shallow for s in splitters)),
            "max_residual": _r(max(s.residual for s in splitters)),
            "range": [_r(values[0]), _r(values[-1])],
        },
        "schedule_points": len(points),
        "genus_sequence": genus_seq,
        "capped_genus_sequence": capped_seq,
        "norm_S_W_sequence": norms,
        "max_capped_genus": max_capped,
        "max_handle_bound": max_handles,
        "width_upper": width_upper,
        "width_upper_note": "upper bound on Scharlemann-Thompson width, not the width itself",
        "morse_area": {
            "estimate": _r(morse.area),
            "t_max": _r(morse.t_max),
            "error": _r(morse.error),
            "mesh_h": cfg.mesh_h,
            "grid_points": len(morse.grid),
        },
        "bound_constant": _r(B),
        "width_bound": _r(B * morse.area),
        "inequalities": {
            "face_bound": face_ineq.as_dict(),
            "deep_genus": deep_ineq.as_dict(),
            "capped_genus": cap_ineq.as_dict(),
            "step_handles": step_ineq.as_dict(),
            "width": width_ineq.as_dict(),
        },
        "reference": {
            "four_pi_width_upper": _r(4 * math.pi * width_upper),
            "gauss_bonnet_max_genus": _r(gauss_bonnet_area(max(genus_seq))),
            "note": "reference values only; not certified",
        },
        "notes": notes,
    }
    stage("report")
    return WidthReport(data, rows, timings)


# ---------------------------------------------------------------------------
# CLI


def _cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    report = run_pipeline(cfg)
    report.write(args.out)
    bad = report.violations
    print(f"width_upper = {report.width_upper}   (report in {args.out})")
    if bad:
        print(f"proved inequality violated: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INEQUALITY
    return EXIT_OK


def _cmd_constants(args) -> int:
    c = vc.derive_constants(args.epsilon)
    out = c.to_dict()
    out["bound_constant"] = bound_constant(c)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        m = qm.load_manifold(args.manifold)
    except (OSError, json.JSONDecodeError, qm.ManifoldFormatError) as exc:
        print(f"cannot load manifold: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    ball = qm.check_group_ball(m)
    inj = float(np.min(qm.injectivity_radius(m, m.domain.vertices)))
    info = {
        "name": m.name,
        "faces": m.domain.n_faces,
        "pairings": len(m.pairings),
        "domain_radius": m.domain_radius,
        "R_search": m.R_search,
        "group_ball": ball,
        "inj_at_vertices_min": inj,
    }
    print(json.dumps(info, indent=2, default=float))
    ok = ball["identity"] and ball["closed_under_inverse"]
    return EXIT_OK if ok else EXIT_DEGENERACY


def selftest_table() -> list[tuple[str, bool, str]]:
    rows = []
    nc = oracles.exhaustive_normal_check()
    rows.append(("normal pieces (16 markings, all gluings)", nc.passed, f"{nc.gluings} gluings"))
    for r in (0.25, 0.5, 1.0):
        e = oracles.mc_ball_volume(r, 200_000, seed=1)
        exact = hk.ball_volume(r)
        rows.append((f"ball volume r={r}", e.within(exact), f"{e.value:.5f} vs {exact:.5f}"))
    rep = oracles.flat_pipeline_check(
        (1, 1, 4), 0.6, centers=oracles.bcc_centers((1, 1, 4)), expected_genus=[0, 2, 2, 2, 2, 2, 2, 2, 0]
    )
    rows.append(("flat 1x1x4 sweep genus", rep.passed, str(list(rep.genus))))
    torus = oracles.FlatTorusModel((1, 1, 1))
    v = oracles.flat_complex(torus, oracles.bcc_centers((1, 1, 1)), 0.6)
    s = ss.extract_surface(v, None, ss.PolyhedralRegion(0.0, frozenset([0]), 2))
    g = ss.surface_stats(s).genus
    rows.append(("flat two-cell interface genus", g == 3, f"genus {g}"))
    return rows


def _cmd_selftest(args) -> int:
    rows = selftest_table()
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name.ljust(width)}  {detail}")
    return EXIT_OK if all(r[1] for r in rows) else EXIT_INEQUALITY


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="h3width", description="Width upper bounds for closed hyperbolic 3-manifolds")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the pipeline from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=_cmd_run)
    c = sub.add_parser("constants", help="print the derived constants for epsilon")
    c.add_argument("--epsilon", type=float, required=True)
    c.set_defaults(func=_cmd_constants)
    v = sub.add_parser("validate", help="check a manifold file")
    v.add_argument("--manifold", required=True)
    v.set_defaults(func=_cmd_validate)
    s = sub.add_parser("selftest", help="run the oracle checks")
    s.set_defaults(func=_cmd_selftest)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        if isinstance(exc.cause, ss.InequalityViolation):
            return EXIT_INEQUALITY
        return EXIT_DEGENERACY
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
