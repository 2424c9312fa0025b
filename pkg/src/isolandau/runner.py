"""Run orchestration: execute, resume, verify, oracle.

Outputs per run directory:

    config.cfg        verbatim copy of the configuration
    diagnostics.csv   one row per cadence step, fixed column order, %.17g
    snap_XXXXXX.bin   field snapshots (+ .json sidecars with engine state)
    summary.json      RunSummary
    regularity.json   Poincare/Moser reports (when enabled and complete)

Identical config + seed produce byte-identical CSV and snapshots; resumed
runs agree with uninterrupted ones to solver tolerance (the entropy variable
is re-derived from the stored density, which costs one rounding).
"""

import glob
import json
import os
import re
import time

import numpy as np

from . import initial
from .config import load_config, parse_config
from .coulomb import CoulombOperator
from .diagnostics import AUDIT_NAMES, DiagnosticsEngine
from .errors import CorruptSnapshot, GridTooLarge, NonConvergence
from .grid import Grid3, ScalarField, symmetrize_even
from .regularity import MoserParams, PoincareParams, eps_poincare_test, moser_sequence, small_p_ratio
from .scheme import SchemeParams, default_u_floor, implicit_step, initial_state
from .snapshot import atomic_write_text, read_snapshot, write_snapshot

ENV_OUTPUT_DIR = "ISOLANDAU_OUTPUT_DIR"

CSV_COLUMNS = (
    "t",
    "mass",
    "second_moment",
    "entropy",
    "entropy_plain",
    "dissipation",
    "fisher_weighted",
    "min_u",
    "max_u",
    "a_min_margin",
    "odd_integral_norm",
    "a_L3_local",
    "grad_a_L32_local",
    "weighted_l1l3",
    "weighted_l53",
) + tuple(f"slack_{name}" for name in AUDIT_NAMES)


def _g17(x):
    return format(float(x), ".17g")


def _csv_row(rec):
    vals = [
        rec.t,
        rec.mass,
        rec.second_moment,
        rec.entropy,
        rec.entropy_plain,
        rec.dissipation,
        rec.fisher_weighted,
        rec.min_u,
        rec.max_u,
        rec.a_min_margin,
        rec.odd_integral_norm,
        rec.a_L3_local,
        rec.grad_a_L32_local,
        rec.weighted_l1l3_running,
        rec.weighted_l53_running,
    ] + [rec.inequality_audits[name].slack for name in AUDIT_NAMES]
    return ",".join(_g17(v) for v in vals)


def build_initial_field(cfg, grid):
    if cfg.ic_kind == "gaussian":
        u0 = initial.gaussian(grid, cfg.ic_mass, cfg.ic_sigma, cfg.ic_center)
    elif cfg.ic_kind == "ball":
        u0 = initial.uniform_ball(grid, cfg.ic_mass, cfg.ic_radius)
    elif cfg.ic_kind == "double_bump":
        u0 = initial.double_bump(grid, cfg.ic_mass, cfg.ic_sigma, cfg.ic_offset)
    else:
        field, _, _, _ = read_snapshot(cfg.ic_path)
        if field.grid.n != grid.n or not np.isclose(field.grid.h, grid.h):
            raise CorruptSnapshot("initial-condition snapshot grid mismatch")
        u0 = field
    return symmetrize_even(u0)


def scheme_params(cfg):
    floor = cfg.u_floor
    if floor <= 0:
        floor = default_u_floor(max(cfg.ic_mass, 1e-12), cfg.half_extent)
    return SchemeParams(
        tau=cfg.tau,
        t_final=cfg.t_final,
        u_floor=floor,
        alpha=cfg.alpha,
        outer_tol=cfg.outer_tol,
        newton_tol=cfg.newton_tol,
        outer_max=cfg.outer_max,
        newton_max=cfg.newton_max,
        enforce_even=cfg.enforce_even,
    )


def _resolve_outdir(cfg):
    return os.environ.get(ENV_OUTPUT_DIR) or cfg.output_dir


class RunSummary(dict):
    """Plain dict with attribute access for the common fields."""

    def __getattr__(self, k):
        try:
            return self[k]
        except KeyError:
            raise AttributeError(k)


def _summarize(cfg, engine, stats_totals, wall, steps, interrupted=False, note=None):
    audits = {}
    for rec in engine.records:
        for name, res in rec.inequality_audits.items():
            entry = audits.setdefault(
                name, {"passes": 0, "fails": 0, "worst_slack": float("inf")}
            )
            entry["passes" if res.passed else "fails"] += 1
            entry["worst_slack"] = min(entry["worst_slack"], res.slack)
    final = engine.records[-1] if engine.records else None
    return RunSummary(
        config_hash=cfg.config_hash,
        steps=steps,
        interrupted=interrupted,
        note=note,
        audits=audits,
        final={} if final is None else {c: getattr(final, a) for c, a in _FINAL_FIELDS},
        wall_clock_s=wall,
        solver_totals=stats_totals,
    )


_FINAL_FIELDS = [
    ("t", "t"),
    ("mass", "mass"),
    ("second_moment", "second_moment"),
    ("entropy", "entropy"),
    ("entropy_plain", "entropy_plain"),
    ("dissipation", "dissipation"),
    ("min_u", "min_u"),
    ("max_u", "max_u"),
]


def _write_summary(outdir, summary):
    atomic_write_text(os.path.join(outdir, "summary.json"), json.dumps(summary, indent=1))


def _regularity_reports(cfg, trajectory):
    grid = trajectory[0].u.grid
    L = grid.half_extent
    cube = cfg.poincare_cube if cfg.poincare_cube > 0 else L / 2.0
    pp = PoincareParams(
        cube_size=cube,
        epsilon=cfg.poincare_epsilon,
        count=cfg.poincare_count,
        seed=cfg.poincare_seed,
    )
    last = trajectory[-1]
    sp = small_p_ratio(last.u, last.a, pp)
    ep = eps_poincare_test(last.u, last.a, pp)
    out = {
        "small_p": {
            "max_ratio": sp.max_ratio,
            "mass_moment_ratio": sp.mass_moment_ratio,
            "cube_ratios": sp.cube_ratios,
        },
        "eps_poincare": {
            "epsilon": pp.epsilon,
            "max_c_eps": ep.max_c_eps,
            "per_phi": [
                {"label": l, "lhs": a, "rhs": b, "c_eps": c} for l, a, b, c in ep.phi_results
            ],
        },
    }
    if cfg.t_final > 0 and len(trajectory) > 1:
        mp = MoserParams(
            radius=L,
            horizon=cfg.t_final,
            p=cfg.moser_p,
            q=cfg.moser_q,
            n_max=cfg.moser_n_max,
        )
        rep = moser_sequence(trajectory, mp)
        out["moser"] = {
            "E": rep.E,
            "exponents": rep.exponents,
            "cutoff_constants": rep.cutoff_constants,
            "recursion_constants": rep.recursion_constants,
            "C_meas": rep.C_meas,
            "alpha_measured": rep.alpha_measured,
            "tau_remainder": rep.tau_remainder,
            "predicted_bound": rep.predicted_bound,
            "measured_sup": rep.measured_sup,
            "margin": rep.margin,
            "largest_valid_n": rep.largest_valid_n,
        }
    return out


def run(config_path_or_cfg, stop_after=None):
    """Execute a configured run from t = 0.  `stop_after` limits the number of
    steps (testing hook for interrupt/resume); the run is then resumable."""
    t0 = time.time()
    if isinstance(config_path_or_cfg, str) and os.path.exists(config_path_or_cfg):
        cfg = load_config(config_path_or_cfg)
    elif isinstance(config_path_or_cfg, str):
        cfg = parse_config(config_path_or_cfg)
    else:
        cfg = config_path_or_cfg
    outdir = _resolve_outdir(cfg)
    os.makedirs(outdir, exist_ok=True)
    atomic_write_text(os.path.join(outdir, "config.cfg"), cfg.raw_text)

    grid = Grid3(cfg.n, cfg.h)
    op = CoulombOperator(grid, cfg.backend)
    params = scheme_params(cfg)
    u0 = build_initial_field(cfg, grid)
    state = initial_state(u0, op, params.u_floor)

    engine = DiagnosticsEngine(
        state, op, epsilon=cfg.epsilon,
        reference_ball=cfg.reference_ball if cfg.reference_ball > 0 else None,
        dissipation_method=cfg.dissipation,
    )
    n_steps = int(round(cfg.t_final / cfg.tau))
    rows = [",".join(CSV_COLUMNS), _csv_row(engine.record(state))]
    _snapshot(outdir, cfg, state, engine)

    totals = {"outer": 0, "newton": 0, "cg": 0}
    trajectory = [state]
    interrupted = None
    try:
        for k in range(1, n_steps + 1):
            if stop_after is not None and k > stop_after:
                interrupted = f"stopped after step {stop_after}"
                break
            new = implicit_step(state, params, op)
            rec = engine.record(new, state)
            state = new
            trajectory.append(state)
            for tkey, skey in (("outer", "outer_iterations"), ("newton", "newton_iterations"), ("cg", "cg_iterations")):
                totals[tkey] += state.solver_stats[skey]
            if k % cfg.cadence == 0 or k == n_steps:
                rows.append(_csv_row(rec))
                _snapshot(outdir, cfg, state, engine)
    except NonConvergence:
        _snapshot(outdir, cfg, state, engine)
        atomic_write_text(os.path.join(outdir, "diagnostics.csv"), "\n".join(rows) + "\n")
        raise

    atomic_write_text(os.path.join(outdir, "diagnostics.csv"), "\n".join(rows) + "\n")
    if cfg.reg_enabled and interrupted is None and n_steps > 0:
        reg = _regularity_reports(cfg, trajectory)
        atomic_write_text(os.path.join(outdir, "regularity.json"), json.dumps(reg, indent=1))
    summary = _summarize(
        cfg, engine, totals, time.time() - t0, state.k, interrupted is not None, interrupted
    )
    _write_summary(outdir, summary)
    return summary


def _snapshot(outdir, cfg, state, engine):
    sidecar = {
        "config_hash": cfg.config_hash,
        "k": state.k,
        "t": state.t,
        "engine": engine.get_state(),
    }
    write_snapshot(
        os.path.join(outdir, f"snap_{state.k:06d}.bin"), state.u, state.k, state.t, sidecar
    )


def _find_snapshots(outdir):
    found = []
    for path in glob.glob(os.path.join(outdir, "snap_*.bin")):
        m = re.match(r"snap_(\d+)\.bin$", os.path.basename(path))
        if m:
            found.append((int(m.group(1)), path))
    return sorted(found)


def resume(outdir):
    """Continue an interrupted run from its last valid snapshot."""
    t0 = time.time()
    cfg_path = os.path.join(outdir, "config.cfg")
    if not os.path.exists(cfg_path):
        raise CorruptSnapshot(f"{outdir}: no config.cfg to resume from")
    cfg = load_config(cfg_path)
    snaps = _find_snapshots(outdir)
    if not snaps:
        raise CorruptSnapshot(f"{outdir}: no snapshots found")
    k0, path = snaps[-1]
    field, k, t, sidecar = read_snapshot(path)
    if sidecar is None or sidecar.get("config_hash") != cfg.config_hash:
        raise CorruptSnapshot(f"{path}: sidecar config hash does not match config.cfg")
    if field.grid.n != cfg.n or not np.isclose(field.grid.h, cfg.h, rtol=1e-14):
        raise CorruptSnapshot(f"{path}: snapshot grid does not match configuration")

    grid = Grid3(cfg.n, cfg.h)
    op = CoulombOperator(grid, cfg.backend)
    params = scheme_params(cfg)
    state = initial_state(field, op, params.u_floor)
    state.k, state.t = k, t

    engine = DiagnosticsEngine(
        state, op, epsilon=cfg.epsilon,
        reference_ball=cfg.reference_ball if cfg.reference_ball > 0 else None,
        dissipation_method=cfg.dissipation,
    )
    engine.set_state(sidecar["engine"])

    n_steps = int(round(cfg.t_final / cfg.tau))
    if k >= n_steps:
        summary = _summarize(cfg, engine, {}, time.time() - t0, 0, note="already complete")
        return summary

    totals = {"outer": 0, "newton": 0, "cg": 0}
    rows = []
    trajectory = [state]
    try:
        for kk in range(k + 1, n_steps + 1):
            new = implicit_step(state, params, op)
            rec = engine.record(new, state)
            state = new
            trajectory.append(state)
            for tkey, skey in (("outer", "outer_iterations"), ("newton", "newton_iterations"), ("cg", "cg_iterations")):
                totals[tkey] += state.solver_stats[skey]
            if kk % cfg.cadence == 0 or kk == n_steps:
                rows.append(_csv_row(rec))
                _snapshot(outdir, cfg, state, engine)
    except NonConvergence:
        _snapshot(outdir, cfg, state, engine)
        raise
    finally:
        if rows:
            with open(os.path.join(outdir, "diagnostics.csv"), "a") as fh:
                fh.write("\n".join(rows) + "\n")

    note = None
    if cfg.reg_enabled:
        # rebuild the full trajectory from stored snapshots when available
        full = _trajectory_from_snapshots(outdir, cfg, op, params, n_steps)
        if full is not None:
            reg = _regularity_reports(cfg, full)
            atomic_write_text(os.path.join(outdir, "regularity.json"), json.dumps(reg, indent=1))
        else:
            note = "regularity reports skipped: incomplete snapshot history"
    summary = _summarize(cfg, engine, totals, time.time() - t0, state.k, note=note)
    _write_summary(outdir, summary)
    return summary


def _trajectory_from_snapshots(outdir, cfg, op, params, n_steps):
    snaps = dict(_find_snapshots(outdir))
    if any(k not in snaps for k in range(n_steps + 1)):
        return None
    out = []
    for k in range(n_steps + 1):
        field, kk, t, _ = read_snapshot(snaps[k])
        st = initial_state(field, op, params.u_floor)
        st.k, st.t = kk, t
        out.append(st)
    return out


# ---------------------------------------------------------------------------
# verify and oracle


def verify(size=9, kernel_perturbation=0.0):
    """Built-in oracle suite; returns a list of check dicts (name/passed/...).

    `kernel_perturbation` multiplies the Coulomb kernel by (1 + delta) in the
    closed-form check only, to demonstrate the gate detects a broken kernel.
    """
    from scipy.special import erf

    from .diagnostics import dissipation
    from .grid import Weight, divergence, gradient, parity_defect, weighted_integral
    from .grid import VectorField
    from .scheme import solve_inner

    checks = []

    def add(name, value, tol, lower_is_pass=True):
        passed = bool(value <= tol) if lower_is_pass else bool(value >= tol)
        checks.append({"name": name, "value": float(value), "tol": tol, "passed": passed})

    rng = np.random.default_rng(0)

    # Gaussian potential vs closed form (moderate grid; the kernel hook
    # applies here)
    g = Grid3(33, 8.0 / 32)
    sig = 0.8
    r = g.radius()
    u = ScalarField(g, np.exp(-(r**2) / (2 * sig**2)) / (2 * np.pi * sig**2) ** 1.5)
    a = CoulombOperator(g, kernel_scale=1.0 + kernel_perturbation).potential(u)
    rs = np.where(r == 0, 1.0, r)
    exact = erf(rs / (sig * np.sqrt(2.0))) / (4 * np.pi * rs)
    exact[r == 0] = np.sqrt(2.0 / np.pi) / (4 * np.pi * sig)
    add("coulomb_gaussian_closed_form", np.max(np.abs(a.values - exact) / exact), 1e-2)

    # backend equivalence at the requested size
    g = Grid3(size, 0.3)
    u = ScalarField(g, 0.1 + rng.random(g.shape))
    a1 = CoulombOperator(g, "spectral").potential(u)
    a2 = CoulombOperator(g, "direct").potential(u)
    add(
        "coulomb_backend_equivalence",
        np.max(np.abs(a1.values - a2.values)) / np.max(np.abs(a2.values)),
        1e-10,
    )

    # dissipation double sum vs convolution
    op = CoulombOperator(g)
    d1 = dissipation(u, op, "double_sum")
    d2 = dissipation(u, op, "convolution")
    add("dissipation_equivalence", abs(d1 - d2) / max(abs(d1), 1e-30), 1e-8)

    # parity: potential of an even field is even
    ue = symmetrize_even(u)
    ae = op.potential(ue)
    add("potential_parity", parity_defect(ae) / np.max(np.abs(ae.values)), 1e-12)

    # discrete divergence theorem
    F = VectorField(g, rng.standard_normal((3,) + g.shape))
    tot = abs(weighted_integral(divergence(F)))
    add("divergence_theorem", tot / (np.sum(np.abs(F.components)) * g.cell_volume), 1e-12)

    # manufactured inner solve
    params = SchemeParams(tau=0.01, t_final=0.0, u_floor=1e-14, newton_tol=1e-12)
    X, Y, Z = g.coords()
    wstar = 0.2 * np.cos(X) * np.sin(Y + 0.3) * np.cos(Z - 0.2) + 0.1
    z = 0.1 * np.sin(g.radius())
    afield = 1.0 + 0.5 * np.exp(-g.radius() ** 2)
    from .grid import face_avg, face_diff, flux_divergence
    from .scheme import log_mean_faces, quartic_functional

    uz = np.exp(z)
    _, p4 = quartic_functional(wstar, g.h)
    Aw = params.tau * (wstar**3 + p4) + (np.exp(wstar) - uz) / params.tau
    for ax in range(3):
        diff = np.zeros_like(wstar)
        flux_divergence(
            face_avg(afield, ax) * log_mean_faces(z, ax) * face_diff(wstar, ax, g.h),
            ax, g.h, diff,
        )
        Aw -= diff
    # encode f = A(w*) through u_prev so solve_inner sees the same problem
    fdrift = np.zeros_like(z)
    for ax in range(3):
        flux_divergence(face_avg(uz, ax) * face_diff(afield, ax, g.h), ax, g.h, fdrift)
    u_prev = uz + params.tau * (Aw + fdrift)
    w, _ = solve_inner(
        u_prev, afield, z, params, g.h, w0=wstar + 0.05 * rng.standard_normal(g.shape)
    )
    add("manufactured_solution", np.max(np.abs(w - wstar)), 1e-6)

    return checks


def oracle(snapshot_path, out_path=None):
    """Direct-summation Coulomb reference for a stored field snapshot."""
    field, k, t, _ = read_snapshot(snapshot_path)
    if field.grid.n > 17:
        raise GridTooLarge("oracle uses the direct backend; grids above 17^3 rejected")
    op = CoulombOperator(field.grid, "direct")
    a = op.potential(field)
    if out_path is None:
        base, ext = os.path.splitext(snapshot_path)
        out_path = base + ".oracle" + ext
    write_snapshot(out_path, a, k, t, sidecar={"source": os.path.basename(snapshot_path)})
    return out_path
