"""Semi-discrete entropy scheme: one implicit step in the entropy variable w = log u.

Each step solves the regularized nonlinear elliptic problem

    (e^w - u_prev)/tau + tau (w^3 - div(|grad w|^2 grad w))
        - div(a grad e^w - e^w grad a) = 0

by an outer fixed-point loop that freezes the potential a and the drift at the
current iterate z, and an inner damped Newton solve of the resulting monotone
problem.  Discretization choices are made so that the discrete counterparts of
the continuum structure hold exactly:

* the drift/diffusion flux is conservative with zero boundary fluxes, so it
  contributes nothing to the mass balance; all mass drift comes from the
  tau w^3 term and is logged per step;
* the quartic regularization is the exact gradient of a convex functional
  Phi(w) (face-normal plus averaged tangential differences), so the inner
  Jacobian is symmetric positive semidefinite and w . P4(w) = 4 Phi(w) >= 0
  by Euler's identity;
* the diffusive flux a grad u is written as a_face * logmean(u) * Dw, which
  makes the per-step entropy inequality an algebraic identity up to the
  solver residual; the step audits it and raises EntropyViolation beyond
  1e-8 |H| of slack.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import EntropyViolation, NonConvergence
from .grid import ScalarField, _sl, face_avg, face_diff, flux_divergence

_CS_H = 1e-150  # complex-step width; the inner operator is polynomial in w


@dataclass(frozen=True)
class SchemeParams:
    """Time step, regularization exponent and solver tolerances."""

    tau: float
    t_final: float
    u_floor: float
    alpha: float = 1.0 / 11.0
    outer_tol: float = 1e-11
    newton_tol: float = 1e-11
    outer_max: int = 60
    newton_max: int = 60
    enforce_even: bool = True
    audit_slack_rel: float = 1e-8
    check_entropy: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not 0 < self.alpha <= 1.0 / 11.0:
            raise ValueError("alpha must lie in (0, 1/11]")
        if not self.u_floor > 0:
            raise ValueError("u_floor must be positive")
        if not (self.outer_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class StepState:
    """Immutable snapshot of the scheme after k steps."""

    k: int
    t: float
    u: ScalarField
    w: ScalarField
    a: ScalarField
    solver_stats: dict = field(default_factory=dict)


def default_u_floor(mass, half_extent):
    """Default density floor: 1e-12 times the mean density scale m / L^3."""
    return 1e-12 * mass / half_extent**3


def initial_state(u0, op, u_floor):
    """Wrap an initial density into a StepState (clamped to the floor)."""
    vals = np.maximum(u0.values, u_floor)
    u = ScalarField(u0.grid, vals)
    return StepState(
        k=0,
        t=0.0,
        u=u,
        w=ScalarField(u0.grid, np.log(vals)),
        a=op.potential(u),
        solver_stats={"floor_clamps": int(np.sum(u0.values < u_floor))},
    )


# ---------------------------------------------------------------------------
# low-level linear maps and their exact adjoints


def face_diff_adjoint(F, ax, h):
    """Adjoint of face_diff under the unweighted node/face dot products."""
    shape = list(F.shape)
    shape[ax] += 1
    out = np.zeros(shape, dtype=F.dtype)
    out[_sl(ax, slice(1, None))] += F / h
    out[_sl(ax, slice(None, -1))] -= F / h
    return out


def face_avg_adjoint(F, ax):
    shape = list(F.shape)
    shape[ax] += 1
    out = np.zeros(shape, dtype=F.dtype)
    out[_sl(ax, slice(None, -1))] += 0.5 * F
    out[_sl(ax, slice(1, None))] += 0.5 * F
    return out


def centered_axis(v, ax, h):
    """Second-order one-axis derivative (one-sided at the two boundary planes)."""
    out = np.empty_like(v)
    out[_sl(ax, slice(1, -1))] = (
        v[_sl(ax, slice(2, None))] - v[_sl(ax, slice(None, -2))]
    ) / (2 * h)
    out[_sl(ax, 0)] = (-3 * v[_sl(ax, 0)] + 4 * v[_sl(ax, 1)] - v[_sl(ax, 2)]) / (2 * h)
    out[_sl(ax, -1)] = (3 * v[_sl(ax, -1)] - 4 * v[_sl(ax, -2)] + v[_sl(ax, -3)]) / (
        2 * h
    )
    return out


def centered_axis_adjoint(G, ax, h):
    out = np.zeros_like(G)
    inner = G[_sl(ax, slice(1, -1))] / (2 * h)
    out[_sl(ax, slice(2, None))] += inner
    out[_sl(ax, slice(None, -2))] -= inner
    g0 = G[_sl(ax, 0)] / (2 * h)
    out[_sl(ax, 0)] += -3 * g0
    out[_sl(ax, 1)] += 4 * g0
    out[_sl(ax, 2)] += -g0
    g1 = G[_sl(ax, -1)] / (2 * h)
    out[_sl(ax, -1)] += 3 * g1
    out[_sl(ax, -2)] += -4 * g1
    out[_sl(ax, -3)] += g1
    return out


# ---------------------------------------------------------------------------
# nonlinear building blocks


def quartic_functional(w, h):
    """Convex functional Phi(w) behind the 4-Laplacian term and its gradient.

    Phi(w) = (1/4) h^3 sum over axes and faces of s^2, with
    s = (normal face difference)^2 + sum of face-averaged tangential
    derivatives squared.  Returns (Phi, grad Phi / h^3); the scaled gradient
    plays the role of -div(|grad w|^2 grad w) in the residual.  Being an exact
    gradient of a convex function, its Jacobian is symmetric PSD and
    sum(w * grad) = 4 Phi exactly (Euler identity for 4-homogeneous Phi).
    """
    grad = np.zeros_like(w)
    phi = 0.0
    cgrads = [centered_axis(w, b, h) for b in range(3)]
    for ax in range(3):
        dn = face_diff(w, ax, h)
        s = dn * dn
        tbars = []
        for b in range(3):
            if b == ax:
                continue
            tb = face_avg(cgrads[b], ax)
            tbars.append((b, tb))
            s = s + tb * tb
        phi = phi + 0.25 * np.sum(s * s) * h**3
        grad += face_diff_adjoint(s * dn, ax, h)
        for b, tb in tbars:
            grad += centered_axis_adjoint(face_avg_adjoint(s * tb, ax), b, h)
    return phi, grad


def _sinhc(x):
    """sinh(x)/x, stable near 0."""
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, x)
    series = 1.0 + (x * x) / 6.0 * (1.0 + (x * x) / 20.0)
    return np.where(small, series, np.sinh(safe) / safe)


def log_mean_faces(w, ax):
    """Logarithmic mean of adjacent u = e^w values on faces along one axis.

    L(u_i, u_{i+1}) = (u_{i+1} - u_i)/(w_{i+1} - w_i) = e^{wbar} sinhc(dw/2),
    which turns the face flux a_f L Dw into an exact discrete a grad u.
    """
    wp = w[_sl(ax, slice(1, None))]
    wm = w[_sl(ax, slice(None, -1))]
    return np.exp(0.5 * (wp + wm)) * _sinhc(0.5 * (wp - wm))


def drift_divergence(a, u, w, h, return_pairing=False):
    """div(a grad u - u grad a) in conservative face form.

    The u-gradient on faces is written with the logarithmic mean of u so that
    a_f L Dw reproduces a grad u exactly when u = e^w.  Optionally also
    returns the entropy pairing S = sum_faces (a_f L Dw^2 - u_f Da Dw) h^3,
    which satisfies sum w * div(...) h^3 = -S identically.
    """
    out = np.zeros_like(u)
    S = 0.0
    for ax in range(3):
        Dw = face_diff(w, ax, h)
        Da = face_diff(a, ax, h)
        af = face_avg(a, ax)
        uf = face_avg(u, ax)
        lm = log_mean_faces(w, ax)
        flux = af * lm * Dw - uf * Da
        flux_divergence(flux, ax, h, out)
        if return_pairing:
            S += np.sum((af * lm * Dw - uf * Da) * Dw) * h**3
    if return_pairing:
        return out, S
    return out


def residual(state_prev, w, a_frozen, params):
    """Strong-form residual of the implicit step at a candidate w.

    R(w) = (e^w - u_prev)/tau + tau (w^3 + P4(w)) - div(a grad e^w - e^w grad a)

    with the conservative discretizations above, so the drift/diffusion term
    contributes zero to sum(R) h^3 and the only mass source is tau w^3.
    """
    h = w.grid.h
    wv = w.values
    u = np.exp(wv)
    _, p4 = quartic_functional(wv, h)
    drift = drift_divergence(a_frozen.values, u, wv, h)
    vals = (u - state_prev.u.values) / params.tau + params.tau * (wv**3 + p4) - drift
    return ScalarField(w.grid, vals)


# ---------------------------------------------------------------------------
# inner monotone solve


def _res_norm(r, h):
    return float(np.sqrt(np.sum(r * r) * h**3))


def solve_inner(u_prev, a_frozen, z, params, h, w0=None, anchor=True):
    """Damped Newton solve of the frozen-coefficient monotone problem.

    The core operator is A(w) = tau (w^3 + P4(w)) - div(c_f Dw) with the face
    coefficient c_f = a_f * logmean(e^z) frozen at z, and the drift part of
    the right-hand side is f = -div(e^z grad a), both per the frozen map the
    outer loop iterates.  With ``anchor=True`` (what implicit_step uses) the
    time-difference term (e^w - u_prev)/tau stays nonlinear on the left-hand
    side; it adds the strictly increasing diagonal e^w/tau, preserving strict
    monotonicity while anchoring the solve to the previous state, so the
    outer loop only has to relax the potential/drift freeze and contracts.
    With ``anchor=False`` the time term is frozen at z and moved into f,
    which is the literal fixed-point operator (useful for testing the
    operator contract: A(0) = 0, strict monotonicity).

    At w = z the equation coincides with the full nonlinear residual in both
    modes.  The Jacobian is symmetric positive semidefinite (gradient of a
    convex functional plus a nonnegative diagonal) and is inverted by
    Jacobi-preconditioned CG with a tiny Levenberg shift; a halving line
    search enforces strictly decreasing residual norms.

    Returns (w, stats).  Raises NonConvergence with the residual history.
    """
    tau = params.tau
    uz = np.exp(z)
    cf = []
    for ax in range(3):
        cf.append(face_avg(a_frozen, ax) * log_mean_faces(z, ax))

    fdrift = np.zeros_like(z)
    for ax in range(3):
        flux_divergence(face_avg(uz, ax) * face_diff(a_frozen, ax, h), ax, h, fdrift)
    f = -fdrift if anchor else -(uz - u_prev) / tau - fdrift

    def apply_A(w):
        _, p4 = quartic_functional(w, h)
        out = tau * (w**3 + p4)
        if anchor:
            out = out + (np.exp(w) - u_prev) / tau
        for ax in range(3):
            diff = np.zeros_like(w)
            flux_divergence(cf[ax] * face_diff(w, ax, h), ax, h, diff)
            out -= diff
        return out

    w = z.copy() if w0 is None else w0.copy()
    shape = w.shape
    size = w.size
    scale = max(1.0, _res_norm(f, h), _res_norm(u_prev / tau, h))
    tol = params.newton_tol * scale

    G = apply_A(w) - f
    ng = _res_norm(G, h)
    history = [ng]
    lam = 1e-12 * (tau * (1.0 + 3.0 * np.max(w * w)) + 6.0 * max(np.max(c) for c in cf) / h**2)
    cg_iters = 0
    backtracks = 0

    # Jacobi preconditioner: dominant diagonal of the frozen diffusion plus
    # the local terms (the quartic part is subdominant at step scale)
    diag = tau * (1.0 + 3.0 * w * w) + lam
    if anchor:
        diag = diag + np.exp(w) / tau
    for ax in range(3):
        pad = np.zeros_like(w)
        pad[_sl(ax, slice(None, -1))] += cf[ax] / h**2
        pad[_sl(ax, slice(1, None))] += cf[ax] / h**2
        diag += pad

    for it in range(params.newton_max):
        if ng <= tol:
            break

        wc = w  # closed over by the matvec below

        def matvec(v):
            v3 = v.reshape(shape)
            jv = np.imag(apply_A(wc + 1j * _CS_H * v3)) / _CS_H
            return (jv + lam * v3).reshape(size)

        J = LinearOperator((size, size), matvec=matvec)
        M = LinearOperator((size, size), matvec=lambda v: v / diag.reshape(size))
        counter = {"n": 0}

        def cb(_):
            counter["n"] += 1

        # inexact Newton: loose early, tighter as the residual shrinks
        rtol_cg = max(1e-10, min(1e-4, 0.01 * ng / history[0]))
        d, info = cg(
            J, -G.reshape(size), rtol=rtol_cg, atol=0.0, maxiter=4 * size, M=M, callback=cb
        )
        cg_iters += counter["n"]
        if info != 0:
            raise NonConvergence(
                f"inner CG failed (info={info}) at Newton iteration {it}",
                iterations=it,
                residual=history,
            )
        d = d.reshape(shape)

        alpha = 1.0
        accepted = False
        for _ in range(50):
            wt = w + alpha * d
            with np.errstate(over="ignore", invalid="ignore"):
                Gt = apply_A(wt) - f
                nt = _res_norm(Gt, h)
            if np.isfinite(nt) and nt < ng * (1.0 - 1e-4 * alpha):
                w, G, ng = wt, Gt, nt
                history.append(ng)
                accepted = True
                break
            alpha *= 0.5
            backtracks += 1
        if not accepted:
            if ng <= 10.0 * tol:
                break  # stagnated within a whisker of the target
            raise NonConvergence(
                f"line search stalled at Newton iteration {it} (residual {ng:.3e})",
                iterations=it,
                residual=history,
            )
    else:
        if ng > tol:
            raise NonConvergence(
                f"Newton did not reach tol={tol:.3e} in {params.newton_max} iterations",
                iterations=params.newton_max,
                residual=history,
            )

    stats = {
        "newton_iterations": len(history) - 1,
        "newton_residual": ng,
        "residual_history": history,
        "cg_iterations": cg_iters,
        "backtracks": backtracks,
    }
    return w, stats


# ---------------------------------------------------------------------------
# full implicit step


def _entropy(u, h):
    return float(np.sum(u * (np.log(u) - 1.0)) * h**3)


def implicit_step(state_prev, params, op):
    """Advance one implicit step, auditing the entropy inequality.

    The outer loop freezes the potential and the drift at the current iterate
    z, solves the monotone inner problem, and repeats until the relative
    change of w drops below outer_tol.  The accepted state is checked against
    the per-step entropy inequality

        H[u^k] + tau^2 (sum w^4 h^3 + 4 Phi(w)) + tau S <= H[u^{k-1}] + slack

    which holds identically up to the solver residual by convexity of
    u log u - u and summation by parts; failure beyond
    audit_slack_rel * |H[u^{k-1}]| raises EntropyViolation.
    """
    grid = state_prev.u.grid
    h = grid.h
    u_prev = state_prev.u.values
    tau = params.tau

    z = state_prev.w.values.copy()
    inner_stats = []
    a_frozen = None
    for outer in range(1, params.outer_max + 1):
        a_frozen = op.potential(ScalarField(grid, np.exp(z))).values
        w, st = solve_inner(u_prev, a_frozen, z, params, h)
        if params.enforce_even:
            w = 0.5 * (w + w[::-1, ::-1, ::-1])
        inner_stats.append(st)
        change = np.max(np.abs(w - z)) / max(1.0, np.max(np.abs(w)))
        z = w
        if change <= params.outer_tol:
            break
    else:
        raise NonConvergence(
            f"outer fixed point did not contract below {params.outer_tol} "
            f"in {params.outer_max} iterations",
            iterations=params.outer_max,
        )

    u_new = np.exp(z)

    # full nonlinear residual at the accepted iterate (frozen a of last pass)
    res = residual(
        state_prev, ScalarField(grid, z), ScalarField(grid, a_frozen), params
    )
    res_norm = _res_norm(res.values, h)
    res_scale = max(1.0, _res_norm(u_prev / tau, h))
    if res_norm > 10.0 * params.newton_tol * res_scale:
        raise NonConvergence(
            f"accepted step residual {res_norm:.3e} exceeds 10x newton_tol",
            residual=res_norm,
        )

    # entropy audit on the pre-clamp state
    H_prev = _entropy(u_prev, h)
    H_new = _entropy(u_new, h)
    phi, _ = quartic_functional(z, h)
    reg = tau**2 * (float(np.sum(z**4)) * h**3 + 4.0 * phi)
    _, S = drift_divergence(a_frozen, u_new, z, h, return_pairing=True)
    audit_lhs = H_new + reg + tau * S
    audit_slack = params.audit_slack_rel * abs(H_prev)
    if params.check_entropy and audit_lhs > H_prev + audit_slack:
        raise EntropyViolation(
            f"entropy audit failed at step {state_prev.k + 1}: "
            f"lhs={audit_lhs!r} rhs={H_prev!r}",
            lhs=audit_lhs,
            rhs=H_prev,
            slack=audit_lhs - H_prev,
        )

    clamps = int(np.sum(u_new < params.u_floor))
    if clamps:
        u_new = np.maximum(u_new, params.u_floor)
        z = np.log(u_new)

    mass_drift = float(np.sum(u_new - u_prev)) * h**3
    reg_mass = -(tau**2) * float(np.sum(z**3)) * h**3

    u_field = ScalarField(grid, u_new)
    stats = {
        "outer_iterations": outer,
        "newton_iterations": sum(s["newton_iterations"] for s in inner_stats),
        "cg_iterations": sum(s["cg_iterations"] for s in inner_stats),
        "final_residual": res_norm,
        "floor_clamps": clamps,
        "entropy_prev": H_prev,
        "entropy_new": H_new,
        "entropy_reg": reg,
        "entropy_flux_pairing": S,
        "entropy_audit_slack": H_prev + audit_slack - audit_lhs,
        "mass_drift": mass_drift,
        "mass_drift_regularization": reg_mass,
    }
    return StepState(
        k=state_prev.k + 1,
        t=state_prev.t + tau,
        u=u_field,
        w=ScalarField(grid, z),
        a=op.potential(u_field),
        solver_stats=stats,
    )
