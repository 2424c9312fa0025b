"""Conditional-regularity monitors: weighted Poincare checks and an iterated-moment
L-infinity estimator.

Nothing here is a proof.  The Poincare side measures the smallest constant
that makes the eps-weighted inequality hold over a sampled family of test
functions, plus per-cube ratios whose smallness is the sufficient condition.
The iterated-moment side evaluates the E_n sequence

    E_n = ( int_{T_n}^T int a eta_n^q u^{P_n} )^{1/P_n},     P_n = p (q/2)^n,

with shrinking space-time windows, extracts the per-level recursion constant
actually realized, and derives a rigorous discrete bound on sup u over the
final window from the definition of E_n alone (a discrete function's maximum
is controlled by any single quadrature cell of its P_n-th power).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CubeTooSmall, ExponentOverflow
from .grid import ScalarField, gradient

_LOG_MAX = 700.0  # exp overflow threshold for float64


@dataclass(frozen=True)
class PoincareParams:
    """Cube size, integrability exponent and test-function family for the checks."""

    cube_size: float
    exponent: float = 2.0
    epsilon: float = 0.1
    count: int = 64
    seed: int = 0
    smoothness: float = 1.0

    def __post_init__(self):
        if not self.cube_size > 0:
            raise ValueError("cube_size must be positive")
        if not self.exponent > 1:
            raise ValueError("exponent must exceed 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass
class PoincareReport:
    cube_ratios: list = field(default_factory=list)
    max_ratio: float = 0.0
    mass_moment_ratio: float = 0.0
    phi_results: list = field(default_factory=list)  # (label, int_u_phi2, rhs, C_eps)
    max_c_eps: float = 0.0


@dataclass(frozen=True)
class MoserParams:
    """Exponent ladder and space-time window for the iterated-moment monitor.

    The base exponent p and the number 5/(3p) are Holder conjugates in the
    selection pq' = 5/3, which confines p to (1, 10/9]; the Sobolev exponent
    q must stay below 10/3 for the embedding step, and the growth factor of
    the ladder is q/2 > 1.
    """

    radius: float
    horizon: float
    p: float = 10.0 / 9.0
    q: float = 3.0
    n_max: int = 6

    def __post_init__(self):
        if not 1.0 < self.p <= 10.0 / 9.0 + 1e-12:
            raise ValueError("p must lie in (1, 10/9]")
        q_conj = 5.0 / (3.0 * self.p)
        if not 1.5 <= q_conj < 5.0 / 3.0 + 1e-12:
            raise ValueError("p is inconsistent with the conjugate selection pq' = 5/3")
        if not 2.0 < self.q < 10.0 / 3.0:
            raise ValueError("q must lie in (2, 10/3)")
        if not (self.radius > 0 and self.horizon > 0):
            raise ValueError("radius and horizon must be positive")

    def P(self, n):
        """Moment exponent at level n."""
        return self.p * (self.q / 2.0) ** n

    def R(self, n):
        return (self.radius / 2.0) * (1.0 + 2.0**-n)

    def T(self, n):
        return (self.horizon / 4.0) * (2.0 - 2.0**-n)


@dataclass
class MoserReport:
    E: list
    exponents: list
    cutoff_constants: list
    recursion_constants: list
    C_meas: float
    alpha_measured: float
    tau_remainder: float
    predicted_bound: float
    measured_sup: float
    margin: float
    largest_valid_n: int


# ---------------------------------------------------------------------------
# Poincare-type checks


def small_p_ratio(u, a, params):
    """Per-cube smallness ratios |Q|^{2/3} (avg u^r)^{1/r} (avg a^{-r})^{1/r}.

    The domain is tiled with axis-aligned cubes of side ~cube_size (the last
    cube per axis absorbs the remainder).  Also computes the unconditional
    mass-moment variant |Q|^{2/3} (avg u) / (avg a).
    """
    grid = u.grid
    c = int(round(params.cube_size / grid.h))
    if params.cube_size < 2 * grid.h or c < 2:
        raise CubeTooSmall(f"cube_size {params.cube_size} is under two cells")
    n = grid.n
    edges = list(range(0, n - c + 1, c))
    if not edges:
        edges = [0]
    spans = [(s, s + c) for s in edges]
    spans[-1] = (spans[-1][0], n)  # absorb the remainder

    r = params.exponent
    report = PoincareReport()
    uv, av = u.values, a.values
    for i0, i1 in spans:
        for j0, j1 in spans:
            for k0, k1 in spans:
                block_u = uv[i0:i1, j0:j1, k0:k1]
                block_a = av[i0:i1, j0:j1, k0:k1]
                vol = block_u.size * grid.cell_volume
                avg_ur = float(np.mean(block_u**r)) ** (1.0 / r)
                avg_ar = float(np.mean(block_a**-r)) ** (1.0 / r)
                ratio = vol ** (2.0 / 3.0) * avg_ur * avg_ar
                report.cube_ratios.append(ratio)
                mm = vol ** (2.0 / 3.0) * float(np.mean(block_u)) / float(np.mean(block_a))
                report.mass_moment_ratio = max(report.mass_moment_ratio, mm)
    report.max_ratio = max(report.cube_ratios)
    return report


def _test_functions(grid, params, u):
    """Deterministic family of phi: smooth bumps, modulated bumps, u-powers."""
    rng = np.random.default_rng(params.seed)
    X, Y, Z = grid.coords()
    L = grid.half_extent
    out = []
    n_bump = params.count // 2
    n_wave = params.count - n_bump
    for i in range(n_bump):
        c = rng.uniform(-L / 2, L / 2, size=3)
        s = params.smoothness * rng.uniform(0.3, 1.0) * params.cube_size
        bump = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * s * s))
        out.append((f"bump{i}", bump))
    for i in range(n_wave):
        c = rng.uniform(-L / 2, L / 2, size=3)
        s = params.smoothness * rng.uniform(0.3, 1.0) * params.cube_size
        k = rng.uniform(0.5, 3.0, size=3) / params.cube_size
        ph = rng.uniform(0, 2 * np.pi)
        bump = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * s * s))
        wave = np.cos(k[0] * X + k[1] * Y + k[2] * Z + ph)
        out.append((f"wavebump{i}", wave * bump))
    for pw in (10.0 / 9.0, 1.5, 2.0):
        out.append((f"upow{pw:.3f}", u.values ** (pw / 2.0)))
    return out


def eps_poincare_test(u, a, params):
    """Minimal C_eps(phi) = (int u phi^2 - eps int a |grad phi|^2)_+ / int phi^2.

    A sampled-family lower bound on the true constant of the eps-weighted
    Poincare inequality; reported as a measurement, never pass/fail.
    """
    grid = u.grid
    h3 = grid.cell_volume
    report = PoincareReport()
    for label, phi in _test_functions(grid, params, u):
        f = ScalarField(grid, phi)
        gp = gradient(f).magnitude_squared()
        num = float(np.sum(u.values * phi * phi)) * h3
        grad_term = params.epsilon * float(np.sum(a.values * gp)) * h3
        denom = float(np.sum(phi * phi)) * h3
        c_eps = max(num - grad_term, 0.0) / denom
        report.phi_results.append((label, num, grad_term + c_eps * denom, c_eps))
        report.max_c_eps = max(report.max_c_eps, c_eps)
    return report


def weighted_grad_a_norm(u, a, q):
    """|| (1+|x|) grad a ||_{L^q} over the grid (gamma^{-1}-weighted norm)."""
    if not q > 3:
        raise ValueError("q must exceed 3")
    grid = a.grid
    ga = np.sqrt(gradient(a).magnitude_squared())
    wgt = 1.0 + grid.radius()
    return float(np.sum((wgt * ga) ** q) * grid.cell_volume) ** (1.0 / q)


# ---------------------------------------------------------------------------
# iterated-moment (Moser-type) monitor


def _cutoff(grid, r_out, r_in):
    """C^2 radial cutoff: 1 inside r_in, 0 outside r_out, quintic smoothstep."""
    r = grid.radius()
    s = np.clip((r_out - r) / max(r_out - r_in, 1e-300), 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def moser_sequence(trajectory, params):
    """Evaluate the E_n ladder on a trajectory and bound sup u a posteriori.

    For each level the space-time integral uses the run's own piecewise-
    constant-in-time interpolation (weight = overlap of (t_{k-1}, t_k] with
    (T_n, T]).  The predicted bound chains the worst realized recursion
    constant C_meas through all levels and converts the final E_n into a sup
    bound via

        sup_W u <= E_n * (inf_W a * h^3 * dt_min)^{-1/P_n},

    where W = B_{R/2} x (T/2, T]: the maximizing sample contributes at least
    one quadrature cell to the integral defining E_n (eta = 1 on W), so the
    bound is exact for the discrete quadrature, not asymptotic.
    """
    p, q = params.p, params.q
    T = params.horizon
    grid = trajectory[0].u.grid
    h3 = grid.cell_volume

    # time-quadrature weights per level
    times = [st.t for st in trajectory]
    taus = np.diff(times)
    if len(taus) == 0 or np.any(taus <= 0):
        raise ValueError("trajectory must contain increasing times past t=0")

    logs = [np.log(st.u.values) for st in trajectory[1:]]
    E = []
    cutoff_consts = []
    largest_valid = -1
    overflow_at = None
    for nlev in range(params.n_max + 1):
        Pn = params.P(nlev)
        eta = _cutoff(grid, params.R(nlev), params.R(nlev + 1))
        # measured gradient constant of |grad eta| <= c/(R_n - R_{n+1})
        geta = np.sqrt(gradient(ScalarField(grid, eta)).magnitude_squared())
        cutoff_consts.append(float(np.max(geta)) * (params.R(nlev) - params.R(nlev + 1)))
        Tn = params.T(nlev)
        total = 0.0
        ok = True
        for idx, st in enumerate(trajectory[1:]):
            wdt = min(st.t, T) - max(times[idx], Tn)
            wdt = min(wdt, taus[idx])
            if wdt <= 0:
                continue
            lg = logs[idx]
            if Pn * float(np.max(lg)) > _LOG_MAX:
                ok = False
                break
            upow = np.exp(Pn * lg)
            total += wdt * float(np.sum(st.a.values * eta**q * upow)) * h3
        if not ok:
            overflow_at = nlev
            break
        E.append(total ** (1.0 / Pn))
        largest_valid = nlev

    if largest_valid < 0:
        raise ExponentOverflow(
            "u-power overflows float64 already at level 0", largest_valid_n=-1
        )

    # realized recursion constants: E_{n+1} <= [2^n C (1/T + 1)]^{1/P_n} E_n
    exps = [1.0 / params.P(i) for i in range(largest_valid + 1)]
    rec_consts = []
    for i in range(len(E) - 1):
        if E[i] <= 0:
            continue
        rec_consts.append(
            (E[i + 1] / E[i]) ** params.P(i) / (2.0**i * (1.0 / T + 1.0))
        )
    C_meas = max(rec_consts) if rec_consts else 0.0

    # geometric-sum exponent alpha = sum of (1/p)(2/q)^j over the levels used
    alpha_measured = float(sum((1.0 / p) * (2.0 / q) ** j for j in range(1, largest_valid + 1)))

    # tau-dependent remainder: sum of tau^{1/P_i} with the run's largest tau
    tau_run = float(np.max(taus))
    tau_remainder = float(sum(tau_run ** (1.0 / params.P(i)) for i in range(1, largest_valid + 1)))

    # envelope through the recursion with the worst realized constant
    env = E[0]
    for i in range(largest_valid):
        env = (2.0**i * max(C_meas, 1e-300) * (1.0 / T + 1.0)) ** (1.0 / params.P(i)) * env
    env = max(env, E[largest_valid])

    # rigorous discrete conversion to a sup bound on the final window
    r_half = params.radius / 2.0
    in_ball = grid.radius() < r_half
    sup_u = 0.0
    inf_a = np.inf
    dt_min = np.inf
    for idx, st in enumerate(trajectory[1:]):
        wdt = min(st.t, T) - max(times[idx], T / 2.0)
        wdt = min(wdt, taus[idx])
        if wdt <= 0:
            continue
        sup_u = max(sup_u, float(np.max(st.u.values[in_ball])))
        inf_a = min(inf_a, float(np.min(st.a.values[in_ball])))
        dt_min = min(dt_min, wdt)
    e_last = 1.0 / params.P(largest_valid)
    predicted = env * (inf_a * h3 * dt_min) ** (-e_last)

    report = MoserReport(
        E=E,
        exponents=[params.P(i) for i in range(largest_valid + 1)],
        cutoff_constants=cutoff_consts[: largest_valid + 1],
        recursion_constants=rec_consts,
        C_meas=C_meas,
        alpha_measured=alpha_measured,
        tau_remainder=tau_remainder,
        predicted_bound=predicted,
        measured_sup=sup_u,
        margin=predicted - sup_u,
        largest_valid_n=largest_valid,
    )
    if overflow_at is not None:
        raise ExponentOverflow(
            f"u-power overflows float64 at level {overflow_at}",
            largest_valid_n=largest_valid,
            partial=report,
        )
    return report
