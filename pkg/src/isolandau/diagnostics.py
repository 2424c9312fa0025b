"""Monitored quantities and inequality audits for a running simulation.

Every audit is a two-sided measurement: both sides of each inequality are
computed numerically from the current (and previous) state, and the signed
slack rhs - lhs is recorded.  Constants that the underlying estimates leave
unspecified are measured at t = 0 and tracked, never assumed.

Kernel convention: the potential a carries the 1/(4 pi) Newtonian factor
everywhere.  Audits whose classical statement is written for the bare 1/|x|
kernel (the pointwise lower bound on a, the dissipation expansion) rescale by
4 pi explicitly where noted.
"""

from dataclasses import dataclass, field

import numpy as np

from .coulomb import FOUR_PI
from .errors import GridTooLarge, ZeroMassError
from .grid import ScalarField, VectorField, Weight, gradient, weighted_integral

_DOUBLE_SUM_CAP = 17**3


def moments(u):
    """Mass, second moment and the concentration radius R = min(sqrt(2E/m), L)."""
    m = weighted_integral(u)
    if m <= 0:
        raise ZeroMassError("density has non-positive total mass")
    E = weighted_integral(u, Weight("second_moment"))
    R = min(float(np.sqrt(2.0 * E / m)), u.grid.half_extent)
    return m, E, R


def entropy(u):
    """H = sum u (log u - 1) h^3 and H_plain = sum u log u h^3, 0 log 0 = 0."""
    v = u.values
    with np.errstate(divide="ignore", invalid="ignore"):
        ulogu = np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)
    hp = float(np.sum(ulogu)) * u.grid.cell_volume
    return hp - weighted_integral(u), hp


def fisher_weighted(u):
    """sum |grad sqrt(u)|^2 / (1 + |x|) h^3."""
    root = ScalarField(u.grid, np.sqrt(u.values))
    return weighted_integral(
        ScalarField(u.grid, gradient(root).magnitude_squared()), Weight("gamma")
    )


def dissipation(u, op, method="convolution"):
    """Entropy dissipation D = (1/2) iint u(x)u(y) K(x-y) |grad w(x) - grad w(y)|^2.

    K is the 1/(4 pi |x-y|) kernel with the same regularized self-cell value
    as the Coulomb operator, and w = log u.  'double_sum' evaluates the
    quadratic form directly (O(N^2), small grids); 'convolution' uses the
    algebraic expansion D = int u |grad w|^2 a[u] - int u grad w . b[u grad w]
    with one scalar and three vector Coulomb solves.  Both routes sum the
    same discrete kernel, so they agree to rounding.
    """
    grid = u.grid
    w = ScalarField(grid, np.log(u.values))
    g = gradient(w)
    if method == "convolution":
        a = op.potential(u)
        t1 = weighted_integral(
            ScalarField(grid, u.values * g.magnitude_squared() * a.values)
        )
        ug = VectorField(grid, u.values[None] * g.components)
        b = op.vector_potential(ug)
        t2 = weighted_integral(
            ScalarField(grid, u.values * np.sum(g.components * b.components, axis=0))
        )
        return t1 - t2
    if method != "double_sum":
        raise ValueError(f"unknown dissipation method {method!r}")

    n = grid.n
    if n**3 > _DOUBLE_SUM_CAP:
        raise GridTooLarge(f"double_sum dissipation capped at {_DOUBLE_SUM_CAP} nodes")
    from .coulomb import self_interaction_value

    h = grid.h
    ax = grid.axis()
    X, Y, Z = grid.coords()
    pos = np.stack([X, Y, Z]).reshape(3, -1)
    uu = u.values.reshape(-1)
    gg = g.components.reshape(3, -1)
    total = 0.0
    chunk = max(1, 2**22 // uu.size)
    for start in range(0, uu.size, chunk):
        sl = slice(start, min(start + chunk, uu.size))
        d = pos[:, sl, None] - pos[:, None, :]
        r = np.sqrt(np.sum(d * d, axis=0))
        with np.errstate(divide="ignore"):
            K = 1.0 / (FOUR_PI * r)
        K[r == 0] = self_interaction_value(h)
        dg = np.sum((gg[:, sl, None] - gg[:, None, :]) ** 2, axis=0)
        total += float(np.sum((uu[sl, None] * uu[None, :]) * K * dg))
    return 0.5 * total * h**6


@dataclass
class AuditResult:
    name: str
    passed: bool
    slack: float
    lhs: float
    rhs: float


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    second_moment: float
    entropy: float
    entropy_plain: float
    dissipation: float
    fisher_weighted: float
    min_u: float
    max_u: float
    a_min_margin: float
    odd_integral_norm: float
    a_L3_local: float
    grad_a_L32_local: float
    weighted_l1l3_running: float
    weighted_l53_running: float
    inequality_audits: dict = field(default_factory=dict)


#: CSV column order; audits append "slack_<name>" columns in this order.
AUDIT_NAMES = (
    "entropy_inequality",
    "odd_integral",
    "second_moment_step",
    "entropy_lower",
    "a_lower",
    "weighted_L1L3",
    "a_regularity",
)


class DiagnosticsEngine:
    """Per-run audit state: measured constants from t = 0 and running integrals.

    Parameters
    ----------
    state0 : StepState at t = 0.
    op : CoulombOperator used by the run.
    c_eps_safety : headroom factor on the entropy lower-bound constant, which
        is measured exactly at t = 0 and would otherwise start with zero slack.
    reference_ball : radius for the local norms of a; defaults to L/2.
    dissipation_method : passed through to `dissipation`.
    """

    def __init__(
        self,
        state0,
        op,
        c_eps_safety=2.0,
        epsilon=0.2,
        reference_ball=None,
        dissipation_method="convolution",
    ):
        grid = state0.u.grid
        self.op = op
        self.grid = grid
        self.epsilon = epsilon
        self.method = dissipation_method
        self.R_ref = grid.half_extent / 2.0 if reference_ball is None else reference_ball
        self._gamma = Weight("gamma").evaluate(grid)
        self._r = grid.radius()
        self._ball = self._r < self.R_ref
        m0, E0, _ = moments(state0.u)
        H0, _ = entropy(state0.u)
        # Entropy lower-bound constant via the splitting u < 1 / u >= 1 and
        # discrete Holder: -H <= m + K sqrt(m) I^{eps/2} (m+E)^{(1-eps)/2},
        # K = sup_{s<1} s^{eps/2} log(1/s) = 2/(e eps), I the grid sum of
        # (1+|x|^2)^{-(1-eps)/eps} (finite for eps < 2/5).  Every factor is
        # measured, so the audit checks an exact discrete inequality; the
        # safety factor only absorbs mass drift between steps.
        self._K_eps = 2.0 / (np.e * epsilon)
        self._I_eps = float(
            np.sum((1.0 + self._r**2) ** (-(1.0 - epsilon) / epsilon))
        ) * grid.cell_volume
        self._c_eps_safety = c_eps_safety
        rhs0 = m0 + self._K_eps * np.sqrt(m0) * self._I_eps ** (epsilon / 2.0) * (
            m0 + E0
        ) ** ((1.0 - epsilon) / 2.0)
        self.C_eps = rhs0 / (1.0 + E0) ** ((1.0 - epsilon) / 2.0)
        self.l1l3 = 0.0
        self.l53 = 0.0
        self.records = []

    # -- serializable accumulator state (for resume) -------------------------

    def get_state(self):
        return {"C_eps": self.C_eps, "l1l3": self.l1l3, "l53": self.l53}

    def set_state(self, s):
        self.C_eps = s["C_eps"]
        self.l1l3 = s["l1l3"]
        self.l53 = s["l53"]

    # -- the audit ----------------------------------------------------------

    def record(self, state, prev_state=None):
        """Compute the DiagnosticsRecord for `state` and run all audits.

        Step audits (a), (c) need the previous state; at t = 0 they are
        recorded as passing with zero slack.  Audits never raise: failures
        are stored with their measured slack.
        """
        grid = self.grid
        h3 = grid.cell_volume
        u = state.u.values
        a = state.a.values
        w = state.w.values
        m, E, R = moments(state.u)
        H, Hp = entropy(state.u)
        D = dissipation(state.u, self.op, self.method)
        fw = fisher_weighted(state.u)
        gam = self._gamma

        gw = gradient(state.w).components
        gu = gradient(state.u).components

        audits = {}

        def add(name, slack, lhs, rhs, tol=0.0):
            audits[name] = AuditResult(name, bool(slack >= -tol), float(slack), float(lhs), float(rhs))

        # (b) odd integral: |int grad(u) gamma dx|, zero for even u
        odd_vec = np.array([np.sum(gu[i] * gam) * h3 for i in range(3)])
        odd_norm = float(np.linalg.norm(odd_vec))
        tol_b = 1e-10 * m / grid.half_extent
        add("odd_integral", tol_b - odd_norm, odd_norm, tol_b)

        # (e) pointwise lower bound on a; the classical statement is for the
        # bare kernel, hence the 4 pi rescaling.  mass within R >= m/2 by the
        # Chebyshev choice of R.
        mass_in_R = float(np.sum(u[self._r < R])) * h3
        half_mass = 0.5 * m
        lhs_e = float(np.min(FOUR_PI * a * (R + self._r)))
        add("a_lower", lhs_e - half_mass, half_mass, lhs_e)
        a_min_margin = lhs_e - 0.5 * mass_in_R

        # (d) entropy lower bound -H <= C_eps (1+E)^{(1-eps)/2}, with the
        # tracked constant re-derived from the current mass (see __init__)
        pw = (1.0 - self.epsilon) / 2.0
        rhs_d = m + self._K_eps * np.sqrt(m) * self._I_eps ** (self.epsilon / 2.0) * (
            m + E
        ) ** pw
        add("entropy_lower", rhs_d - (-H), -H, rhs_d)

        # (g) local norms of a on the reference ball
        aL3 = float(np.sum(a[self._ball] ** 3) * h3) ** (1.0 / 3.0)
        ga = gradient(state.a).magnitude_squared()
        gL32 = float(np.sum(ga[self._ball] ** 0.75) * h3) ** (2.0 / 3.0)
        add("a_regularity", 1.0, aL3, gL32)  # monitored, not gated

        # (f) running weighted integrals (monitored, not gated)
        if prev_state is not None:
            dt = state.t - prev_state.t
            self.l1l3 += dt * float(np.sum((u * gam) ** 3) * h3) ** (1.0 / 3.0)
            self.l53 += dt * float(np.sum(gam ** (-1.0 / 3.0) * u ** (5.0 / 3.0)) * h3)
        add("weighted_L1L3", 1.0, self.l1l3, self.l53)

        if prev_state is None:
            add("entropy_inequality", 0.0, 0.0, 0.0)
            add("second_moment_step", 0.0, 0.0, 0.0)
        else:
            tau = state.t - prev_state.t
            H_prev, _ = entropy(prev_state.u)
            m_prev, E_prev, R_prev = moments(prev_state.u)

            # (a) dissipation chain: -D_tau H >= [ (int u gamma)(int u gamma
            # |grad w|^2) - |int u gamma grad w|^2 ] / (4 pi), the
            # Cauchy-Schwarz expansion of the gamma-gamma lower bound on D,
            # plus the half-mass lower bound on int u gamma.
            dH = (H - H_prev) / tau
            int_ug = float(np.sum(u * gam)) * h3
            int_ugw2 = float(np.sum(u * gam * np.sum(gw * gw, axis=0))) * h3
            odd_w = np.array([np.sum(u * gam * gw[i]) * h3 for i in range(3)])
            lower = (int_ug * int_ugw2 - float(np.dot(odd_w, odd_w))) / FOUR_PI
            slack_chain = -dH - lower
            low1 = int_ug - 0.5 * m / (1.0 + R)
            add(
                "entropy_inequality",
                min(slack_chain, low1),
                lower,
                -dH,
                tol=1e-9 * max(1.0, abs(dH)),
            )

            # (c) second moment step: D_tau E <= C_meas + 2 int a u, with the
            # regularization contribution C_meas measured from the step.
            dE = (E - E_prev) / tau
            reg_c = state.solver_stats.get("second_moment_reg")
            if reg_c is None:
                from .scheme import quartic_functional

                _, p4 = quartic_functional(w, grid.h)
                reg_c = -tau * float(np.sum((w**3 + p4) * self._r**2)) * h3
            rhs_c = reg_c + 2.0 * float(np.sum(a * u)) * h3
            add("second_moment_step", rhs_c - dE, dE, rhs_c, tol=1e-9 * max(1.0, abs(dE)))

        rec = DiagnosticsRecord(
            t=state.t,
            mass=m,
            second_moment=E,
            entropy=H,
            entropy_plain=Hp,
            dissipation=D,
            fisher_weighted=fw,
            min_u=float(np.min(u)),
            max_u=float(np.max(u)),
            a_min_margin=float(a_min_margin),
            odd_integral_norm=odd_norm,
            a_L3_local=aL3,
            grad_a_L32_local=gL32,
            weighted_l1l3_running=self.l1l3,
            weighted_l53_running=self.l53,
            inequality_audits=audits,
        )
        self.records.append(rec)
        return rec
