"""Receding-horizon platoon control as dense convex quadratic programs.

The horizon couples AV kinematics, the linear ARX chain of the HV, and the
HV position mean/variance propagation. GP terms are frozen along the
previous solution's trajectory (one sparse batch prediction per control
step), so every solve is a convex QP over the stacked AV accelerations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import GapConstraintParams, tightened_min_gap
from .hv import ArxParams, N_LAGS, VelocityHistory
from .qp import QuadraticProgram, solve_qp


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights, bounds and gap parameters of the platoon MPC."""

    horizon: int = 20
    step: float = 0.1
    q1: float = 5.0
    q2: float = 5.0
    r: float = 10.0
    v_min: float = 0.0
    v_max: float = 37.0
    acc_min: float = -4.0
    acc_max: float = 4.0
    av_gap: float = 10.0
    gap: GapConstraintParams = field(
        default_factory=lambda: GapConstraintParams(delta=10.0, delta_ext=0.0,
                                                    p_def=0.95))
    n_av: int = 2

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not (self.v_min < self.v_max and self.acc_min < self.acc_max):
            raise ValueError("bounds must be ordered")
        if min(self.q1, self.q2, self.r) <= 0:
            raise ValueError("cost weights must be positive")
        if self.n_av < 1:
            raise ValueError("platoon needs at least one AV")
        if self.step <= 0 or self.step >= 1:
            raise ValueError("sample time must lie in (0, 1)")
        if self.av_gap <= 0:
            raise ValueError("AV spacing bound must be positive")


@dataclass(frozen=True)
class PlatoonState:
    """Measured platoon state: AV kinematics plus the HV belief."""

    av_pos: np.ndarray
    av_vel: np.ndarray
    hv_pos: float
    history: VelocityHistory
    hv_pos_var: float = 0.0

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.av_pos, dtype=float))
        v = np.atleast_1d(np.asarray(self.av_vel, dtype=float))
        object.__setattr__(self, "av_pos", p)
        object.__setattr__(self, "av_vel", v)
        if p.shape != v.shape or p.ndim != 1:
            raise ValueError("av_pos and av_vel must be equal-length vectors")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))
                and np.isfinite(self.hv_pos)):
            raise ValueError("platoon state must be finite")
        if self.hv_pos_var < 0:
            raise ValueError("hv_pos_var must be non-negative")

    @property
    def n_av(self) -> int:
        return self.av_pos.size


@dataclass(frozen=True)
class FrozenGpTrajectory:
    """Per-stage GP correction terms frozen for one QP solve."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        v = np.atleast_1d(np.asarray(self.var, dtype=float))
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "var", v)
        if m.shape != v.shape or m.ndim != 1:
            raise ValueError("mean and var must be equal-length vectors")
        if np.any(v < 0):
            raise ValueError("frozen variances must be non-negative")

    @classmethod
    def zeros(cls, horizon: int) -> "FrozenGpTrajectory":
        return cls(mean=np.zeros(horizon), var=np.zeros(horizon))


@dataclass(frozen=True)
class MpcSolution:
    """Optimal plan with predicted trajectories and solver diagnostics."""

    acc: np.ndarray             # (n_av, N)
    av_vel: np.ndarray          # (n_av, N), stages k+1..k+N
    av_pos: np.ndarray          # (n_av, N)
    hv_vel: np.ndarray          # (N,), ARX chain stages k+1..k+N
    hv_pos_mean: np.ndarray     # (N,), stages k+1..k+N
    hv_pos_var: np.ndarray      # (N,), constrained stages k+2..k+N+1
    gap_bounds: np.ndarray      # (N,), AV-HV bounds at stages k+2..k+N+1
    stage_pairs: np.ndarray     # (N, 2), GP anchor pairs of this solve
    status: str
    iterations: int
    solve_time: float
    cost: float
    active: tuple = ()
    fallback: bool = False


def evaluate_gp_along_trajectory(gp, prev, horizon: int,
                                 include_noise: bool = True) -> FrozenGpTrajectory:
    """Freeze GP terms along the previous solution (one batch prediction).

    ``prev`` is the previous :class:`MpcSolution`; at the first control step
    a :class:`PlatoonState` is accepted and its measured current pair is
    replicated across the horizon. Stage i is evaluated at the previous
    solution's stage i+1 pair (receding-horizon shift) with the last pair
    repeated. With ``include_noise`` the frozen variances carry the model's
    learned noise variance on top of the latent GP variance, so the
    propagated position uncertainty covers realized one-step velocity
    scatter, not just correction-function uncertainty.
    """
    if isinstance(prev, MpcSolution):
        pairs = np.vstack([prev.stage_pairs[1:], prev.stage_pairs[-1:]])
        if pairs.shape[0] != horizon:
            raise ValueError("previous solution horizon does not match")
    elif isinstance(prev, PlatoonState):
        current = np.array([prev.history.hv[0], prev.history.av[0]])
        pairs = np.tile(current, (horizon, 1))
    else:
        raise TypeError("prev must be an MpcSolution or a PlatoonState")
    mean, var = gp.predict_batch(pairs)
    if include_noise:
        var = var + gp.hyper.noise_variance
    return FrozenGpTrajectory(mean=mean, var=var)


@dataclass(frozen=True)
class CondensedQp:
    """Dense QP plus the affine maps needed to decode a solution."""

    qp: QuadraticProgram
    cfg: MpcConfig
    v0: np.ndarray
    p0: np.ndarray
    hv_const: np.ndarray
    hv_lin: np.ndarray
    mu_const: np.ndarray
    mu_lin: np.ndarray
    sigma: np.ndarray
    gap_bounds: np.ndarray
    cost_const: float

    def decode(self, x: np.ndarray):
        """Stage trajectories implied by a stacked acceleration vector."""
        cfg = self.cfg
        n, nav, t = cfg.horizon, cfg.n_av, cfg.step
        s_mat = np.tril(np.ones((n, n)))
        w_mat = _position_map(n)
        stages = np.arange(1, n + 1)
        acc = x.reshape(nav, n)
        av_vel = self.v0[:, None] + t * (s_mat @ acc.T).T
        av_pos = (self.p0[:, None] + np.outer(self.v0, stages) * t
                  + t * t * (w_mat @ acc.T).T)
        hv_vel = self.hv_const + self.hv_lin @ x
        mu = self.mu_const[:n] + self.mu_lin[:n] @ x
        return acc, av_vel, av_pos, hv_vel, mu


def _position_map(n: int) -> np.ndarray:
    """W with W[s-1, m] = s-1-m for m <= s-2: positions from accelerations."""
    w = np.zeros((n, n))
    for s in range(2, n + 1):
        w[s - 1, : s - 1] = np.arange(s - 1, 0, -1)
    return w


def condense(state: PlatoonState, cfg: MpcConfig, v_ref,
             frozen: FrozenGpTrajectory | None = None,
             arx: ArxParams | None = None) -> CondensedQp:
    """Reduce one horizon to a dense QP over stacked AV accelerations.

    With ``frozen`` set, the HV mean chain gains the frozen correction means,
    the position variance accumulates the frozen variances, and the AV-HV
    gap bound is tightened accordingly; without it the nominal fixed-gap
    program is produced. Position constraints cover stages k+2..k+N+1: the
    one-step-ahead positions are fixed by the measured state, so
    constraining them adds no control authority and an unavoidable
    millimetre incursion there would falsely mark the program infeasible.
    """
    arx = arx or ArxParams.default()
    n, nav, t = cfg.horizon, cfg.n_av, cfg.step
    if state.n_av != nav:
        raise ValueError(f"state has {state.n_av} AVs but config expects {nav}")
    ref = np.atleast_1d(np.asarray(v_ref, dtype=float))
    if ref.shape != (n,):
        raise ValueError(f"v_ref must supply {n} stages, got {ref.shape}")
    nd = nav * n
    v0, p0 = state.av_vel, state.av_pos
    hist = state.history
    s_mat = np.tril(np.ones((n, n)))
    w_mat = _position_map(n)
    last = (nav - 1) * n
    stages = np.arange(1, n + 1)

    # HV velocity chain: affine in the trailing AV's accelerations
    hv_const = np.zeros(n)
    hv_lin = np.zeros((n, nd))
    for s in range(1, n + 1):
        const = 0.0
        lin = np.zeros(nd)
        for q in range(1, N_LAGS + 1):
            i = s - q
            cq, bq = arx.c[q - 1], arx.b[q - 1]
            if i >= 1:
                const += -cq * hv_const[i - 1]
                lin += -cq * hv_lin[i - 1]
                const += bq * v0[nav - 1]
                lin[last: last + n] += bq * t * s_mat[i - 1]
            else:
                const += -cq * hist.hv[-i]
                const += bq * hist.av[-i]
        hv_const[s - 1] = const
        hv_lin[s - 1] = lin

    fz = frozen if frozen is not None else FrozenGpTrajectory.zeros(n)
    if fz.mean.size != n:
        raise ValueError(f"frozen trajectory must supply {n} stages")

    # HV position mean chain over stages k+1..k+N+1; the first increment uses
    # the measured velocity and the final one repeats the last frozen term
    mu_const = np.zeros(n + 1)
    mu_lin = np.zeros((n + 1, nd))
    run_c = state.hv_pos + t * hist.hv[0] + t * fz.mean[0]
    run_l = np.zeros(nd)
    mu_const[0] = run_c
    for s in range(2, n + 2):
        run_c = run_c + t * hv_const[s - 2] + t * fz.mean[min(s - 1, n - 1)]
        run_l = run_l + t * hv_lin[s - 2]
        mu_const[s - 1] = run_c
        mu_lin[s - 1] = run_l.copy()

    var_ext = np.concatenate([fz.var, fz.var[-1:]])
    sigma_all = state.hv_pos_var + t * t * np.cumsum(var_ext)
    # positions one step ahead are fixed by the measured state, so gap
    # constraints cover the controllable stages k+2..k+N+1
    sigma = sigma_all[1:]
    if frozen is not None:
        bounds = np.array([tightened_min_gap(cfg.gap, sig) for sig in sigma])
    else:
        bounds = np.full(n, cfg.gap.delta)

    # cost: acceleration effort, leader reference tracking, follower matching
    p_cost = np.zeros((nd, nd))
    q_cost = np.zeros(nd)
    c0 = 0.0
    p_cost[np.diag_indices(nd)] += 2.0 * cfg.r

    def add_quadratic(rows, consts, weight):
        nonlocal c0
        p_cost[...] += 2.0 * weight * rows.T @ rows
        q_cost[...] += 2.0 * weight * rows.T @ consts
        c0 += weight * float(consts @ consts)

    # velocity stages k+1..k+N plus the written (N+1)-th stage, which under
    # a zero-held terminal input repeats the terminal velocity and reference
    m_lead = np.zeros((n + 1, nd))
    m_lead[:n, :n] = t * s_mat
    m_lead[n] = m_lead[n - 1]
    e_lead = np.concatenate([v0[0] - ref, [v0[0] - ref[-1]]])
    add_quadratic(m_lead, e_lead, cfg.q1)
    for j in range(1, nav):
        m_f = np.zeros((n + 1, nd))
        m_f[:n, j * n:(j + 1) * n] = t * s_mat
        m_f[:n, (j - 1) * n: j * n] = -t * s_mat
        m_f[n] = m_f[n - 1]
        e_f = np.full(n + 1, v0[j] - v0[j - 1])
        add_quadratic(m_f, e_f, cfg.q2)

    # inequalities: AV-AV gaps, AV-HV gap (stages k+2..k+N+1), velocity and
    # acceleration boxes (stages k+1..k+N)
    w_ext = _position_map(n + 1)[1:, :n]
    s_pos = np.arange(2, n + 2)
    n_rows = n * (nav - 1) + n + 4 * n * nav
    g_mat = np.zeros((n_rows, nd))
    h_vec = np.zeros(n_rows)
    row = 0
    for j in range(1, nav):
        blk = slice(row, row + n)
        g_mat[blk, (j - 1) * n: j * n] = -t * t * w_ext
        g_mat[blk, j * n:(j + 1) * n] = t * t * w_ext
        h_vec[blk] = (p0[j - 1] - p0[j]) + s_pos * t * (v0[j - 1] - v0[j]) - cfg.av_gap
        row += n
    blk = slice(row, row + n)
    g_mat[blk, last: last + n] = -t * t * w_ext
    g_mat[blk] += mu_lin[1:]
    h_vec[blk] = p0[nav - 1] + s_pos * t * v0[nav - 1] - mu_const[1:] - bounds
    row += n
    for j in range(nav):
        blk = slice(row, row + n)
        g_mat[blk, j * n:(j + 1) * n] = t * s_mat
        h_vec[blk] = cfg.v_max - v0[j]
        row += n
    for j in range(nav):
        blk = slice(row, row + n)
        g_mat[blk, j * n:(j + 1) * n] = -t * s_mat
        h_vec[blk] = v0[j] - cfg.v_min
        row += n
    for j in range(nav):
        blk = slice(row, row + n)
        g_mat[blk, j * n:(j + 1) * n] = np.eye(n)
        h_vec[blk] = cfg.acc_max
        row += n
    for j in range(nav):
        blk = slice(row, row + n)
        g_mat[blk, j * n:(j + 1) * n] = -np.eye(n)
        h_vec[blk] = -cfg.acc_min
        row += n

    qp = QuadraticProgram(cost_matrix=p_cost, cost_vector=q_cost,
                          ineq_matrix=g_mat, ineq_vector=h_vec)
    return CondensedQp(qp=qp, cfg=cfg, v0=v0, p0=p0, hv_const=hv_const,
                       hv_lin=hv_lin, mu_const=mu_const, mu_lin=mu_lin,
                       sigma=sigma, gap_bounds=bounds, cost_const=c0)


def build_nominal_qp(state: PlatoonState, cfg: MpcConfig, v_ref) -> QuadraticProgram:
    """Fixed-gap program using the ARX chain without GP terms."""
    return condense(state, cfg, v_ref, frozen=None).qp


def build_gp_qp(state: PlatoonState, frozen: FrozenGpTrajectory, cfg: MpcConfig,
                v_ref) -> QuadraticProgram:
    """Uncertainty-aware program with frozen GP means and tightened gaps."""
    return condense(state, cfg, v_ref, frozen=frozen).qp


class PlatoonController:
    """Stateful receding-horizon controller (nominal or GP mode).

    One instance is single-threaded: it keeps the previous solution for the
    frozen GP evaluation and reuses its active set to warm-start the next
    solve. The shared sparse GP model is only read.
    """

    def __init__(self, cfg: MpcConfig, mode: str = "nominal", gp_model=None,
                 arx: ArxParams | None = None, solver_tol: float = 1e-6,
                 include_noise_variance: bool = True, frozen_override=None):
        if mode not in ("nominal", "gp"):
            raise ValueError(f"unknown controller mode {mode!r}")
        if mode == "gp" and gp_model is None and frozen_override is None:
            raise ValueError("gp mode requires a trained sparse GP model")
        self.cfg = cfg
        self.mode = mode
        self.gp_model = gp_model
        self.arx = arx or ArxParams.default()
        self.solver_tol = solver_tol
        self.include_noise_variance = include_noise_variance
        self.frozen_override = frozen_override
        self.prev_solution: MpcSolution | None = None
        self.gp_batch_evals = 0
        self.fallback_count = 0

    def reset(self):
        self.prev_solution = None

    def shifted_warm_start(self) -> np.ndarray | None:
        """Previous acceleration plan shifted one stage, last stage held."""
        if self.prev_solution is None:
            return None
        acc = self.prev_solution.acc
        shifted = np.hstack([acc[:, 1:], acc[:, -1:]])
        return shifted.ravel()

    def _frozen(self, state: PlatoonState) -> FrozenGpTrajectory | None:
        if self.mode == "nominal":
            return None
        if self.frozen_override is not None:
            return self.frozen_override
        prev = self.prev_solution if self.prev_solution is not None else state
        self.gp_batch_evals += 1
        return evaluate_gp_along_trajectory(self.gp_model, prev, self.cfg.horizon,
                                            include_noise=self.include_noise_variance)

    def _fallback(self, state: PlatoonState, cd: CondensedQp, res) -> MpcSolution:
        self.fallback_count += 1
        self.prev_solution = None
        n, nav = self.cfg.horizon, self.cfg.n_av
        acc = np.full((nav, n), self.cfg.acc_min)
        _, av_vel, av_pos, hv_vel, mu = cd.decode(acc.ravel())
        pairs = _stage_pairs(state, hv_vel, av_vel[nav - 1], n)
        return MpcSolution(acc=acc, av_vel=av_vel, av_pos=av_pos, hv_vel=hv_vel,
                           hv_pos_mean=mu, hv_pos_var=cd.sigma,
                           gap_bounds=cd.gap_bounds, stage_pairs=pairs,
                           status=res.status, iterations=res.iterations,
                           solve_time=res.solve_time, cost=np.nan,
                           active=(), fallback=True)

    def step(self, state: PlatoonState, v_ref):
        """One control step: returns (first-stage accelerations, solution)."""
        frozen = self._frozen(state)
        cd = condense(state, self.cfg, v_ref, frozen=frozen, arx=self.arx)
        hint = self.prev_solution.active if self.prev_solution is not None else None
        res = solve_qp(cd.qp, tol=self.solver_tol, active_hint=hint)
        if res.status != "optimal":
            sol = self._fallback(state, cd, res)
            return sol.acc[:, 0].copy(), sol
        acc, av_vel, av_pos, hv_vel, mu = cd.decode(res.x)
        pairs = _stage_pairs(state, hv_vel, av_vel[self.cfg.n_av - 1],
                             self.cfg.horizon)
        sol = MpcSolution(acc=acc, av_vel=av_vel, av_pos=av_pos, hv_vel=hv_vel,
                          hv_pos_mean=mu, hv_pos_var=cd.sigma,
                          gap_bounds=cd.gap_bounds, stage_pairs=pairs,
                          status=res.status, iterations=res.iterations,
                          solve_time=res.solve_time,
                          cost=cd.qp.objective(res.x) + cd.cost_const,
                          active=res.active, fallback=False)
        self.prev_solution = sol
        return acc[:, 0].copy(), sol


def _stage_pairs(state: PlatoonState, hv_vel, av_vel_last, horizon: int) -> np.ndarray:
    """GP anchor pairs of one solve: lag-1 and current measured pairs, then
    planned pairs through stage N-2."""
    pairs = np.empty((horizon, 2))
    pairs[0] = (state.history.hv[1], state.history.av[1])
    pairs[1] = (state.history.hv[0], state.history.av[0])
    if horizon > 2:
        pairs[2:, 0] = hv_vel[: horizon - 2]
        pairs[2:, 1] = av_vel_last[: horizon - 2]
    return pairs
