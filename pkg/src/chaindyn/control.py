"""Port decomposition and the three sliding-surface control laws.

The dynamics split into a structurally known part and an external
interaction port tau (the stacked per-body forces and moments).  Each law
commands a desired port value

    tau_c = M dnu_r/dt + C(nu) nu_r - F_gj - K_d s,      s = nu - nu_r

with a mode-specific reference velocity nu_r: the desired twist itself
(velocity tracking), the desired twist minus a pose-error feedback (pose
tracking), or a mass-weighted task-space resolution with a null-space
obstacle-avoidance term (end-effector tracking).  F_gj collects gravity and
the joint spring moments so the port command cancels them exactly.

Along the ideal closed loop (tau realized exactly) the error energy
V = 0.5 s^T M s obeys dV/dt = -s^T K_d s whenever J s = 0; the norm of
J s is reported in every command so that assumption is monitored, never
silently trusted.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .assembly import AssembledSystem, _mass_inverse_apply
from .errors import BodyInsideObstacle, FeasibilityError, TaskSingular
from .model import ChainState


def _check_spd(name: str, mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got {mat.shape}")
    if np.max(np.abs(mat - mat.T)) > 1e-10 * max(1.0, np.max(np.abs(mat))):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat)[0] <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    return mat


@dataclass(frozen=True, eq=False)
class Obstacle:
    """Sphere to keep clear of: center [m], radius [m], repulsion gain."""

    center: np.ndarray
    radius: float
    gain: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "gain", float(self.gain))


@dataclass(eq=False)
class ControllerConfig:
    """Gains and options for one controller mode.

    ``kd`` is the 6N x 6N sliding-surface gain (SPD).  ``lam`` weights the
    pose error into the sliding surface (pose mode, 6N x 6N SPD);
    ``lam_task`` is its 6 x 6 task-space counterpart.  Scalars are accepted
    and expanded to isotropic matrices by :func:`make_controller_config`.
    """

    mode: str                      # "velocity" | "pose" | "task_space"
    kd: np.ndarray
    lam: np.ndarray | None = None
    lam_task: np.ndarray | None = None
    obstacles: tuple = ()
    obstacle_cutoff: float = 0.0
    feasibility_tol: float = 1e-6

    def __post_init__(self):
        if self.mode not in ("velocity", "pose", "task_space"):
            raise ValueError(f"unknown controller mode {self.mode!r}")
        self.kd = _check_spd("kd", self.kd)
        if self.lam is not None:
            self.lam = _check_spd("lam", self.lam)
        if self.lam_task is not None:
            self.lam_task = _check_spd("lam_task", self.lam_task)
        self.obstacles = tuple(self.obstacles)


def make_controller_config(n_bodies: int, mode: str, kd=10.0, lam=2.0,
                           lam_task=2.0, obstacles=(), obstacle_cutoff=0.0,
                           feasibility_tol=1e-6) -> ControllerConfig:
    """Expand scalar or diagonal gains to full matrices."""

    def expand(g, dim):
        g = np.asarray(g, dtype=float)
        if g.ndim == 0:
            return float(g) * np.eye(dim)
        if g.ndim == 1:
            return np.diag(g)
        return g

    dim = 6 * n_bodies
    return ControllerConfig(
        mode=mode, kd=expand(kd, dim),
        lam=expand(lam, dim) if lam is not None else None,
        lam_task=expand(lam_task, 6) if lam_task is not None else None,
        obstacles=tuple(obstacles), obstacle_cutoff=float(obstacle_cutoff),
        feasibility_tol=float(feasibility_tol))


@dataclass
class PortCommand:
    """Commanded port with controller diagnostics.

    ``lyapunov_rate`` is the design value -s^T K_d s; ``jac_sliding_norm``
    is the norm of J s, whose smallness is what makes that design value
    exact.  ``nu_ref`` / ``nu_ref_rate`` expose the reference velocity so
    callers can audit the realized error dynamics.
    """

    tau: np.ndarray
    sliding_surface: np.ndarray
    lyapunov_value: float
    lyapunov_rate: float
    jac_sliding_norm: float
    nu_ref: np.ndarray
    nu_ref_rate: np.ndarray


@dataclass
class PortDecomposition:
    """Known generalized force and the isolated interaction port."""

    f_known: np.ndarray   # gravity + joint moments - gyroscopic (6N,)
    tau: np.ndarray       # stacked external forces and moments (6N,)


def port_decompose(sys: AssembledSystem,
                   external_actual: np.ndarray) -> PortDecomposition:
    """Split the assembled force into the known part and the port.

    ``external_actual`` is the stacked generalized external input the
    assembly received; ``f_known + tau`` reproduces the assembled force
    vector exactly.
    """
    tau = np.asarray(external_actual, dtype=float).copy()
    return PortDecomposition(f_known=sys.f_known, tau=tau)


def _finish_command(sys, kd, s, nu_ref, nu_ref_rate) -> PortCommand:
    tau = (sys.apply_mass(nu_ref_rate) + sys.apply_coriolis(nu_ref)
           - sys.f_gravity_joint - kd @ s)
    v_value = 0.5 * float(s @ sys.apply_mass(s))
    v_rate = -float(s @ (kd @ s))
    js = sys.jac @ s if sys.jac.shape[0] else np.zeros(0)
    return PortCommand(tau=tau, sliding_surface=s, lyapunov_value=v_value,
                       lyapunov_rate=v_rate,
                       jac_sliding_norm=float(np.linalg.norm(js)),
                       nu_ref=nu_ref, nu_ref_rate=nu_ref_rate)


def _check_feasible(sys, nu_d, tol):
    if sys.jac.shape[0] == 0:
        return
    resid = float(np.max(np.abs(sys.jac @ nu_d)))
    if resid > tol * (1.0 + float(np.max(np.abs(nu_d)))):
        raise FeasibilityError(
            f"desired twist violates the joint constraints by {resid:.3e}")


def control_velocity(spec, state: ChainState, sys: AssembledSystem,
                     traj, cfg: ControllerConfig) -> PortCommand:
    """All-body velocity tracking: s = nu - nu_d."""
    target = traj.sample(state.time)
    _check_feasible(sys, target.nu, cfg.feasibility_tol)
    s = sys.nu - target.nu
    return _finish_command(sys, cfg.kd, s, target.nu, target.nu_rate)


def pose_errors(state: ChainState, traj):
    """Generalized pose error and its exact time derivative.

    The error stacks per-body position differences and attitude errors.
    The attitude error is the vector part of the error quaternion
    q_e = conj(q_d) (x) q, rotated into inertial components with the
    body's own attitude so the whole error transforms like an inertial
    tensor (this is what makes the closed loop frame-invariant).  Its
    derivative is evaluated exactly from the quaternion kinematics; the
    finite-difference oracle in the tests pins the convention.
    """
    target = traj.sample(state.time)
    n = state.n_bodies
    e_pos = state.positions - target.positions
    de_pos = state.lin_vel - target.nu[:3 * n].reshape(n, 3)
    w_d = target.nu[3 * n:].reshape(n, 3)
    e_att = np.zeros((n, 3))
    de_att = np.zeros((n, 3))
    for i in range(n):
        q = state.quaternions[i]
        q_d = target.quaternions[i]
        t_body = geom.rotation_from_quat(q)
        r_body = t_body.T
        q_e = geom.quat_multiply(geom.quat_conjugate(q_d), q)
        w_body = t_body @ state.ang_vel[i]
        w_d_body = geom.rotation_from_quat(q_d) @ w_d[i]
        dq_e = 0.5 * (
            geom.quat_multiply(q_e, np.concatenate([[0.0], w_body]))
            - geom.quat_multiply(np.concatenate([[0.0], w_d_body]), q_e))
        e_att[i] = r_body @ q_e[1:]
        de_att[i] = (np.cross(state.ang_vel[i], e_att[i])
                     + r_body @ dq_e[1:])
    e_p = np.concatenate([e_pos.ravel(), e_att.ravel()])
    de_p = np.concatenate([de_pos.ravel(), de_att.ravel()])
    return e_p, de_p


def control_pose(spec, state: ChainState, sys: AssembledSystem,
                 traj, cfg: ControllerConfig) -> PortCommand:
    """All-body pose + velocity tracking.

    Reference velocity nu_r = nu_d - Lam e_p turns the converged sliding
    surface into the first-order error law de_p/dt + Lam e_p = 0, so pose
    errors decay exponentially at the eigenvalues of Lam.
    """
    if cfg.lam is None:
        raise ValueError("pose mode needs the lam gain")
    target = traj.sample(state.time)
    _check_feasible(sys, target.nu, cfg.feasibility_tol)
    e_p, de_p = pose_errors(state, traj)
    nu_ref = target.nu - cfg.lam @ e_p
    nu_ref_rate = target.nu_rate - cfg.lam @ de_p
    s = sys.nu - nu_ref
    return _finish_command(sys, cfg.kd, s, nu_ref, nu_ref_rate)


# ------------------------------------------------------------- task space ---

def task_jacobian(n_bodies: int) -> np.ndarray:
    """6 x 6N selector returning body N's stacked linear/angular velocity."""
    if n_bodies < 1:
        raise ValueError("need at least one body")
    jt = np.zeros((6, 6 * n_bodies))
    jt[0:3, 3 * (n_bodies - 1):3 * n_bodies] = np.eye(3)
    jt[3:6, 6 * n_bodies - 3:] = np.eye(3)
    return jt


def mass_weighted_pinv(jt: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Dynamically consistent pseudoinverse M^-1 Jt^T (Jt M^-1 Jt^T)^-1."""
    minv_jt = np.linalg.solve(mass, jt.T)
    core = jt @ minv_jt
    eigs = np.linalg.eigvalsh(0.5 * (core + core.T))
    if eigs[0] <= 0.0 or eigs[-1] / eigs[0] > 1e12:
        raise TaskSingular(
            f"task-space inertia is singular (eigs {eigs[0]:.3e}.."
            f"{eigs[-1]:.3e})")
    return minv_jt @ np.linalg.inv(core)


def null_projector(jt: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Projector onto motions invisible to the task: P = I - Jt^+ Jt."""
    pinv = mass_weighted_pinv(jt, mass)
    return np.eye(jt.shape[1]) - pinv @ jt


def obstacle_potential(state: ChainState, cfg: ControllerConfig) -> float:
    """Sum of gain * (1/d - 1/d_cut)^2 over bodies 1..N-1 inside the cutoff.

    d is the surface distance from a body center to an obstacle sphere.
    The end-effector is excluded: avoidance must not fight the task.
    """
    cut = cfg.obstacle_cutoff
    total = 0.0
    for ob in cfg.obstacles:
        for i in range(state.n_bodies - 1):
            d = float(np.linalg.norm(state.positions[i] - ob.center)
                      ) - ob.radius
            if d <= 0.0:
                raise BodyInsideObstacle(
                    f"body {i} is inside obstacle at {ob.center}")
            if cut > 0.0 and d < cut:
                total += ob.gain * (1.0 / d - 1.0 / cut) ** 2
    return total


def obstacle_gradient(state: ChainState, cfg: ControllerConfig) -> np.ndarray:
    """Gradient of the repulsion potential in the generalized coordinates.

    Only the linear slots of bodies 1..N-1 are populated; angular slots and
    the end-effector stay zero.
    """
    n = state.n_bodies
    grad = np.zeros(6 * n)
    cut = cfg.obstacle_cutoff
    for ob in cfg.obstacles:
        for i in range(n - 1):
            rel = state.positions[i] - ob.center
            dist = float(np.linalg.norm(rel))
            d = dist - ob.radius
            if d <= 0.0:
                raise BodyInsideObstacle(
                    f"body {i} is inside obstacle at {ob.center}")
            if cut > 0.0 and d < cut:
                coef = -2.0 * ob.gain * (1.0 / d - 1.0 / cut) / (d * d)
                grad[3 * i:3 * i + 3] += coef * rel / dist
    return grad


def task_pose_error(state: ChainState, target) -> np.ndarray:
    """6-vector end-effector pose error [position; attitude], inertial."""
    i = state.n_bodies - 1
    e_pos = state.positions[i] - target.position
    q_e = geom.quat_multiply(geom.quat_conjugate(target.quaternion),
                             state.quaternions[i])
    r_body = geom.rotation_from_quat(state.quaternions[i]).T
    return np.concatenate([e_pos, r_body @ q_e[1:]])


def control_task_space(spec, state: ChainState, sys: AssembledSystem,
                       traj, cfg: ControllerConfig,
                       prev_ref=None,
                       nu_ref_rate=None) -> PortCommand:
    """End-effector tracking with null-space obstacle avoidance.

    nu_r = Jt^+ (nu_e_d - Lam_e e_e) - P grad(U).  The reference-velocity
    rate has no usable closed form (it would need the time derivative of
    the projector), so it is finite-differenced: pass ``prev_ref`` as
    ``(time, nu_ref)`` from the previous controller step, or pass a
    precomputed ``nu_ref_rate`` directly.  The one-step history is owned by
    the simulation loop.
    """
    if cfg.lam_task is None:
        raise ValueError("task_space mode needs the lam_task gain")
    target = traj.sample(state.time)
    n = state.n_bodies
    jt = task_jacobian(n)
    e_task = task_pose_error(state, target)
    nu_task_ref = target.velocity - cfg.lam_task @ e_task
    # The reference twist must respect the joint closures or the sliding
    # surface ends up fighting the constraint forces (steady tracking bias
    # of order |F_J|/K_d).  Appending the closure rows with zero target
    # velocity to the task rows keeps the same mass-weighted resolution
    # while confining the reference to the feasible motion set; with no
    # joints this reduces to the plain task pseudoinverse.
    if sys.jac.shape[0]:
        j_aug = np.vstack([jt, sys.jac])
        target_aug = np.concatenate([nu_task_ref,
                                     np.zeros(sys.jac.shape[0])])
    else:
        j_aug, target_aug = jt, nu_task_ref
    minv_jt = _mass_inverse_apply(sys, j_aug.T)
    core = j_aug @ minv_jt
    try:
        chol = np.linalg.cholesky(0.5 * (core + core.T))
    except np.linalg.LinAlgError as exc:
        raise TaskSingular("task-space inertia is singular") from exc
    diag = np.diagonal(chol)
    if (diag.max() / diag.min()) ** 2 > 1e12:
        raise TaskSingular("task-space inertia is near-singular")

    def core_solve(rhs):
        return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))

    nu_ref = minv_jt @ core_solve(target_aug)
    grad = obstacle_gradient(state, cfg)
    if np.any(grad):
        # null-space component: (I - pinv @ J_aug) @ (-grad)
        nu_ref += minv_jt @ core_solve(j_aug @ grad) - grad
    if nu_ref_rate is None:
        if prev_ref is not None:
            t_prev, ref_prev = prev_ref
            dt = state.time - t_prev
            nu_ref_rate = ((nu_ref - ref_prev) / dt if dt > 0.0
                           else np.zeros(6 * n))
        else:
            nu_ref_rate = np.zeros(6 * n)
    s = sys.nu - nu_ref
    return _finish_command(sys, cfg.kd, s, nu_ref, nu_ref_rate)
