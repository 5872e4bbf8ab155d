"""Augmented saddle-point dynamics of the constrained chain.

Builds every block of the unreduced equations of motion

    [ M   J^T ] [ dnu/dt ]   [ F     ]
    [ J   0   ] [ -F_J   ] = [ gamma ]

where M is the 6N x 6N generalized mass (translational masses and
inertial-frame inertia tensors), J the 3(N-1) x 6N joint-closure Jacobian,
F the generalized applied force (externals, gravity, joint spring moments,
gyroscopic terms) and gamma the velocity-product constraint acceleration.
The internal joint forces F_J are the Lagrange multipliers of the closure
constraints.

Sign conventions: joint j's internal force enters body j with + and body
j+1 with -, matching the force-distribution matrix C_F; the identities
C_F == -J_v^T and C_M == -J_omega^T tie the force distribution to the
constraint Jacobian and are asserted in the tests.

All angular quantities carry inertial components.  Attachment vectors are
rotated to inertial components before any skew block is formed.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import geom
from .errors import NonSPDMass, RankDeficientConstraints
from .model import ChainSpec, ChainState

# Schur-path conditioning beyond this falls back to a dense factorization.
CONDITION_FALLBACK = 1e12

_JV_CACHE: dict = {}
_CF_CACHE: dict = {}


def _jv_pattern(n: int) -> np.ndarray:
    """Constant linear Jacobian block: row j has -I at body j, +I at j+1."""
    jv = _JV_CACHE.get(n)
    if jv is None:
        jv = np.zeros((3 * (n - 1), 3 * n))
        for j in range(n - 1):
            jv[3 * j:3 * j + 3, 3 * j:3 * j + 3] = -np.eye(3)
            jv[3 * j:3 * j + 3, 3 * j + 3:3 * j + 6] = np.eye(3)
        jv.flags.writeable = False
        _JV_CACHE[n] = jv
    return jv


def _cf_pattern(n: int) -> np.ndarray:
    """Force distribution: body j gets +F_J[j], body j+1 gets -F_J[j]."""
    cf = _CF_CACHE.get(n)
    if cf is None:
        cf = np.zeros((3 * n, 3 * (n - 1)))
        for j in range(n - 1):
            cf[3 * j:3 * j + 3, 3 * j:3 * j + 3] = np.eye(3)
            cf[3 * j + 3:3 * j + 6, 3 * j:3 * j + 3] = -np.eye(3)
        cf.flags.writeable = False
        _CF_CACHE[n] = cf
    return cf


def _skew_batch(v: np.ndarray) -> np.ndarray:
    """(K, 3) -> (K, 3, 3) stack of skew matrices."""
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def inertia_to_inertial(inertia_body, attitude) -> np.ndarray:
    """Rotate a body-frame inertia tensor into inertial components.

    With T the inertial-to-body DCM of the attitude, returns T^T I_b T,
    a similarity transform that preserves the principal moments.
    """
    t = geom.rotation_from_quat(attitude)
    return t.T @ np.asarray(inertia_body, dtype=float) @ t


@dataclass(frozen=True)
class JointMomentResult:
    """Spring moment and geometry of one flexible joint.

    ``axes`` rows are the inertial-frame unit vectors the three relative
    Euler angles rotate about: the parent x-axis (roll), the intermediate
    y-axis (pitch) and the child z-axis (yaw).
    """

    moment: np.ndarray          # (3,) inertial [N*m]
    relative_euler: geom.EulerZYX
    axes: np.ndarray            # (3, 3) rows: roll, pitch, yaw axis


def _joint_moment_vectors(spec: ChainSpec, rotations: np.ndarray):
    """(N-1, 3) spring moments plus the per-joint angles/axes arrays."""
    n_j = spec.n_bodies - 1
    moments = np.zeros((n_j, 3))
    angles = np.zeros((n_j, 3))
    axes = np.zeros((n_j, 3, 3))
    for j in range(n_j):
        t_par, t_chi = rotations[j], rotations[j + 1]
        t_rel = t_par @ t_chi.T
        roll, pitch, yaw = geom.euler_from_matrix(t_rel)
        cpsi, spsi = np.cos(yaw), np.sin(yaw)
        b1 = t_par[0]
        x2 = cpsi * t_chi[1] - spsi * t_chi[0]
        b3 = t_chi[2]
        k = spec.stiffness[j]
        moments[j] = k[0] * roll * b1 + k[1] * pitch * x2 + k[2] * yaw * b3
        angles[j] = (roll, pitch, yaw)
        axes[j] = (b1, x2, b3)
    return moments, angles, axes


def joint_moments(spec: ChainSpec, state: ChainState) -> list:
    """Constitutive spring moments of all joints at the given state.

    The relative attitude across joint j is the parent-from-child DCM; its
    3-2-1 Euler angles, scaled by the joint stiffness triple and applied
    along the per-angle rotation axes, give the internal moment (inertial
    components).  The moment enters body j with + and body j+1 with -.
    """
    rotations = geom.rotations_from_quats(state.quaternions)
    moments, angles, axes = _joint_moment_vectors(spec, rotations)
    return [JointMomentResult(moments[j], geom.EulerZYX(*angles[j]), axes[j])
            for j in range(spec.n_bodies - 1)]


@dataclass(eq=False)
class AssembledSystem:
    """Dense blocks of the augmented system at one state.

    Beyond the block matrices, the per-body pieces the controllers and the
    solver reuse (rotations, inertial inertias, force components) are kept
    so nothing is recomputed downstream.
    """

    mass_gen: np.ndarray        # (6N, 6N)
    jac: np.ndarray             # (3(N-1), 6N)
    coriolis: np.ndarray        # (6N, 6N), angular-angular quadrant only
    force_gen: np.ndarray       # (6N,)
    gamma: np.ndarray           # (3(N-1),)
    force_dist: np.ndarray      # C_F (3N, 3(N-1))
    moment_dist: np.ndarray     # C_M (3N, 3(N-1))
    # cached pieces
    rotations: np.ndarray       # (N, 3, 3) inertial->body DCMs
    inertia_inertial: np.ndarray  # (N, 3, 3)
    masses: np.ndarray          # (N,)
    gravity_force: np.ndarray   # (3N,)  M_v g
    joint_moment_force: np.ndarray  # (3N,)  C_F M_J
    gyro_force: np.ndarray      # (3N,)  C_ww nu_w
    nu: np.ndarray              # (6N,)

    @property
    def n_bodies(self) -> int:
        return self.masses.shape[0]

    @property
    def f_gravity_joint(self) -> np.ndarray:
        """Gravity plus joint-spring generalized force (no gyroscopic part)."""
        return np.concatenate([self.gravity_force, self.joint_moment_force])

    @property
    def f_known(self) -> np.ndarray:
        """Everything in F except the external interaction port."""
        return np.concatenate([self.gravity_force,
                               self.joint_moment_force - self.gyro_force])

    def with_external(self, tau: np.ndarray) -> "AssembledSystem":
        """Same system with a generalized external force added onto F."""
        return replace(self, force_gen=self.force_gen + tau)

    def apply_mass(self, x: np.ndarray) -> np.ndarray:
        """M @ x without touching the dense matrix."""
        n = self.n_bodies
        lin = np.repeat(self.masses, 3) * x[:3 * n]
        ang = np.einsum("nij,nj->ni",
                        self.inertia_inertial, x[3 * n:].reshape(n, 3))
        return np.concatenate([lin, ang.ravel()])

    def apply_coriolis(self, x: np.ndarray) -> np.ndarray:
        """C(nu) @ x: gyroscopic quadrant only."""
        n = self.n_bodies
        w = self.nu[3 * n:].reshape(n, 3)
        ang = np.cross(w, np.einsum("nij,nj->ni",
                                    self.inertia_inertial,
                                    x[3 * n:].reshape(n, 3)))
        out = np.zeros_like(x)
        out[3 * n:] = ang.ravel()
        return out


def assemble(spec: ChainSpec, state: ChainState,
             f_ext: np.ndarray | None = None,
             m_ext: np.ndarray | None = None) -> AssembledSystem:
    """Build all blocks of the augmented system at ``state``.

    ``f_ext`` / ``m_ext`` are per-body external forces and moments, (N, 3),
    already resolved to inertial components (the pulse scheduler and the
    controllers both produce inertial components).
    """
    n = spec.n_bodies
    rot = geom.rotations_from_quats(state.quaternions)
    rot_t = rot.transpose(0, 2, 1)
    i_inertial = np.matmul(rot_t, np.matmul(spec.inertias_body, rot))
    w = state.ang_vel
    masses = spec.masses

    # attachment vectors, inertial components (COM -> joint)
    if n > 1:
        p_par = np.matmul(rot_t[:-1], spec.attach_parent[:, :, None])[:, :, 0]
        p_chi = np.matmul(rot_t[1:], spec.attach_child[:, :, None])[:, :, 0]
        s_par = _skew_batch(p_par)
        s_chi = _skew_batch(p_chi)
    else:
        p_par = p_chi = np.zeros((0, 3))
        s_par = s_chi = np.zeros((0, 3, 3))

    # generalized mass
    mass = np.zeros((6 * n, 6 * n))
    idx = np.arange(3 * n)
    mass[idx, idx] = np.repeat(masses, 3)
    for i in range(n):
        k = 3 * n + 3 * i
        mass[k:k + 3, k:k + 3] = i_inertial[i]

    # constraint Jacobian [J_v, J_omega]
    m_rows = 3 * (n - 1)
    jac = np.zeros((m_rows, 6 * n))
    jac[:, :3 * n] = _jv_pattern(n)
    for j in range(n - 1):
        r0, c0 = 3 * j, 3 * n + 3 * j
        jac[r0:r0 + 3, c0:c0 + 3] = s_par[j]
        jac[r0:r0 + 3, c0 + 3:c0 + 6] = -s_chi[j]

    # gyroscopic quadrant of the Coriolis matrix
    s_w = _skew_batch(w)
    gyro_blocks = np.matmul(s_w, i_inertial)
    coriolis = np.zeros((6 * n, 6 * n))
    for i in range(n):
        k = 3 * n + 3 * i
        coriolis[k:k + 3, k:k + 3] = gyro_blocks[i]
    gyro = np.matmul(gyro_blocks, w[:, :, None])[:, :, 0]

    # joint spring moments distributed with the C_F pattern
    if spec.has_stiffness:
        m_joint, _, _ = _joint_moment_vectors(spec, rot)
    else:
        m_joint = np.zeros((max(n - 1, 0), 3))
    joint_moment = np.zeros((n, 3))
    if n > 1:
        joint_moment[:-1] += m_joint
        joint_moment[1:] -= m_joint

    gravity_force = (masses[:, None] * spec.gravity).ravel()
    f_lin = gravity_force.copy()
    if f_ext is not None:
        f_lin += np.asarray(f_ext, dtype=float).ravel()
    f_ang = joint_moment - gyro
    if m_ext is not None:
        f_ang = f_ang + np.asarray(m_ext, dtype=float)
    force = np.concatenate([f_lin, f_ang.ravel()])

    # velocity-product constraint acceleration: Omega Omega p terms
    if n > 1:
        gamma = (np.matmul(s_w[:-1], np.matmul(s_w[:-1], p_par[:, :, None]))
                 - np.matmul(s_w[1:], np.matmul(s_w[1:], p_chi[:, :, None]))
                 )[:, :, 0].ravel()
    else:
        gamma = np.zeros(0)

    # moment distribution C_M (built from its own block law; the identity
    # C_M == -J_omega^T is a test, not a construction shortcut)
    cm = np.zeros((3 * n, m_rows))
    for j in range(n - 1):
        cm[3 * j:3 * j + 3, 3 * j:3 * j + 3] = s_par[j]
        cm[3 * j + 3:3 * j + 6, 3 * j:3 * j + 3] = -s_chi[j]

    return AssembledSystem(
        mass_gen=mass, jac=jac, coriolis=coriolis, force_gen=force,
        gamma=gamma, force_dist=_cf_pattern(n).copy(), moment_dist=cm,
        rotations=rot, inertia_inertial=i_inertial, masses=masses,
        gravity_force=gravity_force,
        joint_moment_force=joint_moment.ravel(), gyro_force=gyro.ravel(),
        nu=state.nu)


class SolveResult(NamedTuple):
    """Accelerations and joint constraint forces from one augmented solve."""

    accel_gen: np.ndarray       # (6N,)
    joint_forces: np.ndarray    # (3(N-1),)
    condition_estimate: float


def _mass_inverse_apply(sys: AssembledSystem, x: np.ndarray) -> np.ndarray:
    """M^{-1} @ x exploiting the block-diagonal structure; x may be 2-D."""
    n = sys.n_bodies
    x = np.asarray(x, dtype=float)
    lin = x[:3 * n] / np.repeat(sys.masses, 3).reshape(
        (3 * n,) + (1,) * (x.ndim - 1))
    ang = x[3 * n:].reshape((n, 3) + x.shape[1:])
    if ang.ndim == 2:
        out_ang = np.linalg.solve(sys.inertia_inertial, ang[:, :, None])
        out_ang = out_ang[:, :, 0]
    else:
        out_ang = np.linalg.solve(sys.inertia_inertial, ang)
    return np.concatenate([lin, out_ang.reshape(x[3 * n:].shape)])


def _check_mass_spd(sys: AssembledSystem) -> None:
    if np.any(sys.masses <= 0.0) or not np.all(np.isfinite(sys.masses)):
        raise NonSPDMass("body masses must be positive and finite")
    b = sys.inertia_inertial
    asym = float(np.max(np.abs(b - b.transpose(0, 2, 1))))
    if asym > 1e-9 * max(1.0, float(np.max(np.abs(b)))):
        raise NonSPDMass("inertia blocks are not symmetric")
    try:
        np.linalg.cholesky(b)
    except np.linalg.LinAlgError as exc:
        raise NonSPDMass("inertia blocks are not positive definite") from exc


def solve_augmented(sys: AssembledSystem) -> SolveResult:
    """Solve for the generalized accelerations and joint forces.

    Default path eliminates the accelerations with the block-diagonal mass
    inverse and solves the constraint-space (Schur complement) system
    S = J M^{-1} J^T, which is SPD whenever the model is well posed.  A
    dense factorization of the full saddle-point matrix takes over when the
    Schur conditioning degrades.
    """
    _check_mass_spd(sys)
    n = sys.n_bodies
    if sys.jac.shape[0] == 0:
        return SolveResult(_mass_inverse_apply(sys, sys.force_gen),
                           np.zeros(0), 1.0)

    minv_jt = _mass_inverse_apply(sys, sys.jac.T)
    schur = sys.jac @ minv_jt
    schur = 0.5 * (schur + schur.T)
    try:
        chol = np.linalg.cholesky(schur)
    except np.linalg.LinAlgError as exc:
        eigs = np.linalg.eigvalsh(schur)
        raise RankDeficientConstraints(
            f"constraint-space inertia has eigenvalue {eigs[0]:.3e} <= 0; "
            "the kinematic constraints are dependent") from exc
    # cheap SPD condition estimate from the Cholesky diagonal spread
    diag = np.diagonal(chol)
    cond = float((diag.max() / diag.min()) ** 2)

    if cond <= CONDITION_FALLBACK:
        minv_f = _mass_inverse_apply(sys, sys.force_gen)
        rhs = sys.gamma - sys.jac @ minv_f
        y = np.linalg.solve(chol, rhs)
        f_joint = np.linalg.solve(chol.T, y)
        accel = minv_f + minv_jt @ f_joint
        return SolveResult(accel, f_joint, cond)

    # dense fallback on the full augmented matrix
    m_rows = sys.jac.shape[0]
    kkt = np.zeros((6 * n + m_rows, 6 * n + m_rows))
    kkt[:6 * n, :6 * n] = sys.mass_gen
    kkt[:6 * n, 6 * n:] = sys.jac.T
    kkt[6 * n:, :6 * n] = sys.jac
    rhs = np.concatenate([sys.force_gen, sys.gamma])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientConstraints(
            "augmented matrix is singular") from exc
    return SolveResult(sol[:6 * n], -sol[6 * n:], cond)


class KKTInverseBlocks(NamedTuple):
    """Closed-form blocks of the augmented matrix inverse."""

    top_left: np.ndarray      # M^-1 - M^-1 J^T S^-1 J M^-1
    top_right: np.ndarray     # M^-1 J^T S^-1
    bottom_left: np.ndarray   # S^-1 J M^-1
    bottom_right: np.ndarray  # -S^-1


def kkt_inverse_blocks(sys: AssembledSystem) -> KKTInverseBlocks:
    """Analytic inverse of the saddle-point matrix via the Schur complement."""
    _check_mass_spd(sys)
    n = sys.n_bodies
    minv = _mass_inverse_apply(sys, np.eye(6 * n))
    if sys.jac.shape[0] == 0:
        z = np.zeros((0, 6 * n))
        return KKTInverseBlocks(minv, z.T.copy(), z, np.zeros((0, 0)))
    minv_jt = minv @ sys.jac.T
    schur = sys.jac @ minv_jt
    eigs = np.linalg.eigvalsh(0.5 * (schur + schur.T))
    if eigs[0] <= 0.0:
        raise RankDeficientConstraints(
            "constraint-space inertia is singular")
    sinv = np.linalg.inv(schur)
    jminv = minv_jt.T
    return KKTInverseBlocks(minv - minv_jt @ sinv @ jminv,
                            minv_jt @ sinv, sinv @ jminv, -sinv)


def mass_derivative_minus_2c(spec: ChainSpec, state: ChainState) -> np.ndarray:
    """The matrix dM/dt - 2C, which is exactly skew-symmetric.

    The inertial-frame inertia of a rotating body evolves by the tensor
    transport law dI/dt = Omega I - I Omega; subtracting twice the
    gyroscopic quadrant leaves -Omega I - I Omega per angular block and
    zeros elsewhere.  This identity kills the mass-rate term in the
    Lyapunov rate of every controller below.
    """
    n = spec.n_bodies
    rot = geom.rotations_from_quats(state.quaternions)
    i_inertial = np.einsum("nji,njk,nkl->nil", rot, spec.inertias_body, rot)
    omega = _skew_batch(state.ang_vel)
    blocks = -np.einsum("nij,njk->nik", omega, i_inertial) \
        - np.einsum("nij,njk->nik", i_inertial, omega)
    out = np.zeros((6 * n, 6 * n))
    for i in range(n):
        k = 3 * n + 3 * i
        out[k:k + 3, k:k + 3] = blocks[i]
    return out


def mass_rate_blocks(sys: AssembledSystem) -> np.ndarray:
    """(N, 3, 3) angular blocks of dM/dt = Omega I - I Omega."""
    n = sys.n_bodies
    omega = _skew_batch(sys.nu[3 * n:].reshape(n, 3))
    return (np.einsum("nij,njk->nik", omega, sys.inertia_inertial)
            - np.einsum("nij,njk->nik", sys.inertia_inertial, omega))
