"""Free-floating serial-chain dynamics and tensor-invariant control.

The package simulates N rigid bodies joined by N-1 flexible ball joints
using the unreduced saddle-point form of the Newton-Euler equations (solved
each step for accelerations and internal joint forces together) and closes
the loop with sliding-surface control laws that command a virtual
generalized-force port.
"""
from .assembly import (AssembledSystem, JointMomentResult, KKTInverseBlocks,
                       SolveResult, assemble, inertia_to_inertial,
                       joint_moments, kkt_inverse_blocks,
                       mass_derivative_minus_2c, solve_augmented)
from .control import (ControllerConfig, Obstacle, PortCommand,
                      PortDecomposition, control_pose, control_task_space,
                      control_velocity, make_controller_config,
                      mass_weighted_pinv, null_projector, obstacle_gradient,
                      obstacle_potential, port_decompose, pose_errors,
                      task_jacobian)
from .errors import (BodyInsideObstacle, ChainDynError, FeasibilityError,
                     GimbalLockNear, NonSPDMass, RankDeficientConstraints,
                     SolverFailed, SpecInvalid, TaskSingular)
from .geom import (EulerZYX, euler_from_quat, quat_conjugate, quat_derivative,
                   quat_from_euler, quat_multiply, quat_normalize,
                   rotation_from_quat, skew)
from .model import (BodySpec, ChainSpec, ChainState, JointSpec, Violation,
                    assemble_consistent_state, constraint_residuals,
                    validate_spec)
from .simulate import (IntegrationConfig, Pulse, PulseSchedule, Trace,
                       TraceRecord, kinetic_energy, momentum_totals,
                       potential_energy, project_positions, run_closed_loop,
                       run_open_loop, step)
from .trajectory import (ChainTarget, ChainTrajectory, CirclePath, LinePath,
                         QuinticPath, RestPath, TaskTarget, TaskTrajectory,
                         WaypointPath)

__version__ = "0.1.0"
