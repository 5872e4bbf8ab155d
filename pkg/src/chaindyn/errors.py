"""Exception types and soft-warning categories used across the package."""


class ChainDynError(Exception):
    """Base class for all package-specific errors."""


class SpecInvalid(ChainDynError):
    """A chain description violates one or more physical invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid chain description: {lines}")


class NonSPDMass(ChainDynError):
    """Generalized mass matrix is not symmetric positive definite."""


class RankDeficientConstraints(ChainDynError):
    """Constraint Jacobian lost row rank; the model is ill-posed."""


class SolverFailed(ChainDynError):
    """The saddle-point solve could not produce a usable solution."""


class FeasibilityError(ChainDynError):
    """Desired velocity trajectory violates the kinematic constraints."""


class TaskSingular(ChainDynError):
    """Task Jacobian is singular with respect to the mass weighting."""


class BodyInsideObstacle(ChainDynError):
    """A body center penetrated an obstacle; potential is undefined."""


class GimbalLockNear(UserWarning):
    """Pitch is within the guard band of +/- pi/2; Euler output clamped."""
