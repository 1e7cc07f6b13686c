"""Exception types raised by the stability pipeline."""


class VmstabError(Exception):
    """Base class for all package errors."""


class ConfigError(VmstabError):
    """Run configuration could not be parsed or validated."""


class NonConvergence(VmstabError):
    """An iterative solve hit its iteration cap before reaching tolerance."""


class NeutralityViolation(VmstabError):
    """Mean source defect exceeds tolerance; no periodic equilibrium at this n0."""


class TailTooLarge(VmstabError):
    """Velocity-domain truncation leaves a boundary contribution above tolerance."""


class StepFailure(VmstabError):
    """ODE step controller underflow while integrating characteristics."""


class GridMismatch(VmstabError):
    """Phase-space functions live on incompatible grids or species."""


class ProjectionDisagreement(VmstabError):
    """Orbit-average and small-rate realizations of the kernel projection differ."""


class AsymmetryTooLarge(VmstabError):
    """Assembled operator matrix fails its symmetry consistency check."""


class EigFailure(VmstabError):
    """Dense symmetric eigendecomposition failed to converge."""


class DegenerateCut(VmstabError):
    """Truncation rank falls inside a degenerate eigenvalue cluster."""


class DimensionMismatch(VmstabError):
    """Block dimensions are inconsistent."""


class SingularPivot(VmstabError):
    """A pivot block in the congruence diagonalization is numerically singular."""


class HypothesisFailure(VmstabError):
    """A spectral hypothesis of the instability criterion fails numerically."""


class BracketLost(VmstabError):
    """An inertia change vanished under bracket refinement (discretization artifact)."""


class TrivialKernel(VmstabError):
    """Located kernel vector coincides with the constant-potential trivial solution."""


class NoConvergence(VmstabError):
    """Crossing rates show no convergence under truncation refinement."""
