"""Exception types shared across the package."""


class ShapeMismatch(ValueError):
    """Array shapes are incompatible with the declared architecture."""


class SingularMatrix(ArithmeticError):
    """Matrix is numerically singular (pivot below the relative threshold)."""


class DependentNormals(ArithmeticError):
    """A set of constraint normals failed the linear-independence check."""


class AmbiguousSignature(ValueError):
    """An activation signature with zero states cannot define an affine piece."""


class InvalidTag(ValueError):
    """Constraint tag indices are out of range for the instance."""


class NoCrossing(Exception):
    """No inactive constraint decreases toward zero along the direction."""


class UnboundedEdge(RuntimeError):
    """A strictly descending edge never hits a constraint; the loss is bounded
    below by zero, so this signals a numerical fault."""


class Degenerate(RuntimeError):
    """More surfaces meet than the dimension allows, or normals collapsed."""


class DegenerateStart(Degenerate):
    """Perturbation failed to produce a full-dimensional start signature."""


class DegenerateVertex(Degenerate):
    """Edge-direction signature stabilization failed at a vertex."""


class NumericalStall(RuntimeError):
    """No progress direction was found before the active set filled up."""


class MonotonicityViolation(RuntimeError):
    """A pivot increased the loss beyond round-off, signalling a fault."""


class TooShort(ValueError):
    """Series or trajectory has too few entries for the requested analysis."""


class NoExponentialPhase(ValueError):
    """No sliding window passed the exponential-fit quality threshold."""


class IllConditioned(ArithmeticError):
    """Too few extrapolation triples were numerically acceptable."""


class RegionBoundaryTooClose(ValueError):
    """Point is too close to a constraint surface for finite differences."""


class Degenerate2D(RuntimeError):
    """Three or more constraint surfaces meet within tolerance in the plane."""


class InvalidConfig(ValueError):
    """Experiment configuration failed validation."""
