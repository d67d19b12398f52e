"""Exception types shared across the solver."""


class AcchError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(AcchError, ValueError):
    """An argument left the mathematical domain of a constitutive function."""


class InadmissibleStateError(AcchError, ValueError):
    """A state violated the open-interval bounds required by the free energy."""


class PartitionError(AcchError, ValueError):
    """A domain decomposition request cannot be satisfied on the given grid."""


class ZeroPivotError(AcchError, ArithmeticError):
    """A subdomain factorization hit a (near) zero pivot.

    Attributes
    ----------
    cell : int
        Flat cell index of the offending pivot row.
    component : int
        0 for the concentration unknown, 1 for the order parameter.
    """

    def __init__(self, cell: int, component: int):
        self.cell = cell
        self.component = component
        super().__init__(
            f"zero pivot during incomplete factorization at cell {cell}, component {component}"
        )


class SolverStallError(AcchError, RuntimeError):
    """The nonlinear solver kept diverging at the minimum time step."""


class ConfigError(AcchError, ValueError):
    """A run configuration file is malformed or inconsistent."""
