"""Exception hierarchy shared by all submodules."""


class BeltramiError(Exception):
    pass


class DimensionError(BeltramiError, ValueError):
    """Operands live in different ambient dimensions."""


class DomainError(BeltramiError, ValueError):
    """A point falls outside the domain guard of a field."""


class StepSizeError(BeltramiError, ValueError):
    """Finite-difference step too small to be meaningful."""


class StabilityError(BeltramiError):
    """Explicit time step exceeds the stability bound."""


class SimulationError(BeltramiError):
    """Non-finite state or boundary overshoot during time stepping."""


class NotBeltramiError(BeltramiError, ValueError):
    """A routine assuming the Beltrami condition received a field violating it."""


class ConfigError(BeltramiError, ValueError):
    """Run configuration failed validation; ``errors`` lists every problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
