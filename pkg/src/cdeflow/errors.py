"""Exception hierarchy shared across the package."""


class CdeflowError(Exception):
    pass


class MalformedSeries(CdeflowError, ValueError):
    pass


class SchemaMismatch(CdeflowError, ValueError):
    pass


class InsufficientObservations(CdeflowError, ValueError):
    pass


class ShapeError(CdeflowError, ValueError):
    pass


class DomainError(CdeflowError, ValueError):
    pass


class ModeError(CdeflowError, ValueError):
    pass


class NumericalFailure(CdeflowError, ArithmeticError):
    pass


class NumericalBlowup(NumericalFailure):
    """Raised when an integrator produces a non-finite state.

    ``time`` is the integration time at which the state went bad and ``rows``
    lists the offending batch rows (empty for unbatched solves).
    """

    def __init__(self, time, rows=()):
        self.time = float(time)
        self.rows = tuple(int(r) for r in rows)
        msg = f"non-finite state at s={self.time:.6g}"
        if self.rows:
            msg += f" (batch rows {list(self.rows)})"
        super().__init__(msg)
