"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class EmptyCellError(LookupError):
    """No samples fall into the requested (terrain class, commanded-speed bin) cell."""


class TrainingError(RuntimeError):
    """Training diverged or could not start."""


class FormatError(ValueError):
    """A model, map or world file could not be parsed.

    The message always carries a location (JSON path or line/column).
    """


class UnreachableGoalError(RuntimeError):
    """The planner exhausted the search space without reaching the goal."""


class PlanningError(RuntimeError):
    """The sampling planner could not produce a finite-cost update."""
