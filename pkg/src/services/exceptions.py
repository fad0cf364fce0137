class SimulationError(Exception):
    """Base class of every error raised by the simulator."""


class InfeasibleAllocationError(SimulationError):
    pass


class InfeasibleDropError(SimulationError):
    """A drop admits no point meeting every user's QoS under the fronthaul limits."""


class SolverFailure(SimulationError):
    def __init__(self, message: str, solution=None):
        super().__init__(message)
        self.solution = solution


class RedrawLimitExceeded(SimulationError):
    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report
