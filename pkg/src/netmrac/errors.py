"""Exception hierarchy shared by all modules."""


class NetMRACError(Exception):
    """Base class for every error raised by the package."""


class DegenerateInput(NetMRACError, ValueError):
    pass


class NotStrictlyProper(NetMRACError, ValueError):
    pass


class WrongRelativeDegree(NetMRACError, ValueError):
    pass


class DimensionMismatch(NetMRACError, ValueError):
    pass


class InvalidCount(NetMRACError, ValueError):
    pass


class WeightPolicyViolation(NetMRACError, ValueError):
    pass


class UnreachableAgent(NetMRACError, ValueError):
    pass


class DegreeMismatch(NetMRACError, ValueError):
    pass


class NonHurwitzZeros(NetMRACError, ValueError):
    pass


class IncompatibleFilter(NetMRACError, ValueError):
    """Filter polynomial is not a multiple of the leader numerator."""


class RankDeficient(NetMRACError, ValueError):
    pass


class NotHurwitz(NetMRACError, ValueError):
    pass


class MissingIdealGains(NetMRACError, ValueError):
    pass


class ConfigInvalid(NetMRACError, ValueError):
    pass


class ConfigParseError(NetMRACError, ValueError):
    pass


class EmptyTrajectory(NetMRACError, ValueError):
    pass


class NonFinite(NetMRACError, ArithmeticError):
    """Raised when the closed loop produces NaN or infinite values.

    ``last_finite_time`` is the last grid time at which the state was finite;
    ``trajectory`` holds whatever was recorded up to that point.
    """

    def __init__(self, last_finite_time, trajectory=None):
        super().__init__(f"non-finite state after t={last_finite_time:g}")
        self.last_finite_time = last_finite_time
        self.trajectory = trajectory
