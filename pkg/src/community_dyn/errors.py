"""Exception hierarchy shared across the package."""


class CommunityDynError(Exception):
    """Base class; the CLI maps these to exit code 1 with a JSON error body."""


class ParseError(CommunityDynError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class ValidationError(CommunityDynError):
    pass


class ConfigError(CommunityDynError):
    pass


class DegenerateCounts(CommunityDynError):
    pass


class NotConverged(CommunityDynError):
    pass


class RangeError(CommunityDynError):
    pass


class EmptyBucket(CommunityDynError):
    pass


class InsufficientData(CommunityDynError):
    pass


class DegenerateSample(InsufficientData):
    pass


class NonPositiveSample(CommunityDynError):
    pass


class EmptyNetwork(CommunityDynError):
    pass


class NoTriples(CommunityDynError):
    pass


class NoEligibleTarget(CommunityDynError):
    pass


class OutOfOrderEvent(CommunityDynError):
    pass


class NoVotesYet(CommunityDynError):
    pass


class InsufficientHistory(CommunityDynError):
    pass
