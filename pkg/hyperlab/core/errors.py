"""Exception hierarchy shared by every hyperlab module."""


class HyperlabError(Exception):
    """Base class for all hyperlab failures."""


class InvalidConfig(HyperlabError):
    pass


class RadiusTooLarge(HyperlabError):
    pass


class NonIntegerSide(HyperlabError):
    pass


class BlockMismatch(HyperlabError):
    pass


class IntensityOverflow(HyperlabError):
    pass


class EmptyMixture(HyperlabError):
    pass


class TooFewReplicas(HyperlabError):
    pass


class MissingDyadicRadii(HyperlabError):
    pass


class ZeroFrequency(HyperlabError):
    pass


class InsufficientFrequencyRange(HyperlabError):
    pass


class BadBinning(HyperlabError):
    pass


class GridTooCoarse(HyperlabError):
    pass


class NonNeutral(HyperlabError):
    pass


class CountTooFar(HyperlabError):
    pass


class PreconditionNotMet(HyperlabError):
    pass


class Unbalanced(HyperlabError):
    pass


class InstanceTooLarge(HyperlabError):
    pass


class MissingCoupling(HyperlabError):
    pass


class DensityUnbounded(HyperlabError):
    pass


class IncompleteReport(HyperlabError):
    pass
