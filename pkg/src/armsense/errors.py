"""Exception vocabulary shared across the toolkit."""

from __future__ import annotations


class ArmsenseError(Exception):
    """Base class for every toolkit-specific failure."""


class UnknownLabel(ArmsenseError):
    pass


class BadMagic(ArmsenseError):
    pass


class TruncatedPacket(ArmsenseError):
    pass


class BadSubcarrierCount(ArmsenseError):
    pass


class GapTooLarge(ArmsenseError):
    def __init__(self, tick: int, sniffer: str):
        super().__init__(f"no packet within skew of tick {tick} for sniffer {sniffer}")
        self.tick = tick
        self.sniffer = sniffer


class InsufficientDuration(ArmsenseError):
    pass


class UnknownAdapter(ArmsenseError):
    pass


class MaskOutOfRange(ArmsenseError):
    pass


class UnsupportedRate(ArmsenseError):
    pass


class StatsShapeMismatch(ArmsenseError):
    pass


class InconsistentMetadata(ArmsenseError):
    pass


class ShapeMismatch(ArmsenseError):
    pass


class ProbabilityOutOfRange(ArmsenseError):
    pass


class GraphConsumed(ArmsenseError):
    pass


class NonScalarOutput(ArmsenseError):
    pass


class HeadDivisibility(ArmsenseError):
    pass


class TooManyPatches(ArmsenseError):
    pass


class NonFiniteLogits(ArmsenseError):
    pass


class EmptySplit(ArmsenseError):
    pass


class DivergedLoss(ArmsenseError):
    pass


class TooSmall(ArmsenseError):
    pass


class LengthMismatch(ArmsenseError):
    pass


class MissingVelocity(ArmsenseError):
    pass


class MissingLocation(ArmsenseError):
    pass


class InvalidGeometry(ArmsenseError):
    pass
