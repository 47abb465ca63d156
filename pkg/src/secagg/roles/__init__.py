"""Party state machines: user, intermediate server, aggregator."""

from __future__ import annotations

from enum import Enum


class ProtocolViolation(Exception):
    """A peer sent something the protocol makes impossible for an honest party."""


class CollectOutcome(str, Enum):
    ACCEPTED = "accepted"
    BAD_SIGNATURE = "bad-signature"
    DUPLICATE = "duplicate"
    STALE = "stale"


class Verdict(str, Enum):
    ACCEPT = "accept"
    DETECT_INCONSISTENCY = "detect_inconsistency"
    DETECT_BAD_ROSTER = "detect_bad_roster"
    DETECT_BAD_SIGNATURE = "detect_bad_signature"


from .user import UserParty, UserStatus  # noqa: E402
from .intermediate import IntermediateParty  # noqa: E402
from .aggregator import AggregatorParty, MaliceKind, MaliceScript  # noqa: E402

__all__ = [
    "ProtocolViolation",
    "CollectOutcome",
    "Verdict",
    "UserParty",
    "UserStatus",
    "IntermediateParty",
    "AggregatorParty",
    "MaliceKind",
    "MaliceScript",
]
