"""Typed protocol messages with canonical, bit-exact serialization.

Every message serializes to a single canonical byte string (documented
byte-by-byte in docs/WIRE_FORMAT.md) used for transport, signing, and
MAC computation. ``parse`` accepts exactly the canonical encodings and
rejects everything else with a reason code, so attack tests can assert
precisely why a forged message failed.

Layout conventions: all integers little-endian fixed width; rosters
serialize their user ids sorted ascending so the signed bytes are
independent of insertion order; a version byte prefixes every message.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Optional

from .crypto import MAC_LEN, SIGNATURE_LEN, Signature
from .field import FieldParams, FieldVector, vector_bytes

WIRE_VERSION = 1


class Role(IntEnum):
    USER = 0
    INTERMEDIATE = 1
    AGGREGATOR = 2


class RosterKind(IntEnum):
    F = 0  # per-intermediate-server received-user list
    A = 1  # aggregator's received-user list
    I = 2  # common active user list


class MsgTag(IntEnum):
    MASKED_SHARE = 0x01
    ROSTER = 0x02
    PARTIAL_AGGREGATE = 0x03
    GLOBAL_MODEL = 0x04
    VERIFICATION_TUPLE = 0x05


# Domain tag for the hash/MAC input derived from a global model vector;
# distinct from every message tag so digests cannot collide with
# transported messages.
THETA_CONTEXT_TAG = 0x10


class ParseReason(str, Enum):
    TRUNCATED = "truncated"
    BAD_TAG = "bad-tag"
    NON_CANONICAL = "non-canonical"
    INVARIANT_VIOLATION = "invariant-violation"


class ParseError(ValueError):
    def __init__(self, reason: ParseReason, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)


@dataclass(frozen=True, order=True)
class NodeId:
    role: Role
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("node index must be non-negative")

    def __str__(self) -> str:
        return f"{self.role.name.lower()}:{self.index}"


AGGREGATOR_ID = NodeId(Role.AGGREGATOR, 0)


def user_id(i: int) -> NodeId:
    return NodeId(Role.USER, i)


def intermediate_id(i: int) -> NodeId:
    return NodeId(Role.INTERMEDIATE, i)


@dataclass(frozen=True)
class MaskedShare:
    """One user's masked update addressed to one node in a round."""

    round: int
    sender: NodeId
    target: NodeId
    payload: FieldVector
    signature: Optional[Signature] = None

    def __post_init__(self):
        if self.sender.role is not Role.USER:
            raise ValueError("share sender must be a user")
        if self.target.role is Role.USER:
            raise ValueError("share target must be a server node")


@dataclass(frozen=True)
class Roster:
    """Sorted, deduplicated list of user indices (the lists F_j, A, I)."""

    round: int
    kind: RosterKind
    owner: NodeId
    users: tuple
    signature: Optional[Signature] = None

    def __post_init__(self):
        if list(self.users) != sorted(set(self.users)):
            raise ValueError("roster users must be sorted and deduplicated")
        expected_role = Role.INTERMEDIATE if self.kind is RosterKind.F else Role.AGGREGATOR
        if self.owner.role is not expected_role:
            raise ValueError(f"roster kind {self.kind.name} owned by {self.owner}")

    @classmethod
    def make(cls, round: int, kind: RosterKind, owner: NodeId, users) -> "Roster":
        return cls(round, kind, owner, tuple(sorted(set(int(u) for u in users))))

    def __len__(self) -> int:
        return len(self.users)


@dataclass(frozen=True)
class PartialAggregate:
    """An intermediate server's field sum of the stored shares of users in I."""

    round: int
    sender: NodeId
    payload: FieldVector
    signature: Optional[Signature] = None

    def __post_init__(self):
        if self.sender.role is not Role.INTERMEDIATE:
            raise ValueError("partial aggregate sender must be an intermediate server")


@dataclass(frozen=True)
class GlobalModel:
    """The unmasked aggregate theta plus the active user list it covers."""

    round: int
    theta: FieldVector
    roster_i: Roster

    def __post_init__(self):
        if self.roster_i.kind is not RosterKind.I:
            raise ValueError("global model must carry an I roster")


@dataclass(frozen=True)
class VerificationTuple:
    """The aggregator's consistency proof (R, S) plus rosters.

    The aggregator signature covers (round, R, S, A, I) exactly as
    serialized; the relay block (forwarding server identity and its F
    roster) is attached by the intermediate server and lies outside the
    signature.
    """

    round: int
    r_value: int
    s_tag: bytes
    roster_a: Roster
    roster_i: Roster
    signature: Optional[Signature] = None
    relayer: Optional[NodeId] = None
    roster_f: Optional[Roster] = None

    def __post_init__(self):
        if len(self.s_tag) != MAC_LEN:
            raise ValueError("S must be a 32-byte MAC tag")
        if self.roster_a.kind is not RosterKind.A or self.roster_i.kind is not RosterKind.I:
            raise ValueError("verification tuple must carry A and I rosters")
        if (self.relayer is None) != (self.roster_f is None):
            raise ValueError("relayer and roster_f must be attached together")
        if self.relayer is not None and self.relayer.role is not Role.INTERMEDIATE:
            raise ValueError("relayer must be an intermediate server")

    def with_relay(self, relayer: NodeId, roster_f: Roster) -> "VerificationTuple":
        return replace(self, relayer=relayer, roster_f=roster_f)


Message = MaskedShare | Roster | PartialAggregate | GlobalModel | VerificationTuple


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _header(tag: MsgTag, round: int) -> bytes:
    return struct.pack("<BBQ", WIRE_VERSION, tag, round)


def _node_bytes(node: NodeId) -> bytes:
    return struct.pack("<BQ", node.role, node.index)


def _sig_bytes(sig: Optional[Signature], include: bool) -> bytes:
    if not include or sig is None:
        return b"\x00"
    return b"\x01" + sig


def _embedded(msg_bytes: bytes) -> bytes:
    return struct.pack("<Q", len(msg_bytes)) + msg_bytes


def canonical_bytes(msg: Message, *, _signing: bool = False) -> bytes:
    """Deterministic canonical encoding; injective within each message type."""
    sig = not _signing
    if isinstance(msg, MaskedShare):
        return (
            _header(MsgTag.MASKED_SHARE, msg.round)
            + _node_bytes(msg.sender)
            + _node_bytes(msg.target)
            + vector_bytes(msg.payload)
            + _sig_bytes(msg.signature, sig)
        )
    if isinstance(msg, Roster):
        body = struct.pack("<B", msg.kind) + _node_bytes(msg.owner)
        body += struct.pack("<Q", len(msg.users))
        body += b"".join(struct.pack("<Q", u) for u in msg.users)
        return _header(MsgTag.ROSTER, msg.round) + body + _sig_bytes(msg.signature, sig)
    if isinstance(msg, PartialAggregate):
        return (
            _header(MsgTag.PARTIAL_AGGREGATE, msg.round)
            + _node_bytes(msg.sender)
            + vector_bytes(msg.payload)
            + _sig_bytes(msg.signature, sig)
        )
    if isinstance(msg, GlobalModel):
        return (
            _header(MsgTag.GLOBAL_MODEL, msg.round)
            + vector_bytes(msg.theta)
            + _embedded(canonical_bytes(msg.roster_i))
        )
    if isinstance(msg, VerificationTuple):
        out = (
            _header(MsgTag.VERIFICATION_TUPLE, msg.round)
            + struct.pack("<Q", msg.r_value)
            + msg.s_tag
            + _embedded(canonical_bytes(msg.roster_a))
            + _embedded(canonical_bytes(msg.roster_i))
            + _sig_bytes(msg.signature, sig)
        )
        if _signing or msg.relayer is None:
            out += b"\x00"
        else:
            out += b"\x01" + _node_bytes(msg.relayer) + _embedded(
                canonical_bytes(msg.roster_f)
            )
        return out
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def signing_bytes(msg: Message) -> bytes:
    """Signature input: the canonical encoding minus signature and relay block."""
    return canonical_bytes(msg, _signing=True)


def theta_auth_bytes(round: int, theta: FieldVector) -> bytes:
    """Hash/MAC input binding a global model vector to its round."""
    return struct.pack("<BBQ", WIRE_VERSION, THETA_CONTEXT_TAG, round) + vector_bytes(theta)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(ParseReason.TRUNCATED, f"needed {n} bytes at {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.data)


def _read_node(r: _Reader) -> NodeId:
    role_raw = r.u8()
    try:
        role = Role(role_raw)
    except ValueError:
        raise ParseError(ParseReason.NON_CANONICAL, f"bad role byte {role_raw}")
    return NodeId(role, r.u64())


def _read_vector(r: _Reader, params: FieldParams) -> FieldVector:
    length = r.u64()
    raw = r.take(8 * length)
    import numpy as np

    arr = np.frombuffer(raw, dtype="<u8").astype(np.uint64)
    if arr.size and int(arr.max()) >= params.q:
        raise ParseError(ParseReason.INVARIANT_VIOLATION, "residue out of range")
    return FieldVector(params, arr)


def _read_sig(r: _Reader) -> Optional[Signature]:
    flag = r.u8()
    if flag == 0:
        return None
    if flag != 1:
        raise ParseError(ParseReason.NON_CANONICAL, f"bad signature flag {flag}")
    return r.take(SIGNATURE_LEN)


def _read_embedded_roster(r: _Reader, params: FieldParams, outer_round: int) -> Roster:
    length = r.u64()
    inner = parse(r.take(length), params)
    if not isinstance(inner, Roster):
        raise ParseError(ParseReason.NON_CANONICAL, "embedded message is not a roster")
    if inner.round != outer_round:
        raise ParseError(ParseReason.INVARIANT_VIOLATION, "embedded roster round mismatch")
    return inner


def parse(data: bytes, params: FieldParams) -> Message:
    """Decode a canonical message; rejects any non-canonical byte string."""
    r = _Reader(data)
    version = r.u8()
    if version != WIRE_VERSION:
        raise ParseError(ParseReason.NON_CANONICAL, f"unknown version {version}")
    tag_raw = r.u8()
    try:
        tag = MsgTag(tag_raw)
    except ValueError:
        raise ParseError(ParseReason.BAD_TAG, f"unknown tag {tag_raw:#x}")
    round = r.u64()

    try:
        if tag is MsgTag.MASKED_SHARE:
            msg: Message = MaskedShare(
                round, _read_node(r), _read_node(r), _read_vector(r, params), _read_sig(r)
            )
        elif tag is MsgTag.ROSTER:
            kind_raw = r.u8()
            try:
                kind = RosterKind(kind_raw)
            except ValueError:
                raise ParseError(ParseReason.NON_CANONICAL, f"bad roster kind {kind_raw}")
            owner = _read_node(r)
            count = r.u64()
            users = tuple(r.u64() for _ in range(count))
            if any(users[i] >= users[i + 1] for i in range(len(users) - 1)):
                raise ParseError(
                    ParseReason.INVARIANT_VIOLATION, "roster not strictly ascending"
                )
            msg = Roster(round, kind, owner, users, _read_sig(r))
        elif tag is MsgTag.PARTIAL_AGGREGATE:
            msg = PartialAggregate(round, _read_node(r), _read_vector(r, params), _read_sig(r))
        elif tag is MsgTag.GLOBAL_MODEL:
            theta = _read_vector(r, params)
            msg = GlobalModel(round, theta, _read_embedded_roster(r, params, round))
        else:  # VERIFICATION_TUPLE
            r_value = r.u64()
            if r_value >= params.q:
                raise ParseError(ParseReason.INVARIANT_VIOLATION, "R out of range")
            s_tag = r.take(MAC_LEN)
            roster_a = _read_embedded_roster(r, params, round)
            roster_i = _read_embedded_roster(r, params, round)
            sig = _read_sig(r)
            relay_flag = r.u8()
            relayer = None
            roster_f = None
            if relay_flag == 1:
                relayer = _read_node(r)
                roster_f = _read_embedded_roster(r, params, round)
            elif relay_flag != 0:
                raise ParseError(ParseReason.NON_CANONICAL, f"bad relay flag {relay_flag}")
            msg = VerificationTuple(
                round, r_value, s_tag, roster_a, roster_i, sig, relayer, roster_f
            )
    except ParseError:
        raise
    except ValueError as exc:  # dataclass invariant checks
        raise ParseError(ParseReason.INVARIANT_VIOLATION, str(exc))

    if not r.done():
        raise ParseError(ParseReason.NON_CANONICAL, "trailing bytes after message")
    return msg
