"""Aggregator state machine: share collection, roster intersection,
final aggregation and unmasking, and verification-tuple construction.

Misbehavior for attack scenarios is scripted, not emergent: a MaliceScript
makes the aggregator deliver a divergent model to one user, send
inconsistent I rosters to different servers, or drop an honest user from
I, while everything else follows the honest path. Detection is asserted
downstream by the users.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import crypto
from ..field import FieldVector, sum_vectors
from ..messages import (
    AGGREGATOR_ID,
    GlobalModel,
    MaskedShare,
    NodeId,
    PartialAggregate,
    Roster,
    RosterKind,
    VerificationTuple,
    signing_bytes,
    theta_auth_bytes,
)
from ..session import KeyRegistry, Mode, SessionConfig
from . import CollectOutcome, ProtocolViolation


class MaliceKind(str, Enum):
    DIVERGENT_THETA = "send-divergent-theta"
    FORGE_ROSTER = "forge-roster"
    DROP_HONEST_USER = "drop-honest-user"


@dataclass(frozen=True)
class MaliceScript:
    kind: MaliceKind
    target_user: Optional[int] = None
    rounds: Optional[Tuple[int, ...]] = None  # None = every round

    def active(self, round_index: int) -> bool:
        return self.rounds is None or round_index in self.rounds


class AggregatorParty:
    def __init__(
        self,
        cfg: SessionConfig,
        rng: np.random.Generator,
        registry: Optional[KeyRegistry] = None,
        malice: Optional[MaliceScript] = None,
    ):
        self.node_id = AGGREGATOR_ID
        self.cfg = cfg
        self.rng = rng
        self.registry = registry
        self.malice = malice
        self.round = -1
        self.keypair: Optional[crypto.KeyPair] = None
        if cfg.mode is Mode.MALICIOUS:
            self.keypair = crypto.sig_gen(rng, owner=self.node_id)
            if registry is not None:
                registry.register(self.node_id, self.keypair.public_bytes)
        self._reset()

    def _reset(self) -> None:
        self._shares: Dict[int, MaskedShare] = {}
        self._rosters: Dict[int, Roster] = {}
        self._partials: Dict[int, PartialAggregate] = {}
        self._i_users: Optional[Tuple[int, ...]] = None
        self._i_sent: Dict[NodeId, Roster] = {}
        self._s_t: Optional[int] = None
        self._honest_theta: Optional[FieldVector] = None

    def begin_round(self, round_index: int) -> None:
        self.round = round_index
        self._reset()

    def _malice_active(self) -> bool:
        return self.malice is not None and self.malice.active(self.round)

    # -- masking round ----------------------------------------------------------

    def collect_share(self, share: MaskedShare) -> CollectOutcome:
        if share.target != self.node_id:
            raise ValueError(f"share addressed to {share.target}, not {self.node_id}")
        if share.round != self.round:
            return CollectOutcome.STALE
        if len(share.payload) != self.cfg.vec_len:
            raise ProtocolViolation("share payload length mismatch")
        if self.cfg.mode is Mode.MALICIOUS:
            pub = self.registry.lookup(share.sender) if self.registry else None
            if (
                pub is None
                or share.signature is None
                or not crypto.sig_verify(pub, signing_bytes(share), share.signature)
            ):
                return CollectOutcome.BAD_SIGNATURE
        if share.sender.index in self._shares:
            return CollectOutcome.DUPLICATE
        self._shares[share.sender.index] = share
        return CollectOutcome.ACCEPTED

    def collect_roster(self, roster: Roster) -> bool:
        if roster.kind is not RosterKind.F or roster.round != self.round:
            return False
        if self.cfg.mode is Mode.MALICIOUS:
            pub = self.registry.lookup(roster.owner) if self.registry else None
            if (
                pub is None
                or roster.signature is None
                or not crypto.sig_verify(pub, signing_bytes(roster), roster.signature)
            ):
                return False
        self._rosters[roster.owner.index] = roster
        return True

    # -- roster intersection ------------------------------------------------------

    def compute_i(self) -> Tuple[Optional[Roster], Optional[str]]:
        """I = A intersect all F_j; (None, reason) when the round aborts."""
        if len(self._shares) < self.cfg.threshold:
            return None, "below-threshold-A"
        expected = {n.index for n in self.cfg.intermediates}
        if set(self._rosters) != expected:
            return None, "missing-roster"
        common = set(self._shares)
        for roster in self._rosters.values():
            common &= set(roster.users)
        users = tuple(sorted(common))
        if len(users) < self.cfg.threshold:
            return None, "below-threshold-I"
        self._i_users = users
        return self._make_i_roster(users), None

    def _make_i_roster(self, users: Tuple[int, ...]) -> Roster:
        roster = Roster.make(self.round, RosterKind.I, self.node_id, users)
        if self.cfg.mode is Mode.MALICIOUS:
            sig = crypto.sig_sign(self.keypair.private_bytes, signing_bytes(roster))
            roster = Roster(roster.round, roster.kind, roster.owner, roster.users, sig)
        return roster

    def _aggregation_users(self) -> Tuple[int, ...]:
        """The I the aggregator itself aggregates over and sends theta to."""
        users = self._i_users
        if self._malice_active() and self.malice.kind is MaliceKind.DROP_HONEST_USER:
            users = tuple(u for u in users if u != self.malice.target_user)
        return users

    def outgoing_i_roster(self, server: NodeId) -> Roster:
        """I as broadcast to one intermediate server (malice applies here)."""
        if self._i_users is None:
            raise ProtocolViolation("I not computed")
        users = self._aggregation_users()
        if self._malice_active() and self.malice.kind is MaliceKind.FORGE_ROSTER:
            # Divergent view: the highest-indexed server sees I minus one user.
            if server == self.cfg.intermediates[-1] and len(users) > 1:
                users = users[:-1]
        roster = self._make_i_roster(users)
        self._i_sent[server] = roster
        return roster

    # -- final aggregation ----------------------------------------------------------

    def collect_partial(self, pa: PartialAggregate) -> bool:
        if pa.round != self.round or len(pa.payload) != self.cfg.vec_len:
            return False
        if self.cfg.mode is Mode.MALICIOUS:
            pub = self.registry.lookup(pa.sender) if self.registry else None
            if (
                pub is None
                or pa.signature is None
                or not crypto.sig_verify(pub, signing_bytes(pa), pa.signature)
            ):
                return False
        self._partials[pa.sender.index] = pa
        return True

    def final_aggregate(self) -> Tuple[Optional[GlobalModel], Optional[str]]:
        """theta = own I-restricted share sum + all partial aggregates.

        By the telescoping identity every mask cancels, so theta is the
        exact field sum of the users' inputs over I.
        """
        if self._i_users is None:
            return None, "no-common-roster"
        expected = {n.index for n in self.cfg.intermediates}
        if set(self._partials) != expected:
            return None, "missing-partial"
        users = self._aggregation_users()
        own = [self._shares[u].payload for u in users if u in self._shares]
        pieces = own + [self._partials[i].payload for i in sorted(self._partials)]
        theta = sum_vectors(pieces)
        self._honest_theta = theta
        roster_i = Roster.make(self.round, RosterKind.I, self.node_id, users)
        return GlobalModel(self.round, theta, roster_i), None

    def theta_recipients(self) -> Tuple[int, ...]:
        return self._aggregation_users()

    def outgoing_theta(self, user_index: int, gm: GlobalModel) -> GlobalModel:
        """The model as delivered to one user (divergent-theta malice here)."""
        if (
            self._malice_active()
            and self.malice.kind is MaliceKind.DIVERGENT_THETA
            and user_index == self.malice.target_user
        ):
            tampered = np.array(gm.theta.elems, dtype=np.uint64)
            tampered[0] = (int(tampered[0]) + 1) % self.cfg.params.q
            return GlobalModel(gm.round, FieldVector(self.cfg.params, tampered), gm.roster_i)
        return gm

    # -- verification -----------------------------------------------------------------

    def build_verification(self, gm: GlobalModel) -> VerificationTuple:
        """Fresh s_t; R = H(theta) + s_t; S = MAC_{s_t}(theta)."""
        q = self.cfg.params.q
        self._s_t = int(self.rng.integers(0, q, dtype=np.uint64))
        auth = theta_auth_bytes(gm.round, gm.theta)
        h = crypto.hash_to_field(auth, self.cfg.params)
        r_value = (h + self._s_t) % q
        s_tag = crypto.mac(crypto.mac_key_from_element(self._s_t), auth)
        roster_a = Roster.make(self.round, RosterKind.A, self.node_id, self._shares.keys())
        roster_i = Roster.make(self.round, RosterKind.I, self.node_id, self._aggregation_users())
        return self._finish_tuple(r_value, s_tag, roster_a, roster_i)

    def _finish_tuple(
        self, r_value: int, s_tag: bytes, roster_a: Roster, roster_i: Roster
    ) -> VerificationTuple:
        vt = VerificationTuple(self.round, r_value, s_tag, roster_a, roster_i)
        if self.cfg.mode is Mode.MALICIOUS:
            sig = crypto.sig_sign(self.keypair.private_bytes, signing_bytes(vt))
            vt = VerificationTuple(self.round, r_value, s_tag, roster_a, roster_i, sig)
        return vt

    def outgoing_verification(self, server: NodeId, vt: VerificationTuple) -> VerificationTuple:
        """The tuple as sent to one server; under forge-roster each server's
        copy carries the I it was given (signed, so signatures verify)."""
        if self._malice_active() and self.malice.kind is MaliceKind.FORGE_ROSTER:
            sent = self._i_sent.get(server)
            if sent is not None and sent.users != vt.roster_i.users:
                roster_i = Roster.make(self.round, RosterKind.I, self.node_id, sent.users)
                return self._finish_tuple(vt.r_value, vt.s_tag, vt.roster_a, roster_i)
        return vt

    # -- baseline (long-term-seed) flow ------------------------------------------

    def baseline_compute_i(self) -> Tuple[Optional[Roster], Optional[str]]:
        """Baseline users talk to the aggregator only, so I is simply A."""
        if len(self._shares) < self.cfg.threshold:
            return None, "below-threshold-A"
        users = tuple(sorted(self._shares))
        self._i_users = users
        return self._make_i_roster(users), None

    def baseline_unmask(self) -> Tuple[Optional[GlobalModel], Optional[str]]:
        """theta = sum of masked updates over I minus every node's mask sum."""
        if self._i_users is None:
            return None, "no-common-roster"
        expected = {n.index for n in self.cfg.intermediates}
        if set(self._partials) != expected:
            return None, "missing-partial"
        users = self._i_users
        total = sum_vectors([self._shares[u].payload for u in users])
        for i in sorted(self._partials):
            total = total - self._partials[i].payload
        roster_i = Roster.make(self.round, RosterKind.I, self.node_id, users)
        return GlobalModel(self.round, total, roster_i), None
