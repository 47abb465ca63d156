"""Intermediate-server state machine: share collection, roster emission
under the participation threshold, partial aggregation over I, and
verification-tuple relay.

Servers are assumed online for the whole session; a server that aborts a
round (too few shares) is re-admitted the next round. Phase closure is an
explicit orchestrator signal rather than a timeout, which keeps runs
deterministic.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .. import crypto
from ..field import FieldVector, sum_vectors
from ..messages import (
    AGGREGATOR_ID,
    MaskedShare,
    NodeId,
    PartialAggregate,
    Roster,
    RosterKind,
    VerificationTuple,
    intermediate_id,
    signing_bytes,
)
from ..session import KeyRegistry, Mode, SessionConfig
from . import CollectOutcome, ProtocolViolation


class IntermediateParty:
    def __init__(
        self,
        index: int,
        cfg: SessionConfig,
        rng: np.random.Generator,
        registry: Optional[KeyRegistry] = None,
    ):
        self.index = index
        self.node_id = intermediate_id(index)
        self.cfg = cfg
        self.rng = rng
        self.registry = registry
        self.round = -1
        self.keypair: Optional[crypto.KeyPair] = None
        self._shares: Dict[int, MaskedShare] = {}
        self._roster: Optional[Roster] = None
        self._baseline_seeds: Dict[int, crypto.LongTermSeed] = {}
        if cfg.mode is Mode.MALICIOUS:
            self.keypair = crypto.sig_gen(rng, owner=self.node_id)
            if registry is not None:
                registry.register(self.node_id, self.keypair.public_bytes)

    def begin_round(self, round_index: int) -> None:
        self.round = round_index
        self._shares = {}
        self._roster = None

    # -- masking round --------------------------------------------------------

    def collect_share(self, share: MaskedShare) -> CollectOutcome:
        """Store a user's share; first one wins, forged signatures rejected."""
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

    def emit_roster(self) -> Optional[Roster]:
        """F_j of collected users; None (abort) below the threshold."""
        if len(self._shares) < self.cfg.threshold:
            return None
        roster = Roster.make(self.round, RosterKind.F, self.node_id, self._shares.keys())
        if self.cfg.mode is Mode.MALICIOUS:
            sig = crypto.sig_sign(self.keypair.private_bytes, signing_bytes(roster))
            roster = Roster(roster.round, roster.kind, roster.owner, roster.users, sig)
        self._roster = roster
        return roster

    # -- partial aggregation ----------------------------------------------------

    def _verify_aggregator(self, msg) -> bool:
        if self.cfg.mode is not Mode.MALICIOUS:
            return True
        pub = self.registry.lookup(AGGREGATOR_ID) if self.registry else None
        return (
            pub is not None
            and msg.signature is not None
            and crypto.sig_verify(pub, signing_bytes(msg), msg.signature)
        )

    def partial_aggregate(self, roster_i: Roster) -> Optional[PartialAggregate]:
        """Field sum of exactly the stored shares of users in I.

        Returns None when the aggregator's signature on I fails (round
        rejected). An I naming a user with no share here is impossible
        under an honest aggregator (I is a subset of F_j by construction),
        so it raises instead of being silently skipped.
        """
        if len(roster_i) < self.cfg.threshold:
            raise ProtocolViolation("aggregator broadcast an under-threshold I")
        if not self._verify_aggregator(roster_i):
            return None
        missing = [u for u in roster_i.users if u not in self._shares]
        if missing:
            raise ProtocolViolation(f"I names users with no stored share: {missing}")
        payload = sum_vectors([self._shares[u].payload for u in roster_i.users])
        pa = PartialAggregate(self.round, self.node_id, payload)
        if self.cfg.mode is Mode.MALICIOUS:
            sig = crypto.sig_sign(self.keypair.private_bytes, signing_bytes(pa))
            pa = PartialAggregate(self.round, self.node_id, payload, sig)
        return pa

    # -- verification relay -------------------------------------------------------

    def relay_verification(self, vt: VerificationTuple) -> Optional[VerificationTuple]:
        """Forward the tuple to the users in I with own F roster attached;
        nothing is relayed when the aggregator's signature fails."""
        if not self._verify_aggregator(vt):
            return None
        if self._roster is None:
            raise ProtocolViolation("relay requested before roster emission")
        return vt.with_relay(self.node_id, self._roster)

    # -- baseline (long-term-seed) flow ---------------------------------------

    def install_baseline_seed(self, seed: crypto.LongTermSeed) -> None:
        self._baseline_seeds[seed.user_index] = seed

    def collect_baseline_presence(self, share: MaskedShare) -> CollectOutcome:
        """Baseline users send their masked update to the aggregator only;
        servers just track presence for the roster."""
        return self.collect_share(share)

    def baseline_mask_sum(self, roster_i: Roster) -> PartialAggregate:
        """Sum of this node's PRF masks over the users in I; lets the
        aggregator strip the aggregate mask without seeing any single one."""
        masks = [
            crypto.baseline_prf_mask(
                self._baseline_seeds[u], self.round, self.cfg.vec_len, self.cfg.params
            )
            for u in roster_i.users
        ]
        payload = sum_vectors(masks) if masks else FieldVector.zeros(
            self.cfg.params, self.cfg.vec_len
        )
        pa = PartialAggregate(self.round, self.node_id, payload)
        if self.cfg.mode is Mode.MALICIOUS:
            sig = crypto.sig_sign(self.keypair.private_bytes, signing_bytes(pa))
            pa = PartialAggregate(self.round, self.node_id, payload, sig)
        return pa
