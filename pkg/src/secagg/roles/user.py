"""User state machine: mask generation along the node cycle, share emission,
and global-model verification with inconsistency detection.

Masking follows the key-negation construction: per round the user draws
one fresh random vector k_j per node in N, and the share addressed to the
node at cycle position j is x*n^-1 + k_j - k_{j-1 mod n}. The n shares
telescope: their field sum is exactly x, while any proper subset stays
uniformly random. Keys live only inside ``make_shares`` scope and are
erased from the state before the call returns; nothing persists across
rounds, which is what gives the protocol forward and backward secrecy.
"""

from __future__ import annotations

from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .. import crypto
from ..field import FieldVector, scale_by_inverse
from ..messages import (
    AGGREGATOR_ID,
    GlobalModel,
    MaskedShare,
    NodeId,
    VerificationTuple,
    intermediate_id,
    signing_bytes,
    theta_auth_bytes,
    user_id,
)
from ..session import KeyRegistry, Masker, Mode, SessionConfig
from . import Verdict


class UserStatus(str, Enum):
    ACTIVE = "active"
    WITHDRAWN = "withdrawn"


class UserWithdrawn(Exception):
    """Raised when a withdrawn user is asked to participate."""


KeyEscrow = Callable[[int, int, Dict[NodeId, FieldVector]], None]


class UserParty:
    """One user's protocol state; owned by exactly one logical party."""

    def __init__(
        self,
        index: int,
        cfg: SessionConfig,
        rng: np.random.Generator,
        registry: Optional[KeyRegistry] = None,
        joined_round: int = 0,
        key_escrow: Optional[KeyEscrow] = None,
    ):
        self.index = index
        self.node_id = user_id(index)
        self.cfg = cfg
        self.rng = rng
        self.registry = registry
        self.joined_round = joined_round
        self.status = UserStatus.ACTIVE
        self.key_escrow = key_escrow
        self.keypair: Optional[crypto.KeyPair] = None
        self._round_keys: Optional[Dict[NodeId, FieldVector]] = None
        self._baseline_seeds: Dict[NodeId, crypto.LongTermSeed] = {}
        if cfg.mode is Mode.MALICIOUS:
            self.keypair = crypto.sig_gen(rng, owner=self.node_id)
            if registry is not None:
                registry.register(self.node_id, self.keypair.public_bytes)

    @classmethod
    def join(
        cls,
        index: int,
        cfg: SessionConfig,
        rng: np.random.Generator,
        registry: Optional[KeyRegistry],
        round_index: int,
        key_escrow: Optional[KeyEscrow] = None,
    ) -> "UserParty":
        """Join an in-progress session; active from round_index's masking phase.

        No pairwise setup with other users is needed: masks are fresh per
        round, so a joiner only registers its identity (and, in malicious
        mode, its verification key).
        """
        return cls(index, cfg, rng, registry, joined_round=round_index, key_escrow=key_escrow)

    # -- masking ------------------------------------------------------------

    def cycle(self) -> List[NodeId]:
        """Directed cycle over N. Canonical order by default; optionally a
        per-user random order (cancellation is per-user, so any order works)."""
        nodes = self.cfg.nodes
        if self.cfg.per_user_cycles:
            order = self.rng.permutation(len(nodes))
            return [nodes[i] for i in order]
        return nodes

    def make_shares(self, round_index: int, x: FieldVector) -> List[MaskedShare]:
        """Build the n masked shares of x for this round, one per node in N."""
        if self.status is not UserStatus.ACTIVE:
            raise UserWithdrawn(f"user {self.index} has withdrawn")
        if len(x) != self.cfg.vec_len:
            raise ValueError(f"update length {len(x)} != session length {self.cfg.vec_len}")
        if self.cfg.masker is not Masker.KEYNEG:
            raise ValueError("make_shares applies to the key-negation masker")

        cycle = self.cycle()
        n = len(cycle)
        keys = {
            node: crypto.fresh_mask(self.rng, self.cfg.vec_len, self.cfg.params)
            for node in cycle
        }
        self._round_keys = keys
        if self.key_escrow is not None:
            self.key_escrow(self.index, round_index, dict(keys))

        x_over_n = scale_by_inverse(x, n)
        shares = []
        for j, node in enumerate(cycle):
            payload = x_over_n + keys[node] - keys[cycle[j - 1]]
            share = MaskedShare(round_index, self.node_id, node, payload)
            if self.cfg.mode is Mode.MALICIOUS:
                sig = crypto.sig_sign(self.keypair.private_bytes, signing_bytes(share))
                share = MaskedShare(round_index, self.node_id, node, payload, sig)
            shares.append(share)

        # Erase key material: masks must never outlive share emission.
        self._round_keys = None
        del keys
        return shares

    # -- baseline masking (long-term-seed PRF; comparison target only) -------

    def install_baseline_seed(self, seed: crypto.LongTermSeed) -> None:
        self._baseline_seeds[intermediate_id(seed.node_index)] = seed

    def make_baseline_update(self, round_index: int, x: FieldVector) -> MaskedShare:
        """Single masked update x + sum of PRF(seed, round) masks, sent to the
        aggregator; assisting nodes later supply the mask sums for unmasking."""
        if self.status is not UserStatus.ACTIVE:
            raise UserWithdrawn(f"user {self.index} has withdrawn")
        if len(x) != self.cfg.vec_len:
            raise ValueError(f"update length {len(x)} != session length {self.cfg.vec_len}")
        masked = x
        for node in self.cfg.intermediates:
            mask = crypto.baseline_prf_mask(
                self._baseline_seeds[node], round_index, self.cfg.vec_len, self.cfg.params
            )
            masked = masked + mask
        share = MaskedShare(round_index, self.node_id, AGGREGATOR_ID, masked)
        if self.cfg.mode is Mode.MALICIOUS:
            sig = crypto.sig_sign(self.keypair.private_bytes, signing_bytes(share))
            share = MaskedShare(round_index, self.node_id, AGGREGATOR_ID, masked, sig)
        return share

    # -- verification ---------------------------------------------------------

    def verify_global(
        self, gm: GlobalModel, tuples: Sequence[VerificationTuple]
    ) -> Verdict:
        """Check the relayed verification tuples against the received model.

        Verdict depends only on message contents, never on arrival order.
        On any detection the user withdraws from future rounds.
        """
        verdict = self._verify(gm, tuples)
        if verdict is not Verdict.ACCEPT:
            self.status = UserStatus.WITHDRAWN
        return verdict

    def _verify(self, gm: GlobalModel, tuples: Sequence[VerificationTuple]) -> Verdict:
        cfg = self.cfg
        tuples = sorted(tuples, key=lambda v: (v.relayer is None, v.relayer))

        # One tuple per intermediate server; absence is aggregator misbehavior.
        if len(tuples) < cfg.n_intermediate:
            return Verdict.DETECT_BAD_ROSTER

        if cfg.mode is Mode.MALICIOUS:
            agg_pub = self.registry.lookup(AGGREGATOR_ID) if self.registry else None
            for vt in tuples:
                if (
                    agg_pub is None
                    or vt.signature is None
                    or not crypto.sig_verify(agg_pub, signing_bytes(vt), vt.signature)
                ):
                    return Verdict.DETECT_BAD_SIGNATURE

        # Roster consistency: I = A intersect all F_j, at or above threshold,
        # identical in every tuple and in the broadcast model.
        if any(vt.roster_f is None for vt in tuples):
            return Verdict.DETECT_BAD_ROSTER
        ref = tuples[0]
        for vt in tuples[1:]:
            if vt.roster_a.users != ref.roster_a.users or vt.roster_i.users != ref.roster_i.users:
                return Verdict.DETECT_BAD_ROSTER
        expected = set(ref.roster_a.users)
        for vt in tuples:
            expected &= set(vt.roster_f.users)
        expected_users = tuple(sorted(expected))
        if ref.roster_i.users != expected_users or len(expected_users) < cfg.threshold:
            return Verdict.DETECT_BAD_ROSTER
        if gm.roster_i.users != ref.roster_i.users or gm.round != ref.round:
            return Verdict.DETECT_BAD_ROSTER

        # Model consistency: recover s_t = R - H(theta), check every MAC, and
        # require all relayed tags to be identical.
        auth = theta_auth_bytes(gm.round, gm.theta)
        h = crypto.hash_to_field(auth, cfg.params)
        q = cfg.params.q
        for vt in tuples:
            s_rec = (vt.r_value - h) % q
            if crypto.mac(crypto.mac_key_from_element(s_rec), auth) != vt.s_tag:
                return Verdict.DETECT_INCONSISTENCY
            if vt.s_tag != ref.s_tag or vt.r_value != ref.r_value:
                return Verdict.DETECT_INCONSISTENCY

        return Verdict.ACCEPT
