"""Round-synchronous orchestration of all parties over an in-memory bus.

Each round executes the phase sequence masking -> roster -> I-broadcast ->
partial-agg -> final-agg -> theta-broadcast -> verification. Phase closure
is an orchestrator signal rather than a timeout, which makes runs
deterministic: identical script + seed gives a byte-identical transcript.

Two execution modes share this code path. In the sequential mode every
party step runs inline; in the parallel mode the compute-heavy party
steps (mask generation, partial aggregation, verification) run on a
thread pool while delivery stays ordered by sorted party id, so the two
modes produce identical transcripts - equality between them is itself a
test.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .. import crypto
from ..field import FieldVector
from ..messages import (
    AGGREGATOR_ID,
    GlobalModel,
    MaskedShare,
    Message,
    NodeId,
    signing_bytes,
    user_id,
)
from ..roles import (
    AggregatorParty,
    CollectOutcome,
    IntermediateParty,
    MaliceScript,
    ProtocolViolation,
    UserParty,
)
from ..roles.user import UserStatus
from ..session import KeyRegistry, Masker, Mode, SessionConfig
from .scenario import DropEvent, Phase, ScenarioScript, SybilEvent, phase_index
from .transcript import RoundOutcome, Transcript, TranscriptRecord, message_digest


@dataclass
class SimResult:
    script: Optional[ScenarioScript]
    cfg: SessionConfig
    transcript: Transcript
    outcomes: List[RoundOutcome]
    inputs: Dict[Tuple[int, int], FieldVector]
    captured: List[Tuple[int, str, NodeId, NodeId, Message]]
    escrow: Dict[Tuple[int, int], Dict[NodeId, FieldVector]]
    baseline_seeds: Dict[Tuple[int, int], crypto.LongTermSeed]
    users: Dict[int, UserParty]

    def all_rounds_ok(self) -> bool:
        return all(o.all_accept() for o in self.outcomes)


class ProtocolSession:
    """Owns the parties of one session and executes rounds on demand.

    The scenario runner drives it from a script; the FL harness drives it
    round by round with real encoded model updates.
    """

    def __init__(
        self,
        cfg: SessionConfig,
        seed: int,
        name: str = "session",
        capture: bool = False,
        escrow: bool = False,
        parallel: bool = False,
        malice: Optional[MaliceScript] = None,
    ):
        self.cfg = cfg
        self.seed = seed
        self.registry = KeyRegistry()
        self.capture = capture
        self.escrow_enabled = escrow
        self.transcript = Transcript(
            meta={
                "scenario": name,
                "seed": seed,
                "mode": cfg.mode.value,
                "masker": cfg.masker.value,
                "q": cfg.params.q,
                "vec_len": cfg.vec_len,
                "threshold": cfg.threshold,
                "n_intermediate": cfg.n_intermediate,
            }
        )
        self.outcomes: List[RoundOutcome] = []
        self.inputs: Dict[Tuple[int, int], FieldVector] = {}
        self.captured: List[Tuple[int, str, NodeId, NodeId, Message]] = []
        self.escrow: Dict[Tuple[int, int], Dict[NodeId, FieldVector]] = {}
        self.baseline_seeds: Dict[Tuple[int, int], crypto.LongTermSeed] = {}

        self.users: Dict[int, UserParty] = {}
        self.all_users: Dict[int, UserParty] = {}
        self.servers = [
            IntermediateParty(n.index, cfg, crypto.derive_rng(seed, "server", n.index),
                              self.registry)
            for n in cfg.intermediates
        ]
        self._server_by_node = {sv.node_id: sv for sv in self.servers}
        self.agg = AggregatorParty(
            cfg, crypto.derive_rng(seed, "aggregator"), self.registry, malice=malice
        )
        self._pool = ThreadPoolExecutor(max_workers=4) if parallel else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- membership ------------------------------------------------------------

    def add_user(self, index: int, joined_round: int = 1) -> UserParty:
        escrow_cb = None
        if self.escrow_enabled:
            def escrow_cb(uidx, r, keys, _store=self.escrow):
                _store[(r, uidx)] = keys

        user = UserParty.join(
            index,
            self.cfg,
            crypto.derive_rng(self.seed, "user", index),
            self.registry,
            joined_round,
            key_escrow=escrow_cb,
        )
        if self.cfg.masker is Masker.PRF_BASELINE:
            for node in self.cfg.intermediates:
                secret = crypto.derive_rng(self.seed, "lts", index, node.index).bytes(
                    crypto.SEED_LEN
                )
                seed = crypto.LongTermSeed(index, node.index, secret)
                user.install_baseline_seed(seed)
                self._server_by_node[node].install_baseline_seed(seed)
                self.baseline_seeds[(index, node.index)] = seed
        self.users[index] = user
        self.all_users[index] = user
        return user

    def remove_user(self, index: int) -> None:
        self.users.pop(index, None)

    # -- plumbing ----------------------------------------------------------------

    def _map(self, fn, items: Sequence):
        items = list(items)
        if self._pool is None or len(items) <= 1:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def _send(
        self,
        round_index: int,
        phase: Phase,
        sender: NodeId,
        receiver: NodeId,
        msg: Message,
        delivered: bool = True,
    ) -> None:
        self.transcript.add(
            TranscriptRecord(
                round_index,
                phase.value,
                str(sender),
                str(receiver),
                type(msg).__name__,
                message_digest(msg),
                delivered,
            )
        )
        if self.capture and delivered:
            self.captured.append((round_index, phase.value, sender, receiver, msg))

    @staticmethod
    def _node_sort_key(node: NodeId):
        return (node.role, node.index)

    # -- round execution ------------------------------------------------------------

    def run_round(
        self,
        round_index: int,
        inputs: Dict[int, FieldVector],
        drops: Sequence[DropEvent] = (),
        sybils: Sequence[SybilEvent] = (),
    ) -> RoundOutcome:
        """Execute one full round; inputs map user index -> update vector."""
        out = RoundOutcome(round=round_index)
        drop_map = {d.user: d for d in drops}

        for sv in self.servers:
            sv.begin_round(round_index)
        self.agg.begin_round(round_index)

        participants = [
            self.users[i]
            for i in sorted(inputs)
            if i in self.users and self.users[i].status is UserStatus.ACTIVE
        ]
        for u in participants:
            self.inputs[(round_index, u.index)] = inputs[u.index]

        def unreachable(uidx: int, phase: Phase) -> bool:
            d = drop_map.get(uidx)
            return d is not None and phase_index(phase) >= phase_index(d.phase)

        self._masking_phase(round_index, out, participants, inputs, drop_map, sybils)

        if self.cfg.masker is Masker.KEYNEG:
            gm = self._keyneg_core(round_index, out)
        else:
            gm = self._baseline_core(round_index, out)
        if gm is None:
            self.outcomes.append(out)
            return out

        out.theta_digest = message_digest(gm)
        theta_received = self._theta_phase(round_index, out, gm, unreachable)
        if self.cfg.masker is Masker.KEYNEG:
            self._verification_phase(round_index, out, gm, theta_received, unreachable)
        out.success = True
        self.outcomes.append(out)
        return out

    def _masking_phase(self, r, out, participants, inputs, drop_map, sybils) -> None:
        senders = []
        for u in participants:
            d = drop_map.get(u.index)
            if d is not None and d.phase is Phase.MASKING and d.deliver_to is None:
                out.events.append(f"user:{u.index} dropped before masking")
                continue
            senders.append(u)

        if self.cfg.masker is Masker.KEYNEG:
            share_lists = self._map(
                lambda u: u.make_shares(r, inputs[u.index]), senders
            )
        else:
            share_lists = self._map(
                lambda u: [u.make_baseline_update(r, inputs[u.index])], senders
            )

        for u, shares in zip(senders, share_lists):
            d = drop_map.get(u.index)
            allowed = None
            if d is not None and d.phase is Phase.MASKING and d.deliver_to is not None:
                allowed = set(d.deliver_to)
                out.events.append(
                    f"user:{u.index} dropped mid-masking, reached "
                    + ",".join(sorted(str(n) for n in allowed))
                )
            for share in sorted(shares, key=lambda s: self._node_sort_key(s.target)):
                ok = allowed is None or share.target in allowed
                self._send(r, Phase.MASKING, u.node_id, share.target, share, delivered=ok)
                if ok:
                    self._collect_share(out, share)

        for ev in sorted(sybils, key=lambda e: e.victim):
            atk_rng = crypto.derive_rng(self.seed, "sybil", r, ev.victim)
            atk_keys = crypto.sig_gen(atk_rng)
            payload = crypto.fresh_mask(atk_rng, self.cfg.vec_len, self.cfg.params)
            targets = self.cfg.nodes if self.cfg.masker is Masker.KEYNEG else [AGGREGATOR_ID]
            for node in targets:
                forged = MaskedShare(r, user_id(ev.victim), node, payload)
                sig = crypto.sig_sign(atk_keys.private_bytes, signing_bytes(forged))
                forged = MaskedShare(r, user_id(ev.victim), node, payload, sig)
                self._send(r, Phase.MASKING, forged.sender, node, forged)
                self._collect_share(out, forged)

    def _collect_share(self, out, share: MaskedShare) -> None:
        receiver = (
            self.agg
            if share.target == AGGREGATOR_ID
            else self._server_by_node[share.target]
        )
        result = receiver.collect_share(share)
        if result is not CollectOutcome.ACCEPTED:
            out.rejections.append((str(share.target), str(share.sender), result.value))

    def _keyneg_core(self, r, out) -> Optional[GlobalModel]:
        # Roster phase: servers close collection and report F_j.
        rosters = self._map(lambda sv: sv.emit_roster(), self.servers)
        for sv, roster in zip(self.servers, rosters):
            if roster is None:
                out.events.append(f"{sv.node_id} aborted: below-threshold-F")
                continue
            self._send(r, Phase.ROSTER, sv.node_id, AGGREGATOR_ID, roster)
            if not self.agg.collect_roster(roster):
                out.rejections.append(
                    (str(AGGREGATOR_ID), str(sv.node_id), "bad-signature")
                )

        i_roster, abort = self.agg.compute_i()
        if abort is not None:
            out.abort_reason = abort
            return None
        out.i_users = self.agg.theta_recipients()

        i_sent = {}
        for sv in self.servers:
            ir = self.agg.outgoing_i_roster(sv.node_id)
            i_sent[sv.node_id] = ir
            self._send(r, Phase.I_BROADCAST, AGGREGATOR_ID, sv.node_id, ir)

        try:
            partials = self._map(
                lambda sv: sv.partial_aggregate(i_sent[sv.node_id]), self.servers
            )
        except ProtocolViolation as exc:
            out.abort_reason = f"protocol-violation: {exc}"
            return None
        for sv, pa in zip(self.servers, partials):
            if pa is None:
                out.events.append(f"{sv.node_id} rejected round: bad aggregator signature")
                continue
            self._send(r, Phase.PARTIAL_AGG, sv.node_id, AGGREGATOR_ID, pa)
            if not self.agg.collect_partial(pa):
                out.rejections.append(
                    (str(AGGREGATOR_ID), str(sv.node_id), "bad-signature")
                )

        gm, fail = self.agg.final_aggregate()
        if fail is not None:
            out.abort_reason = fail
            return None
        return gm

    def _baseline_core(self, r, out) -> Optional[GlobalModel]:
        i_roster, abort = self.agg.baseline_compute_i()
        if abort is not None:
            out.abort_reason = abort
            return None
        out.i_users = i_roster.users

        for sv in self.servers:
            self._send(r, Phase.I_BROADCAST, AGGREGATOR_ID, sv.node_id, i_roster)
        mask_sums = self._map(lambda sv: sv.baseline_mask_sum(i_roster), self.servers)
        for sv, ms in zip(self.servers, mask_sums):
            self._send(r, Phase.PARTIAL_AGG, sv.node_id, AGGREGATOR_ID, ms)
            self.agg.collect_partial(ms)

        gm, fail = self.agg.baseline_unmask()
        if fail is not None:
            out.abort_reason = fail
            return None
        return gm

    def _theta_phase(self, r, out, gm, unreachable) -> Dict[int, GlobalModel]:
        received: Dict[int, GlobalModel] = {}
        for uidx in self.agg.theta_recipients():
            user = self.users.get(uidx)
            gm_u = self.agg.outgoing_theta(uidx, gm)
            ok = (
                user is not None
                and user.status is UserStatus.ACTIVE
                and not unreachable(uidx, Phase.THETA_BROADCAST)
            )
            self._send(r, Phase.THETA_BROADCAST, AGGREGATOR_ID, user_id(uidx), gm_u,
                       delivered=ok)
            if ok:
                received[uidx] = gm_u
        return received

    def _verification_phase(self, r, out, gm, theta_received, unreachable) -> None:
        vt = self.agg.build_verification(gm)
        inboxes: Dict[int, List] = {}
        for sv in self.servers:
            svt = self.agg.outgoing_verification(sv.node_id, vt)
            self._send(r, Phase.VERIFICATION, AGGREGATOR_ID, sv.node_id, svt)
            fwd = sv.relay_verification(svt)
            if fwd is None:
                out.events.append(f"{sv.node_id} refused relay: bad signature")
                continue
            for uidx in svt.roster_i.users:
                user = self.users.get(uidx)
                ok = (
                    user is not None
                    and user.status is UserStatus.ACTIVE
                    and not unreachable(uidx, Phase.VERIFICATION)
                )
                self._send(r, Phase.VERIFICATION, sv.node_id, user_id(uidx), fwd,
                           delivered=ok)
                if ok:
                    inboxes.setdefault(uidx, []).append(fwd)

        targets = sorted(theta_received)
        verdicts = self._map(
            lambda uidx: self.users[uidx].verify_global(
                theta_received[uidx], inboxes.get(uidx, [])
            ),
            targets,
        )
        for uidx, verdict in zip(targets, verdicts):
            out.verdicts[uidx] = verdict.value


def run(
    script: ScenarioScript,
    parallel: bool = False,
    capture: bool = False,
    escrow: bool = False,
) -> SimResult:
    """Execute a scenario script end to end and return the full result."""
    cfg = script.session_config()
    joins: Dict[int, List[int]] = {}
    for ev in script.joins:
        joins.setdefault(ev.round, []).append(ev.user)
    leaves: Dict[int, List[int]] = {}
    for ev in script.leaves:
        leaves.setdefault(ev.round, []).append(ev.user)
    drops: Dict[int, List[DropEvent]] = {}
    for ev in script.drops:
        drops.setdefault(ev.round, []).append(ev)
    sybils: Dict[int, List[SybilEvent]] = {}
    for ev in script.sybils:
        sybils.setdefault(ev.round, []).append(ev)

    with ProtocolSession(
        cfg,
        script.seed,
        name=script.name,
        capture=capture,
        escrow=escrow,
        parallel=parallel,
        malice=script.malice,
    ) as ses:
        ses.transcript.meta["users"] = sorted(script.users)
        ses.transcript.meta["rounds"] = script.rounds
        for u in sorted(script.users):
            ses.add_user(u, joined_round=1)
        for r in range(1, script.rounds + 1):
            for u in sorted(joins.get(r, [])):
                ses.add_user(u, joined_round=r)
            for u in sorted(leaves.get(r, [])):
                ses.remove_user(u)
            round_inputs = {
                idx: _derive_input(script, cfg, r, idx)
                for idx, user in sorted(ses.users.items())
                if user.status is UserStatus.ACTIVE
            }
            ses.run_round(r, round_inputs, drops.get(r, ()), sybils.get(r, ()))
        return SimResult(
            script=script,
            cfg=cfg,
            transcript=ses.transcript,
            outcomes=ses.outcomes,
            inputs=ses.inputs,
            captured=ses.captured,
            escrow=ses.escrow,
            baseline_seeds=ses.baseline_seeds,
            users=ses.all_users,
        )


def _derive_input(script: ScenarioScript, cfg: SessionConfig, r: int, idx: int) -> FieldVector:
    if script.inputs == "zeros":
        return FieldVector.zeros(cfg.params, cfg.vec_len)
    rng = crypto.derive_rng(script.seed, "input", r, idx)
    return crypto.fresh_mask(rng, cfg.vec_len, cfg.params)
