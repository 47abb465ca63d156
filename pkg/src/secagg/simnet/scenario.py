"""Declarative simulation scripts: participants, rounds, dropout/join
events, and attack injections, loaded from JSON.

The seed fully determines a run: party key material, per-round masks,
synthetic inputs, and every scripted event derive from it, so replaying
the same script yields a byte-identical transcript.

Rounds are numbered 1..rounds. A drop event silences a user from the
given phase onward within its round (masking drops may name the subset of
nodes that still received the share, which is how I ends up a strict
subset of A). Joins take effect at the scripted round's masking phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from enum import Enum
from pathlib import Path
from typing import Optional, Tuple

from ..field import PRIME_M61, FieldParams
from ..messages import AGGREGATOR_ID, NodeId, Role, intermediate_id
from ..roles import MaliceKind, MaliceScript
from ..session import Masker, Mode, SessionConfig


class Phase(str, Enum):
    MASKING = "masking"
    ROSTER = "roster"
    I_BROADCAST = "i-broadcast"
    PARTIAL_AGG = "partial-agg"
    FINAL_AGG = "final-agg"
    THETA_BROADCAST = "theta-broadcast"
    VERIFICATION = "verification"


PHASE_ORDER = list(Phase)


def phase_index(p: Phase) -> int:
    return PHASE_ORDER.index(p)


class ScenarioError(ValueError):
    """Scenario validation failure; message names the offending field."""


def parse_node_name(name: str) -> NodeId:
    try:
        role_str, _, idx_str = name.partition(":")
        role = {"user": Role.USER, "intermediate": Role.INTERMEDIATE,
                "aggregator": Role.AGGREGATOR}[role_str]
        return NodeId(role, int(idx_str))
    except (KeyError, ValueError):
        raise ScenarioError(f"bad node name {name!r} (want e.g. 'intermediate:1')")


@dataclass(frozen=True)
class DropEvent:
    round: int
    user: int
    phase: Phase = Phase.MASKING
    deliver_to: Optional[Tuple[NodeId, ...]] = None  # masking-phase partial delivery


@dataclass(frozen=True)
class JoinEvent:
    round: int
    user: int


@dataclass(frozen=True)
class LeaveEvent:
    round: int
    user: int


@dataclass(frozen=True)
class SybilEvent:
    """An attacker injects shares claiming to be `victim`, signed with a key
    that is not the victim's."""

    round: int
    victim: int


@dataclass(frozen=True)
class ScenarioScript:
    name: str = "scenario"
    seed: int = 0
    rounds: int = 1
    users: Tuple[int, ...] = ()
    vec_len: int = 16
    threshold: int = 2
    n_intermediate: int = 2
    mode: Mode = Mode.SEMI_HONEST
    masker: Masker = Masker.KEYNEG
    q: int = PRIME_M61
    per_user_cycles: bool = False
    inputs: str = "random-field"  # or "zeros"
    drops: Tuple[DropEvent, ...] = ()
    joins: Tuple[JoinEvent, ...] = ()
    leaves: Tuple[LeaveEvent, ...] = ()
    sybils: Tuple[SybilEvent, ...] = ()
    malice: Optional[MaliceScript] = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ScenarioError("rounds: must be >= 1")
        if len(set(self.users)) != len(self.users):
            raise ScenarioError("users: duplicate ids")
        if self.inputs not in ("random-field", "zeros"):
            raise ScenarioError(f"inputs: unknown kind {self.inputs!r}")
        joined = set(self.users)
        for i, ev in enumerate(self.joins):
            if ev.user in joined:
                raise ScenarioError(f"joins[{i}]: user {ev.user} already present")
            joined.add(ev.user)
        for kind, events in (("drops", self.drops), ("leaves", self.leaves),
                             ("sybils", self.sybils)):
            for i, ev in enumerate(events):
                if not 1 <= ev.round <= self.rounds:
                    raise ScenarioError(f"{kind}[{i}].round: {ev.round} outside 1..{self.rounds}")
                user = ev.victim if isinstance(ev, SybilEvent) else ev.user
                if user not in joined:
                    raise ScenarioError(f"{kind}[{i}]: unknown user {user}")
        for i, ev in enumerate(self.joins):
            if not 1 <= ev.round <= self.rounds:
                raise ScenarioError(f"joins[{i}].round: {ev.round} outside 1..{self.rounds}")
        if self.sybils and self.mode is not Mode.MALICIOUS:
            raise ScenarioError("sybils: forged signatures require malicious mode")
        if self.malice is not None and self.malice.rounds is not None:
            for r in self.malice.rounds:
                if not 1 <= r <= self.rounds:
                    raise ScenarioError(f"malice.rounds: {r} outside 1..{self.rounds}")

    def session_config(self) -> SessionConfig:
        return SessionConfig(
            vec_len=self.vec_len,
            threshold=self.threshold,
            n_intermediate=self.n_intermediate,
            mode=self.mode,
            masker=self.masker,
            params=FieldParams(self.q),
            per_user_cycles=self.per_user_cycles,
        )


# ---------------------------------------------------------------------------
# JSON loading
# ---------------------------------------------------------------------------

_SESSION_KEYS = {"vec_len", "threshold", "n_intermediate", "mode", "masker", "q",
                 "per_user_cycles"}


def scenario_from_dict(doc: dict) -> ScenarioScript:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = set(doc) - {"name", "seed", "rounds", "users", "session", "inputs", "events"}
    if unknown:
        raise ScenarioError(f"unknown top-level fields: {sorted(unknown)}")
    session = doc.get("session", {})
    if not isinstance(session, dict):
        raise ScenarioError("session: must be an object")
    bad = set(session) - _SESSION_KEYS
    if bad:
        raise ScenarioError(f"session: unknown fields {sorted(bad)}")

    drops, joins, leaves, sybils = [], [], [], []
    malice = None
    for i, ev in enumerate(doc.get("events", [])):
        where = f"events[{i}]"
        if not isinstance(ev, dict) or "kind" not in ev:
            raise ScenarioError(f"{where}: each event needs a 'kind'")
        kind = ev["kind"]
        try:
            if kind == "drop":
                deliver = ev.get("deliver_to")
                deliver_to = (
                    tuple(parse_node_name(n) for n in deliver) if deliver is not None else None
                )
                drops.append(
                    DropEvent(ev["round"], ev["user"], Phase(ev.get("phase", "masking")),
                              deliver_to)
                )
            elif kind == "join":
                joins.append(JoinEvent(ev["round"], ev["user"]))
            elif kind == "leave":
                leaves.append(LeaveEvent(ev["round"], ev["user"]))
            elif kind == "sybil":
                sybils.append(SybilEvent(ev["round"], ev["victim"]))
            elif kind == "malice":
                if malice is not None:
                    raise ScenarioError(f"{where}: only one malice event allowed")
                rounds = ev.get("round")
                malice = MaliceScript(
                    kind=MaliceKind(ev["attack"]),
                    target_user=ev.get("target"),
                    rounds=(rounds,) if isinstance(rounds, int) else (
                        tuple(rounds) if rounds is not None else None
                    ),
                )
            else:
                raise ScenarioError(f"{where}.kind: unknown event kind {kind!r}")
        except KeyError as exc:
            raise ScenarioError(f"{where}: missing field {exc.args[0]!r}")
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{where}: {exc}")

    try:
        return ScenarioScript(
            name=doc.get("name", "scenario"),
            seed=int(doc.get("seed", 0)),
            rounds=int(doc.get("rounds", 1)),
            users=tuple(int(u) for u in doc.get("users", [])),
            vec_len=int(session.get("vec_len", 16)),
            threshold=int(session.get("threshold", 2)),
            n_intermediate=int(session.get("n_intermediate", 2)),
            mode=Mode(session.get("mode", "semi-honest")),
            masker=Masker(session.get("masker", "keyneg")),
            q=int(session.get("q", PRIME_M61)),
            per_user_cycles=bool(session.get("per_user_cycles", False)),
            inputs=doc.get("inputs", "random-field"),
            drops=tuple(drops),
            joins=tuple(joins),
            leaves=tuple(leaves),
            sybils=tuple(sybils),
            malice=malice,
        )
    except ScenarioError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc))


def load_scenario(path: str | Path) -> ScenarioScript:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}")
    return scenario_from_dict(doc)
