"""Append-only transcript of every message sent over the simulated bus.

Records carry a digest of the canonical message bytes rather than the
message itself, which keeps transcripts compact while still making
replays comparable byte-for-byte. The JSONL export (sorted keys, fixed
separators) is the determinism surface: identical script + seed must
produce an identical export.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..messages import Message, canonical_bytes


def message_digest(msg: Message) -> str:
    return hashlib.blake2b(canonical_bytes(msg), digest_size=16).hexdigest()


@dataclass(frozen=True)
class TranscriptRecord:
    round: int
    phase: str
    sender: str
    receiver: str
    msg_type: str
    digest: str
    delivered: bool = True


@dataclass
class RoundOutcome:
    round: int
    success: bool = False
    abort_reason: Optional[str] = None
    i_users: Tuple[int, ...] = ()
    theta_digest: Optional[str] = None
    verdicts: Dict[int, str] = dc_field(default_factory=dict)
    rejections: List[Tuple[str, str, str]] = dc_field(default_factory=list)
    events: List[str] = dc_field(default_factory=list)

    def all_accept(self) -> bool:
        return self.success and all(v == "accept" for v in self.verdicts.values())


@dataclass
class Transcript:
    meta: Dict = dc_field(default_factory=dict)
    records: List[TranscriptRecord] = dc_field(default_factory=list)
    outcomes: List[RoundOutcome] = dc_field(default_factory=list)

    def add(self, record: TranscriptRecord) -> None:
        self.records.append(record)

    def export_jsonl(self) -> str:
        lines = [json.dumps({"t": "meta", **self.meta}, sort_keys=True,
                            separators=(",", ":"))]
        for rec in self.records:
            lines.append(json.dumps(
                {
                    "t": "msg",
                    "round": rec.round,
                    "phase": rec.phase,
                    "from": rec.sender,
                    "to": rec.receiver,
                    "type": rec.msg_type,
                    "digest": rec.digest,
                    "delivered": rec.delivered,
                },
                sort_keys=True, separators=(",", ":"),
            ))
        for out in self.outcomes:
            lines.append(json.dumps(
                {
                    "t": "outcome",
                    "round": out.round,
                    "success": out.success,
                    "abort": out.abort_reason,
                    "i": list(out.i_users),
                    "theta": out.theta_digest,
                    "verdicts": {str(k): v for k, v in sorted(out.verdicts.items())},
                    "rejections": [list(r) for r in out.rejections],
                    "events": out.events,
                },
                sort_keys=True, separators=(",", ":"),
            ))
        return "\n".join(lines) + "\n"

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text(self.export_jsonl())


def check_single_theta(transcript: Transcript) -> bool:
    """Honest-aggregator invariant: one theta digest per round."""
    per_round: Dict[int, set] = {}
    for rec in transcript.records:
        if rec.msg_type == "GlobalModel" and rec.sender == "aggregator:0":
            per_round.setdefault(rec.round, set()).add(rec.digest)
    return all(len(digests) == 1 for digests in per_round.values())
