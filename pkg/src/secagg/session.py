"""Shared session configuration and the in-process key registry.

A session fixes the field, vector length, participation threshold, and
the node set N (intermediate servers plus the aggregator). The registry
stands in for a PKI: every party's verification key is installed there
at join time and looked up by NodeId.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Dict, List, Optional

from .field import DEFAULT_PARAMS, FieldParams
from .messages import AGGREGATOR_ID, NodeId, intermediate_id


class Mode(str, Enum):
    SEMI_HONEST = "semi-honest"
    MALICIOUS = "malicious"


class Masker(str, Enum):
    KEYNEG = "keyneg"
    PRF_BASELINE = "prf-baseline"


@dataclass(frozen=True)
class SessionConfig:
    vec_len: int
    threshold: int
    n_intermediate: int
    mode: Mode = Mode.SEMI_HONEST
    masker: Masker = Masker.KEYNEG
    params: FieldParams = DEFAULT_PARAMS
    per_user_cycles: bool = False

    def __post_init__(self):
        if self.vec_len < 1:
            raise ValueError("vector length must be >= 1")
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.n_intermediate < 1:
            raise ValueError("need at least one intermediate server")
        if self.params.q <= self.n_nodes:
            # n must be invertible mod q for the x/n share term.
            raise ValueError("modulus must exceed the node count")

    @property
    def n_nodes(self) -> int:
        """|N|: intermediate servers plus the aggregator."""
        return self.n_intermediate + 1

    @property
    def intermediates(self) -> List[NodeId]:
        return [intermediate_id(i) for i in range(1, self.n_intermediate + 1)]

    @property
    def nodes(self) -> List[NodeId]:
        """Canonical node order: intermediates ascending, aggregator last."""
        return self.intermediates + [AGGREGATOR_ID]


@dataclass
class KeyRegistry:
    """In-process stand-in for a PKI: NodeId -> verification key bytes."""

    _keys: Dict[NodeId, bytes] = dc_field(default_factory=dict)

    def register(self, node: NodeId, public_bytes: bytes) -> None:
        self._keys[node] = public_bytes

    def lookup(self, node: NodeId) -> Optional[bytes]:
        return self._keys.get(node)
