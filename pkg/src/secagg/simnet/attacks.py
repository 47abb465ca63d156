"""Key-compromise reconstruction attacks and scripted attack scenarios.

The baseline masker derives every round's masks from long-term seeds, so
an adversary holding all of one user's seeds (and the masked updates,
which the colluding servers see) recovers that user's input in every
round, past and future. With any proper subset of the seeds at least one
mask stays unknown and the update keeps information-theoretic secrecy.

Against the fresh-mask protocol the same adversary, given the complete
key material of one round, recovers only that round: applying round-t
keys to any other round leaves a uniformly random residual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .. import crypto
from ..field import FieldVector, sum_vectors
from ..messages import MaskedShare, NodeId
from ..roles import MaliceKind, MaliceScript
from ..session import Masker, Mode
from .runner import SimResult, run
from .scenario import DropEvent, Phase, ScenarioScript, SybilEvent


@dataclass(frozen=True)
class FsbsReport:
    masker: str
    target_user: int
    leaked: str  # "all-seeds" | "partial-seeds" | "round-keys"
    leak_round: Optional[int]
    rounds_total: int
    recovered_rounds: Tuple[int, ...]
    residuals_uniform: bool

    @property
    def recovered_fraction(self) -> float:
        return len(self.recovered_rounds) / self.rounds_total


def _target_shares(result: SimResult, target: int) -> Dict[int, Dict[NodeId, FieldVector]]:
    """Per-round masked shares of one user, as the colluding servers saw them."""
    shares: Dict[int, Dict[NodeId, FieldVector]] = {}
    for r, phase, sender, receiver, msg in result.captured:
        if isinstance(msg, MaskedShare) and msg.sender.index == target:
            shares.setdefault(r, {})[receiver] = msg.payload
    return shares


def _looks_uniform(values: np.ndarray, q: int) -> bool:
    """Coarse moment test: residuals of a failed unmasking should look like
    uniform draws from [0, q)."""
    n = values.size
    if n < 16:
        return False
    scaled = values.astype(np.float64) / q
    mean_tol = 4.0 * math.sqrt(1.0 / 12.0 / n)
    if abs(float(scaled.mean()) - 0.5) > mean_tol:
        return False
    return 0.12 < float(scaled.std()) < 0.45


def attack_fsbs_baseline(
    script: ScenarioScript, target_user: int, partial_leak: bool = False
) -> FsbsReport:
    """Appendix-style seed-compromise attack against the PRF baseline."""
    if script.masker is not Masker.PRF_BASELINE:
        raise ValueError("baseline attack needs a prf-baseline script")
    result = run(script, capture=True)
    cfg = result.cfg
    nodes = cfg.intermediates
    leaked_nodes = nodes[:-1] if partial_leak else nodes

    shares = _target_shares(result, target_user)
    recovered = []
    residuals = []
    for r in sorted(shares):
        masked = next(iter(shares[r].values()))
        masks = [
            crypto.baseline_prf_mask(
                result.baseline_seeds[(target_user, a.index)], r, cfg.vec_len, cfg.params
            )
            for a in leaked_nodes
        ]
        guess = masked - sum_vectors(masks) if masks else masked
        truth = result.inputs.get((r, target_user))
        if truth is not None and guess == truth:
            recovered.append(r)
        else:
            residuals.append(guess.elems)
    uniform = (
        _looks_uniform(np.concatenate(residuals), cfg.params.q) if residuals else True
    )
    return FsbsReport(
        masker=script.masker.value,
        target_user=target_user,
        leaked="partial-seeds" if partial_leak else "all-seeds",
        leak_round=None,
        rounds_total=script.rounds,
        recovered_rounds=tuple(recovered),
        residuals_uniform=uniform,
    )


def attack_fsbs_keyneg(
    script: ScenarioScript, target_user: int, leak_round: int
) -> FsbsReport:
    """Same adversary against the fresh-mask protocol, given every mask
    vector the target drew in `leak_round`."""
    if script.masker is not Masker.KEYNEG:
        raise ValueError("keyneg attack needs a keyneg script")
    if script.per_user_cycles:
        raise ValueError("attack assumes the canonical node cycle")
    result = run(script, capture=True, escrow=True)
    cfg = result.cfg
    keys = result.escrow[(leak_round, target_user)]
    cycle = cfg.nodes
    n = cfg.n_nodes

    shares = _target_shares(result, target_user)
    recovered = []
    residuals = []
    for r in sorted(shares):
        node = cycle[0]
        prev = cycle[-1]
        c = shares[r][node]
        unmasked = c - keys[node] + keys[prev]
        guess = FieldVector(
            cfg.params,
            _scalar_mul(unmasked.elems, n, cfg.params.q),
        )
        truth = result.inputs.get((r, target_user))
        if truth is not None and guess == truth:
            recovered.append(r)
        else:
            residuals.append(unmasked.elems)
    uniform = (
        _looks_uniform(np.concatenate(residuals), cfg.params.q) if residuals else True
    )
    return FsbsReport(
        masker=script.masker.value,
        target_user=target_user,
        leaked="round-keys",
        leak_round=leak_round,
        rounds_total=script.rounds,
        recovered_rounds=tuple(recovered),
        residuals_uniform=uniform,
    )


def _scalar_mul(elems: np.ndarray, c: int, q: int) -> np.ndarray:
    from .. import backend

    return backend.scalar_mul_mod(elems, c % q, q)


# ---------------------------------------------------------------------------
# Canned attack scenarios (used by the CLI demos and the acceptance tests)
# ---------------------------------------------------------------------------


def inconsistency_script(seed: int = 1, mode: Mode = Mode.MALICIOUS) -> ScenarioScript:
    return ScenarioScript(
        name="divergent-theta",
        seed=seed,
        rounds=1,
        users=(0, 1, 2, 3, 4),
        vec_len=8,
        threshold=3,
        n_intermediate=2,
        mode=mode,
        malice=MaliceScript(MaliceKind.DIVERGENT_THETA, target_user=2, rounds=(1,)),
    )


def roster_forge_script(seed: int = 1, mode: Mode = Mode.MALICIOUS) -> ScenarioScript:
    return ScenarioScript(
        name="roster-forge",
        seed=seed,
        rounds=1,
        users=(0, 1, 2, 3, 4),
        vec_len=8,
        threshold=3,
        n_intermediate=2,
        mode=mode,
        malice=MaliceScript(MaliceKind.FORGE_ROSTER, rounds=(1,)),
    )


def drop_honest_script(seed: int = 1, mode: Mode = Mode.MALICIOUS) -> ScenarioScript:
    return ScenarioScript(
        name="drop-honest-user",
        seed=seed,
        rounds=1,
        users=(0, 1, 2, 3, 4),
        vec_len=8,
        threshold=3,
        n_intermediate=2,
        mode=mode,
        malice=MaliceScript(MaliceKind.DROP_HONEST_USER, target_user=4, rounds=(1,)),
    )


def sybil_script(seed: int = 1) -> ScenarioScript:
    # The impersonated user is offline this round; the attacker forges its
    # shares with a different signing key.
    return ScenarioScript(
        name="sybil",
        seed=seed,
        rounds=1,
        users=(0, 1, 2, 3, 4),
        vec_len=8,
        threshold=3,
        n_intermediate=2,
        mode=Mode.MALICIOUS,
        drops=(DropEvent(1, 4, Phase.MASKING, None),),
        sybils=(SybilEvent(1, 4),),
    )


def fsbs_script(
    seed: int = 1, masker: Masker = Masker.PRF_BASELINE, rounds: int = 5
) -> ScenarioScript:
    return ScenarioScript(
        name=f"fsbs-{masker.value}",
        seed=seed,
        rounds=rounds,
        users=(0, 1, 2, 3),
        vec_len=64,
        threshold=2,
        n_intermediate=3,
        mode=Mode.SEMI_HONEST,
        masker=masker,
    )
