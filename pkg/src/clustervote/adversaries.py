"""Node behaviour policies: honest voting and the attacks of the risk analysis."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .protocol import (
    BallotPool,
    ClusterConfig,
    CollisionReport,
    ConfigError,
    NodeState,
    Seed,
    VBallotId,
    as_rng,
    respond_query,
    rule_a_plan,
)


class StrategyKind(str, enum.Enum):
    HONEST = "HONEST"
    CHEAT1 = "CHEAT1"
    CHEAT2 = "CHEAT2"
    COALITION_MEMBER = "COALITION_MEMBER"
    PRIVACY_COLLUDER = "PRIVACY_COLLUDER"


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind = StrategyKind.HONEST
    target: Optional[int] = None      # favoured option; None means the node's own vote
    coalition: Optional[int] = None   # shared-intel group; None means acting alone
    active: bool = False              # coalition member that actually cheats
    swaps: int = 1                    # CHEAT2 ids swapped per tamper
    stall: bool = False               # never answers within the deadline

    @property
    def cheats_in_stage1(self) -> bool:
        return self.kind is StrategyKind.CHEAT1 or (
            self.kind is StrategyKind.COALITION_MEMBER and self.active)

    @property
    def honest(self) -> bool:
        return self.kind is StrategyKind.HONEST and not self.stall


HONEST = Strategy()


@dataclass
class Intel:
    """What a group of colluders pooled: members, their selections, Stage 2 answers."""

    members: set[int] = field(default_factory=set)
    held: dict[int, list[VBallotId]] = field(default_factory=dict)
    responses: list[tuple[int, int, int, VBallotId]] = field(default_factory=list)

    def known_held(self, option: int, exclude: int = -1) -> list[VBallotId]:
        return [b for m, ids in sorted(self.held.items()) if m != exclude
                for b in ids if b.option == option]


@dataclass(frozen=True)
class AdversaryMix:
    """How many of each attacker a cluster contains; positions are drawn per election."""

    dn: int = 0                 # CHEAT1 nodes (or coalition size when coordinated)
    coordinated: bool = False
    active: str = "all"         # "all" or "single": which coalition members cheat
    cheat2: int = 0
    swaps: int = 1
    nt: int = 0                 # privacy colluders
    stallers: int = 0

    def __post_init__(self) -> None:
        if min(self.dn, self.cheat2, self.nt, self.stallers) < 0:
            raise ConfigError("adversary counts must be non-negative")
        if self.active not in ("all", "single"):
            raise ConfigError("active must be 'all' or 'single'")
        if self.swaps < 1:
            raise ConfigError("swaps must be >= 1")

    @property
    def total(self) -> int:
        return self.dn + self.cheat2 + self.nt + self.stallers

    @property
    def attacks_integrity(self) -> bool:
        return self.dn > 0 or self.cheat2 > 0

    def assign(self, sc: int, seed: Seed = None) -> list[Strategy]:
        """Strategies indexed by ring position, attackers at random positions."""
        if self.total > sc:
            raise ConfigError(f"{self.total} adversaries do not fit in a cluster of {sc}")
        rng = as_rng(seed)
        positions = rng.sample(range(sc), self.total)
        out = [HONEST] * sc
        cursor = 0

        def take(n: int) -> list[int]:
            nonlocal cursor
            chunk = positions[cursor:cursor + n]
            cursor += n
            return chunk

        cheaters = sorted(take(self.dn))
        if self.coordinated:
            for i, pos in enumerate(cheaters):
                is_active = self.active == "all" or i == 0
                out[pos] = Strategy(StrategyKind.COALITION_MEMBER, coalition=0, active=is_active)
        else:
            for pos in cheaters:
                out[pos] = Strategy(StrategyKind.CHEAT1)
        for pos in take(self.cheat2):
            out[pos] = Strategy(StrategyKind.CHEAT2, swaps=self.swaps)
        for pos in take(self.nt):
            out[pos] = Strategy(StrategyKind.PRIVACY_COLLUDER, coalition=1)
        for pos in take(self.stallers):
            out[pos] = Strategy(stall=True)
        return out

    def to_dict(self) -> dict:
        return {"dn": self.dn, "coordinated": self.coordinated, "active": self.active,
                "cheat2": self.cheat2, "swaps": self.swaps, "nt": self.nt,
                "stallers": self.stallers}


def cheat1_plan(vote: int, config: ClusterConfig, target: Optional[int] = None,
                seed: Seed = None) -> list[int]:
    """RULE A plan with one non-target slot turned into the target option."""
    rng = as_rng(seed)
    target = vote if target is None else target
    plan = rule_a_plan(vote, config, rng)
    displaced = rng.choice([o for o in range(config.ao) if o != target])
    plan[plan.index(displaced)] = target
    return plan


def cheat1_extract_choice(node: NodeState, round_index: int) -> int:
    return node.plan[round_index]


def cheat1_respond(node: NodeState, imposed: int, public_remaining: Iterable[VBallotId],
                   pool: BallotPool, intel: Optional[Intel] = None,
                   seed: Seed = None) -> VBallotId:
    """Answer a query, lying when the node extracted nothing of ``imposed``.

    The lie is drawn from the already-extracted ids of the option. With
    coalition intel it is restricted to ids held by fellow members, whose
    collisions colluding askers will not report.
    """
    rng = as_rng(seed)
    if node.held(imposed):
        return respond_query(node, imposed, rng)
    remaining = public_remaining if isinstance(public_remaining, (set, frozenset)) \
        else set(public_remaining)
    candidates = [b for b in pool.all[imposed] if b not in remaining and b not in node.selected]
    if intel is not None:
        safe = set(intel.known_held(imposed, exclude=node.position))
        preferred = [b for b in candidates if b in safe]
        if preferred:
            candidates = preferred
    if not candidates:
        # nothing extracted at all: any pool id is as good as any other
        candidates = list(pool.all[imposed])
    return rng.choice(candidates)


def cheat2_tamper(node: NodeState, incoming: Sequence[VBallotId], favored: int,
                  swaps: int = 1, seed: Seed = None) -> list[VBallotId]:
    """Forge the forwarded list: drop favoured-option ids, re-insert extracted rival ids.

    Re-inserted ids are taken from those extracted by other nodes since this
    node last held the list, so the next receiver's history cannot flag them.
    Dropping a favoured id raises that option's tally, re-inserting a rival
    id lowers the rival's; the list length is unchanged.
    """
    rng = as_rng(seed)
    forged = list(incoming)
    # called after the node recorded the list it just received
    previous = node.list_history[-2] if len(node.list_history) > 1 else frozenset()
    gone = sorted((previous - set(forged)) - set(node.selected))
    for _ in range(swaps):
        insert = [b for b in gone if b.option != favored and b not in forged]
        drop = [b for b in forged if b.option == favored]
        if not insert or not drop:
            break
        forged.remove(rng.choice(drop))
        forged.append(rng.choice(insert))
    return forged


def report_policy(asker: Strategy, report: CollisionReport,
                  coalition_members: Iterable[int] = ()) -> bool:
    """True if the asker files the report, False if it suppresses it."""
    if asker.kind is not StrategyKind.COALITION_MEMBER:
        return True
    members = set(coalition_members)
    return not (report.implicated and report.implicated <= members)


def privacy_colluder_analyze(responses: Iterable[tuple[int, int, int, VBallotId]],
                             k: int = 1, exclude: Iterable[int] = ()) -> set[tuple[int, int]]:
    """Votes exposed by pooled Stage 2 answers.

    ``responses`` holds ``(asker, responder, imposed option, returned id)``.
    A responder showing more than ``k`` distinct ids of one option must have
    voted it.
    """
    skip = set(exclude)
    seen: dict[tuple[int, int], set[VBallotId]] = {}
    for _asker, responder, option, ballot in responses:
        if responder in skip or ballot is None:
            continue
        seen.setdefault((responder, option), set()).add(ballot)
    return {key for key, ids in seen.items() if len(ids) > k}


def plan_for(strategy: Strategy, vote: int, config: ClusterConfig,
             rng: random.Random) -> list[int]:
    if strategy.cheats_in_stage1:
        return cheat1_plan(vote, config, strategy.target, rng)
    return rule_a_plan(vote, config, rng)
