"""Single-cluster election state: v-ballot pool, extraction rounds, cross-examination, tally."""

from __future__ import annotations

import enum
import random
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Protocol, Sequence, Union

Seed = Union[int, str, bytes, random.Random, None]


class ProtocolError(Exception):
    code = "PROTOCOL_ERROR"


class ConfigError(ProtocolError, ValueError):
    code = "INVALID_CONFIG"


class OptionExhausted(ProtocolError):
    code = "OPTION_EXHAUSTED"


class MalformedRemaining(ProtocolError):
    code = "MALFORMED_REMAINING"


class SignatureRefused(ProtocolError):
    code = "SIGNATURE_REFUSED"


def as_rng(seed: Seed) -> random.Random:
    if isinstance(seed, random.Random):
        return seed
    return random.Random(seed)


@dataclass(frozen=True)
class ClusterConfig:
    """Parameters of one cluster election.

    ``fanout`` defaults to ``sc - 1`` (every node asks every other node).
    ``ask_every_option`` makes each asker query every option instead of the
    single option imposed by its ring position.
    """

    sc: int
    ao: int
    k: int = 1
    fanout: Optional[int] = None
    timeout_ms: int = 1000
    warn_threshold: int = 3
    ask_every_option: bool = False

    def __post_init__(self) -> None:
        if self.sc < 2:
            raise ConfigError(f"sc must be >= 2, got {self.sc}")
        if self.ao < 2:
            raise ConfigError(f"ao must be >= 2, got {self.ao}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.fanout is None:
            object.__setattr__(self, "fanout", self.sc - 1)
        if not 1 <= self.fanout <= self.sc - 1:
            raise ConfigError(f"fanout must be in 1..{self.sc - 1}, got {self.fanout}")
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be positive")
        if self.warn_threshold < 1:
            raise ConfigError("warn_threshold must be >= 1")

    @property
    def per_option(self) -> int:
        return self.sc * (self.k + 1)

    @property
    def pool_size(self) -> int:
        return self.ao * self.per_option

    @property
    def rounds(self) -> int:
        return self.ao * self.k + 1

    @property
    def remaining_size(self) -> int:
        # ao*sc*(k+1) - sc*(ao*k+1)
        return self.sc * (self.ao - 1)


class VBallotId(NamedTuple):
    option: int
    serial: int

    @property
    def hex(self) -> str:
        return f"{self.serial:032x}"

    def to_bytes(self) -> bytes:
        return struct.pack(">H", self.option) + self.serial.to_bytes(16, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "VBallotId":
        return cls(struct.unpack(">H", raw[:2])[0], int.from_bytes(raw[2:18], "big"))

    def __str__(self) -> str:
        return f"{self.option}:{self.hex}"


BALLOT_BYTES = 18


@dataclass
class BallotPool:
    all: dict[int, tuple[VBallotId, ...]]
    remaining: list[VBallotId]
    extraction_log: list[tuple[int, int, VBallotId]] = field(default_factory=list)

    @classmethod
    def from_ids(cls, ids_by_option: Mapping[int, Sequence[VBallotId]]) -> "BallotPool":
        all_ids = {o: tuple(ids) for o, ids in sorted(ids_by_option.items())}
        flat = [b for ids in all_ids.values() for b in ids]
        if len({b.serial for b in flat}) != len(flat):
            raise ConfigError("duplicate serial in pool")
        return cls(all_ids, flat)

    def ids(self) -> set[VBallotId]:
        return {b for ids in self.all.values() for b in ids}

    def remaining_of(self, option: int) -> list[VBallotId]:
        return [b for b in self.remaining if b.option == option]


def create_pool(config: ClusterConfig, seed: Seed = None) -> BallotPool:
    """Mint ``sc*(k+1)`` ids per option with unique 128-bit serials."""
    rng = as_rng(seed)
    seen: set[int] = set()
    ids_by_option: dict[int, list[VBallotId]] = {}
    for option in range(config.ao):
        ids = ids_by_option[option] = []
        while len(ids) < config.per_option:
            serial = rng.getrandbits(128)
            if serial in seen:
                continue
            seen.add(serial)
            ids.append(VBallotId(option, serial))
    return BallotPool.from_ids(ids_by_option)


def verify_pool(config: ClusterConfig, pool: BallotPool) -> bool:
    """Check counts and uniqueness of a freshly broadcast pool."""
    if sorted(pool.all) != list(range(config.ao)):
        return False
    for option, ids in pool.all.items():
        if len(ids) != config.per_option or any(b.option != option for b in ids):
            return False
    serials = [b.serial for b in pool.remaining]
    return len(serials) == config.pool_size and len(set(serials)) == len(serials)


def rule_a_plan(vote: int, config: ClusterConfig, seed: Seed = None) -> list[int]:
    """One option per round: k of every option plus one extra for ``vote``, shuffled."""
    if not 0 <= vote < config.ao:
        raise ConfigError(f"vote {vote} out of range for ao={config.ao}")
    plan = [o for o in range(config.ao) for _ in range(config.k)] + [vote]
    as_rng(seed).shuffle(plan)
    return plan


@dataclass
class NodeState:
    position: int
    vote: int
    plan: list[int] = field(default_factory=list)
    selected: list[VBallotId] = field(default_factory=list)
    list_history: list[frozenset[VBallotId]] = field(default_factory=list)
    intel: set[VBallotId] = field(default_factory=set)

    def held(self, option: int) -> list[VBallotId]:
        return [b for b in self.selected if b.option == option]


def extract(node: NodeState, pool: BallotPool, round_index: int, option: int,
            seed: Seed = None) -> VBallotId:
    """Remove a uniformly random remaining id of ``option`` and give it to ``node``."""
    rng = as_rng(seed)
    remaining = pool.remaining
    ballot = None
    # rejection sampling is uniform over the option's ids; fall back to a scan
    for _ in range(4 * len(pool.all)):
        pick = remaining[int(rng.random() * len(remaining))] if remaining else None
        if pick is not None and pick.option == option:
            ballot = pick
            break
    if ballot is None:
        candidates = pool.remaining_of(option)
        if not candidates:
            raise OptionExhausted(f"no remaining v-ballot for option {option}")
        ballot = rng.choice(candidates)
    pool.remaining.remove(ballot)
    node.selected.append(ballot)
    pool.extraction_log.append((round_index, node.position, ballot))
    return ballot


class ReportKind(str, enum.Enum):
    IN_REMAINING = "IN_REMAINING"
    OWN_SELECTED = "OWN_SELECTED"
    DUPLICATE_RESPONSE = "DUPLICATE_RESPONSE"
    LIST_INCONSISTENCY = "LIST_INCONSISTENCY"
    TIMEOUT = "TIMEOUT"
    INVALID_RESPONSE = "INVALID_RESPONSE"


@dataclass(frozen=True)
class CollisionReport:
    reporter: int
    kind: ReportKind
    implicated: frozenset[int]
    ballot: Optional[VBallotId] = None

    @property
    def warned(self) -> frozenset[int]:
        # the reporter could be lying, so it is warned too
        return self.implicated | {self.reporter}

    def to_dict(self) -> dict:
        return {
            "reporter": self.reporter,
            "kind": self.kind.value,
            "implicated": sorted(self.implicated),
            "ballot": None if self.ballot is None else str(self.ballot),
        }


def verify_list_consistency(history: Sequence[frozenset[VBallotId]],
                            incoming: Sequence[VBallotId],
                            expected_removed: int,
                            selected: Iterable[VBallotId] = (),
                            *, reporter: int = -1,
                            segment: Iterable[int] = ()) -> Optional[CollisionReport]:
    """Compare a received remaining list with the receiver's previous snapshot.

    Returns None when consistent, otherwise a LIST_INCONSISTENCY report
    implicating ``segment`` (the nodes that handled the list since the
    receiver last saw it).
    """
    if not history:
        raise ValueError("consistency check needs at least one earlier snapshot")
    previous = history[-1]
    incoming_set = frozenset(incoming)
    offending: Optional[VBallotId] = None
    ok = len(incoming_set) == len(incoming)
    if ok:
        extra = incoming_set - previous
        if extra:
            ok = False
            offending = min(extra)
    if ok and len(previous) - len(incoming_set) != expected_removed:
        ok = False
    if ok:
        for b in selected:
            if b in incoming_set:
                ok = False
                offending = b
                break
    if ok:
        return None
    return CollisionReport(reporter, ReportKind.LIST_INCONSISTENCY,
                           frozenset(segment) - {reporter}, offending)


def tally(config: ClusterConfig, remaining: Iterable[VBallotId]) -> list[int]:
    """Votes per option: ``sc`` minus the remaining ids of that option."""
    remaining = list(remaining)
    if len(remaining) != config.remaining_size:
        raise MalformedRemaining(
            f"remaining list has {len(remaining)} ids, expected {config.remaining_size}")
    counts = [0] * config.ao
    for b in remaining:
        if not 0 <= b.option < config.ao:
            raise MalformedRemaining(f"id {b} has unknown option")
        counts[b.option] += 1
    result = [config.sc - c for c in counts]
    if min(result) < 0:
        raise MalformedRemaining(f"negative tally {result}")
    return result


def assign_query_options(order: Sequence[int], ao: int) -> dict[int, int]:
    """Option imposed by each asker: its ring position modulo ``ao``."""
    return {node: i % ao for i, node in enumerate(order)}


def respond_query(node: NodeState, imposed: int, seed: Seed = None) -> VBallotId:
    held = node.held(imposed)
    if not held:
        raise ProtocolError(f"node {node.position} holds no id of option {imposed}")
    return held[0] if len(held) == 1 else as_rng(seed).choice(held)


def check_responses(asker: int, asker_selected: Iterable[VBallotId],
                    remaining: Iterable[VBallotId],
                    responses: Mapping[int, Optional[VBallotId]],
                    *, imposed: Optional[int] = None,
                    pool_ids: Optional[set[VBallotId]] = None) -> list[CollisionReport]:
    """Checks A (in remaining), B (asker's own) and C (duplicates) over one round of answers.

    A ``None`` response stands for a message that missed its deadline.
    """
    remaining = remaining if isinstance(remaining, (set, frozenset)) else set(remaining)
    own = set(asker_selected)
    reports: list[CollisionReport] = []
    holders: dict[VBallotId, list[int]] = {}
    for responder, ballot in responses.items():
        if ballot is None:
            reports.append(CollisionReport(asker, ReportKind.TIMEOUT, frozenset({responder})))
            continue
        if ((imposed is not None and ballot.option != imposed)
                or (pool_ids is not None and ballot not in pool_ids)):
            reports.append(CollisionReport(asker, ReportKind.INVALID_RESPONSE,
                                           frozenset({responder}), ballot))
            continue
        if ballot in remaining:
            reports.append(CollisionReport(asker, ReportKind.IN_REMAINING,
                                           frozenset({responder}), ballot))
        if ballot in own:
            reports.append(CollisionReport(asker, ReportKind.OWN_SELECTED,
                                           frozenset({responder}), ballot))
        holders.setdefault(ballot, []).append(responder)
    for ballot, who in holders.items():
        if len(who) > 1:
            reports.append(CollisionReport(asker, ReportKind.DUPLICATE_RESPONSE,
                                           frozenset(who), ballot))
    return reports


def canonical_encoding(cluster_id: str, remaining: Iterable[VBallotId],
                       tally_: Sequence[int]) -> bytes:
    """Length-prefixed (cluster id, sorted remaining ids, tally); order independent."""
    ids = b"".join(b.to_bytes() for b in sorted(remaining, key=lambda b: (b.serial, b.option)))
    counts = b"".join(struct.pack(">Q", c) for c in tally_)
    out = bytearray()
    for part in (cluster_id.encode("utf-8"), ids, counts):
        out += struct.pack(">I", len(part)) + part
    return bytes(out)


class Signer(Protocol):
    def sign(self, key_id: str, message: bytes) -> bytes: ...

    def verify(self, key_id: str, message: bytes, signature: bytes) -> bool: ...


class Status(str, enum.Enum):
    VALID = "VALID"
    CANCELLED = "CANCELLED"


@dataclass
class ClusterResult:
    cluster_id: str
    status: Status
    tally: Optional[list[int]]
    remaining_published: list[VBallotId]
    signatures: dict[str, bytes] = field(default_factory=dict)
    reports: list[CollisionReport] = field(default_factory=list)
    warnings: frozenset[int] = frozenset()

    @property
    def valid(self) -> bool:
        return self.status is Status.VALID

    def encoding(self) -> bytes:
        return canonical_encoding(self.cluster_id, self.remaining_published, self.tally or [])


def finalize(config: ClusterConfig, cluster_id: str, remaining: Sequence[VBallotId],
             reports: Sequence[CollisionReport], signer: Optional[Signer] = None,
             key_ids: Sequence[str] = (), claimed_tally: Optional[Sequence[int]] = None
             ) -> ClusterResult:
    """Close the election: sign a valid tally or cancel with warnings.

    Every signer recomputes the tally from ``remaining``; a ``claimed_tally``
    that disagrees is refused.
    """
    remaining = list(remaining)
    if reports:
        warned: set[int] = set()
        for r in reports:
            warned |= r.warned
        return ClusterResult(cluster_id, Status.CANCELLED, None, remaining,
                             reports=list(reports), warnings=frozenset(warned))
    recomputed = tally(config, remaining)
    proposed = list(claimed_tally) if claimed_tally is not None else recomputed
    if proposed != recomputed:
        raise SignatureRefused(f"tally {proposed} does not match remaining list ({recomputed})")
    result = ClusterResult(cluster_id, Status.VALID, proposed, remaining)
    if signer is not None:
        message = result.encoding()
        result.signatures = {kid: signer.sign(kid, message) for kid in key_ids}
    return result


@dataclass
class Transcript:
    """Ordered election record; one ``round actor kind payload-hex`` line per event.

    With ``detailed=False`` only message counters are kept.
    """

    detailed: bool = True
    events: list[tuple[int, str, str, bytes]] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)

    def add(self, round_index: int, actor: Union[int, str], kind: str, payload: bytes = b"") -> None:
        self.counts[kind] = self.counts.get(kind, 0) + 1
        if self.detailed:
            self.events.append((round_index, str(actor), kind, payload))

    def bump(self, kind: str, n: int) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + n

    def lines(self) -> list[str]:
        return [f"{r}\t{a}\t{k}\t{p.hex()}" for r, a, k, p in self.events]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        t = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            r, a, k, p = line.split("\t")
            t.add(int(r), a, k, bytes.fromhex(p))
        return t
