"""Monte Carlo driver: opaque relay, cluster elections, warning ledger and campaigns."""

from __future__ import annotations

import csv
import hashlib
import hmac
import io
import json
import random
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .adversaries import (
    HONEST,
    AdversaryMix,
    Intel,
    Strategy,
    StrategyKind,
    cheat1_respond,
    cheat2_tamper,
    plan_for,
    privacy_colluder_analyze,
    report_policy,
)
from .protocol import (
    BALLOT_BYTES,
    BallotPool,
    ClusterConfig,
    ClusterResult,
    CollisionReport,
    ConfigError,
    MalformedRemaining,
    NodeState,
    OptionExhausted,
    ProtocolError,
    ReportKind,
    Seed,
    Signer,
    Status,
    Transcript,
    VBallotId,
    as_rng,
    assign_query_options,
    check_responses,
    create_pool,
    extract,
    finalize,
    respond_query,
    tally,
    verify_list_consistency,
    verify_pool,
)

DEFAULT_SEED = 20130401
MAGIC = b"VBP1"
INTERMEDIARY = "intermediary"
BROADCAST = "*"


class InsufficientVoters(ProtocolError):
    code = "INSUFFICIENT_VOTERS"


class OpacityViolation(RuntimeError):
    """A payload reached the intermediary in readable form."""


def derive_seed(*parts: Any) -> int:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "big")


class HmacSigner:
    """Deterministic keyed signatures for simulations (verifier must know the master key)."""

    def __init__(self, master: bytes = b"clustervote-test-scheme") -> None:
        self._master = master
        self._keys: dict[str, bytes] = {}

    def _key(self, key_id: str) -> bytes:
        key = self._keys.get(key_id)
        if key is None:
            key = self._keys[key_id] = hashlib.blake2b(
                key_id.encode(), key=self._master[:64], digest_size=32).digest()
        return key

    def sign(self, key_id: str, message: bytes) -> bytes:
        return hmac.new(self._key(key_id), message, hashlib.sha256).digest()

    def verify(self, key_id: str, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(key_id, message), signature)


class Sealer:
    """Receiver-keyed XOR stream standing in for public-key encryption.

    Good enough to prove the relay never handles readable payloads; it is
    not meant to be confidential.
    """

    def __init__(self, secret: bytes) -> None:
        self._secret = secret

    def _stream(self, receiver: str, n: int) -> bytes:
        return hashlib.shake_256(self._secret + b"|" + receiver.encode()).digest(n)

    def seal(self, receiver: str, body: bytes) -> bytes:
        stream = self._stream(receiver, len(body))
        x = int.from_bytes(body, "big") ^ int.from_bytes(stream, "big")
        return receiver.encode() + b"|" + x.to_bytes(len(body), "big")

    def unseal(self, receiver: str, sealed: bytes) -> bytes:
        prefix = receiver.encode() + b"|"
        if not sealed.startswith(prefix):
            raise ValueError("payload sealed for another receiver")
        body = sealed[len(prefix):]
        stream = self._stream(receiver, len(body))
        x = int.from_bytes(body, "big") ^ int.from_bytes(stream, "big")
        return x.to_bytes(len(body), "big")


def looks_cleartext(payload: bytes) -> bool:
    if payload.startswith(MAGIC):
        return True
    _, sep, body = payload.partition(b"|")
    return bool(sep) and body.startswith(MAGIC)


@dataclass(frozen=True)
class LatencyModel:
    low_ms: float = 10.0
    high_ms: float = 200.0

    def __post_init__(self) -> None:
        if not 0 <= self.low_ms <= self.high_ms:
            raise ConfigError("latency bounds must satisfy 0 <= low <= high")

    def sample(self, rng: random.Random) -> float:
        return rng.uniform(self.low_ms, self.high_ms)


@dataclass
class IntermediaryState:
    """Authority relay: knows the census and the shadow map, never the payloads."""

    census: set[str] = field(default_factory=set)
    latency: LatencyModel = field(default_factory=LatencyModel)
    timeout_ms: int = 1000
    shadow_map: dict[str, str] = field(default_factory=dict)
    relay_log: list[tuple[str, str, int]] = field(default_factory=list)
    messages: int = 0
    bytes_relayed: int = 0
    clock_ms: float = 0.0
    keep_log: bool = True

    def issue_shadows(self, real_ids: Sequence[str], rng: random.Random) -> list[str]:
        """Fresh temporal ids for one election; the previous map is discarded."""
        unknown = [r for r in real_ids if self.census and r not in self.census]
        if unknown:
            raise InsufficientVoters(f"not in census: {unknown[:3]}")
        self.shadow_map = {}
        used: set[str] = set()
        for real in real_ids:
            shadow = f"s{rng.getrandbits(64):016x}"
            while shadow in used:
                shadow = f"s{rng.getrandbits(64):016x}"
            used.add(shadow)
            self.shadow_map[real] = shadow
        return [self.shadow_map[r] for r in real_ids]

    def relay(self, sender: str, receiver: str, payload: bytes, rng: random.Random,
              stall: bool = False) -> Optional[bytes]:
        """Forward a sealed payload unchanged; None when it misses the deadline."""
        if looks_cleartext(payload):
            raise OpacityViolation(f"cleartext payload from {sender} to {receiver}")
        latency = self.timeout_ms + 1.0 if stall else self.latency.sample(rng)
        self.clock_ms += min(latency, float(self.timeout_ms))
        self.messages += 1
        self.bytes_relayed += len(payload)
        if self.keep_log:
            self.relay_log.append((sender, receiver, len(payload)))
        if latency > self.timeout_ms:
            return None
        return payload


def relay(intermediary: IntermediaryState, sender: str, receiver: str, payload: bytes,
          rng: random.Random, stall: bool = False) -> Optional[bytes]:
    return intermediary.relay(sender, receiver, payload, rng, stall)


@dataclass
class WarningLedger:
    """Warnings per real voter; reaching the threshold means exclusion."""

    warn_threshold: int = 3
    counts: dict[str, int] = field(default_factory=dict)
    punished: set[str] = field(default_factory=set)
    events: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    def record(self, election_id: str, voters: Iterable[str], reason: str) -> list[str]:
        newly = []
        for v in voters:
            self.counts[v] = self.counts.get(v, 0) + 1
            self.events.setdefault(v, []).append((election_id, reason))
            if self.counts[v] >= self.warn_threshold and v not in self.punished:
                self.punished.add(v)
                newly.append(v)
        return newly

    def is_punished(self, voter: str) -> bool:
        return voter in self.punished


# -- wire encodings -----------------------------------------------------------

def encode_list(kind: bytes, round_index: int, ids: Sequence[VBallotId]) -> bytes:
    return MAGIC + kind + struct.pack(">H", round_index) + b"".join(b.to_bytes() for b in ids)


def decode_list(body: bytes) -> list[VBallotId]:
    raw = body[7:]
    return [VBallotId.from_bytes(raw[i:i + BALLOT_BYTES]) for i in range(0, len(raw), BALLOT_BYTES)]


def encode_query(option: int) -> bytes:
    return MAGIC + b"Q" + struct.pack(">H", option)


def encode_response(ballot: VBallotId) -> bytes:
    return MAGIC + b"R" + ballot.to_bytes()


class _Wire:
    """Routes node messages through the intermediary, or just counts them."""

    def __init__(self, inter: IntermediaryState, shadows: Sequence[str], rng: random.Random,
                 sealer: Optional[Sealer], stalling: Sequence[bool], transcript: Transcript):
        self.inter = inter
        self.shadows = shadows
        self.rng = rng
        self.sealer = sealer
        self.stalling = stalling
        self.transcript = transcript

    def name(self, pos: int) -> str:
        if pos == -1:
            return INTERMEDIARY
        if pos == -2:
            return BROADCAST
        return self.shadows[pos]

    def send(self, round_index: int, kind: str, sender: int, receiver: int,
             body: Callable[[], bytes]) -> Optional[bytes]:
        """Deliver one message; returns the cleartext the receiver reads, or None on timeout.

        In counted mode (no sealer) the return value is ``b""`` on delivery.
        """
        stall = sender >= 0 and self.stalling[sender]
        if self.sealer is None:
            self.inter.messages += 1
            if self.transcript.detailed:
                self.transcript.add(round_index, sender, kind, body())
            else:
                self.transcript.bump(kind, 1)
            return None if stall else b""
        clear = body()
        to = self.name(receiver)
        sealed = self.sealer.seal(to, clear)
        delivered = self.inter.relay(self.name(sender), to, sealed, self.rng, stall)
        self.transcript.add(round_index, sender, kind, clear if self.transcript.detailed else b"")
        if delivered is None:
            return None
        return self.sealer.unseal(to, delivered)


@dataclass
class Election:
    config: ClusterConfig
    transcript: Transcript
    result: ClusterResult
    votes: list[int]
    strategies: list[Strategy]
    shadow_ids: list[str]
    pool: BallotPool
    nodes: list[NodeState]
    stage1_cancelled: bool = False
    reached_stage2: bool = False
    revealed: set[tuple[int, int]] = field(default_factory=set)
    exposures: int = 0
    coalitions: dict[int, Intel] = field(default_factory=dict)

    @property
    def warnings(self) -> frozenset[int]:
        return self.result.warnings

    @property
    def true_tally(self) -> list[int]:
        out = [0] * self.config.ao
        for v in self.votes:
            out[v] += 1
        return out

    @property
    def altered(self) -> bool:
        return self.result.valid and self.result.tally != self.true_tally

    @property
    def false_reveals(self) -> int:
        return sum(1 for pos, opt in self.revealed if self.votes[pos] != opt)


def expected_messages(config: ClusterConfig) -> tuple[int, int]:
    """(stage 1, stage 2) relay counts of a run that completes both stages."""
    per_pair = config.ao if config.ask_every_option else 1
    return config.sc * config.rounds + 1, 2 * config.sc * config.fanout * per_pair


def message_count(transcript: Transcript) -> dict[str, int]:
    c = transcript.counts
    stage1 = c.get("LIST", 0) + c.get("PUBLISH", 0)
    stage2 = c.get("QUERY", 0) + c.get("RESPONSE", 0)
    return {"stage1": stage1, "stage2": stage2, "total": stage1 + stage2}


def _segment_since(pos: int, round_index: int, sc: int) -> set[int]:
    """Nodes that handled the list since ``pos`` last received it."""
    if round_index == 0:
        return set(range(pos))
    return set(range(sc)) - {pos}


def run_election(config: ClusterConfig, roster: Sequence[str], strategies: Sequence[Strategy],
                 votes: Sequence[int], seed: Seed = None, *, cluster_id: str = "c0",
                 intermediary: Optional[IntermediaryState] = None,
                 signer: Optional[Signer] = None, sealed: bool = True, detailed: bool = True,
                 pool: Optional[BallotPool] = None,
                 script: Optional[Mapping[tuple[int, int], VBallotId]] = None) -> Election:
    """Run Stage 1 and Stage 2 of one cluster election; deterministic given ``seed``.

    ``script`` pins the id extracted at ``(round, position)``; unscripted
    extractions follow the node's strategy. With ``sealed=False`` messages are
    counted but not encoded or sealed, which is much faster for campaigns.
    """
    sc = config.sc
    if not (len(roster) == len(strategies) == len(votes) == sc):
        raise ConfigError("roster, strategies and votes must all have sc entries")
    rng = as_rng(seed)
    inter = intermediary if intermediary is not None else IntermediaryState(
        timeout_ms=config.timeout_ms)
    shadows = inter.issue_shadows(roster, rng)
    transcript = Transcript(detailed=detailed)
    sealer = Sealer(rng.getrandbits(128).to_bytes(16, "big")) if sealed else None
    wire = _Wire(inter, shadows, rng, sealer, [s.stall for s in strategies], transcript)
    signer = signer if signer is not None else HmacSigner()

    if pool is None:
        pool = create_pool(config, rng)
    if not verify_pool(config, pool):
        raise ConfigError("pool failed count/uniqueness verification")
    pool_ids = pool.ids()
    pool_by_option = {o: frozenset(ids) for o, ids in pool.all.items()}
    nodes = [NodeState(p, votes[p]) for p in range(sc)]
    for node in nodes:
        node.plan = plan_for(strategies[node.position], node.vote, config, rng)
    script = dict(script or {})
    if script:
        for (r, p), b in script.items():
            nodes[p].plan[r] = b.option
    tamper_round = {p: rng.randrange(1, config.rounds) for p, s in enumerate(strategies)
                    if s.kind is StrategyKind.CHEAT2}
    initial = frozenset(pool.remaining)
    for node in nodes:
        node.list_history.append(initial)
    election = Election(config, transcript, None, list(votes), list(strategies), shadows,  # type: ignore[arg-type]
                        pool, nodes)
    if detailed:
        transcript.add(0, INTERMEDIARY, "POOL", b"".join(b.to_bytes() for b in pool.remaining))

    def cancel(reports: list[CollisionReport]) -> Election:
        for r in reports:
            transcript.add(0, r.reporter, "REPORT", json.dumps(r.to_dict()).encode())
        election.result = finalize(config, cluster_id, pool.remaining, reports)
        return election

    # Stage 1: the list travels the ring rounds times
    current = pool.remaining
    for r in range(config.rounds):
        for pos in range(sc):
            node = nodes[pos]
            sender = -1 if (r == 0 and pos == 0) else (pos - 1) % sc
            got = wire.send(r, "LIST", sender, pos, lambda: encode_list(b"L", r, current))
            if got is None:
                election.stage1_cancelled = True
                return cancel([CollisionReport(pos, ReportKind.TIMEOUT, frozenset({sender}))])
            incoming = decode_list(got) if sealer is not None else current
            expected = pos if r == 0 else sc
            snap = frozenset(incoming)
            prev = node.list_history[-1]
            if not (len(snap) == len(incoming) and snap <= prev
                    and len(prev) - len(snap) == expected and snap.isdisjoint(node.selected)):
                report = verify_list_consistency(node.list_history, incoming, expected,
                                                 node.selected, reporter=pos,
                                                 segment=_segment_since(pos, r, sc))
                if report is not None:
                    election.stage1_cancelled = True
                    return cancel([report])
            node.list_history.append(snap)
            pool.remaining = current = list(incoming)
            pinned = script.get((r, pos))
            try:
                if pinned is not None:
                    if pinned not in current:
                        raise OptionExhausted(f"scripted id {pinned} not available")
                    current.remove(pinned)
                    node.selected.append(pinned)
                    pool.extraction_log.append((r, pos, pinned))
                    ballot = pinned
                else:
                    ballot = extract(node, pool, r, node.plan[r], rng)
            except OptionExhausted:
                election.stage1_cancelled = True
                return cancel([CollisionReport(pos, ReportKind.LIST_INCONSISTENCY,
                                               frozenset(_segment_since(pos, r, sc)))])
            if detailed:
                transcript.add(r, pos, "EXTRACT", ballot.to_bytes())
            strat = strategies[pos]
            if tamper_round.get(pos) == r:
                forged = cheat2_tamper(node, current, node.vote, strat.swaps, rng)
                if detailed and forged != current:
                    transcript.add(r, pos, "TAMPER", b"".join(b.to_bytes() for b in forged))
                pool.remaining = current = forged

    # publication by the last node, checked by everyone
    last = sc - 1
    got = wire.send(config.rounds - 1, "PUBLISH", last, -2,
                    lambda: encode_list(b"P", config.rounds - 1, current))
    if got is None:
        election.stage1_cancelled = True
        return cancel([CollisionReport(0, ReportKind.TIMEOUT, frozenset({last}))])
    published = decode_list(got) if sealer is not None else list(current)
    for pos in range(sc):
        report = verify_list_consistency(nodes[pos].list_history, published, sc - pos,
                                         nodes[pos].selected, reporter=pos,
                                         segment=set(range(pos + 1, sc)))
        if report is not None:
            election.stage1_cancelled = True
            pool.remaining = published
            return cancel([report])
    pool.remaining = published
    try:
        tally(config, published)
    except MalformedRemaining:
        # RULE A leaves at most sc ids of any option; anyone can see the list is impossible
        election.stage1_cancelled = True
        return cancel([CollisionReport(0, ReportKind.LIST_INCONSISTENCY,
                                       frozenset(range(1, sc)))])
    remaining_set = frozenset(published)

    # Stage 2: cross-examination
    election.reached_stage2 = True
    coalition: dict[int, Intel] = election.coalitions
    for pos, s in enumerate(strategies):
        if s.coalition is not None:
            intel = coalition.setdefault(s.coalition, Intel())
            intel.members.add(pos)
            intel.held[pos] = list(nodes[pos].selected)
    for intel in coalition.values():
        known = {b for ids in intel.held.values() for b in ids}
        for m in intel.members:
            nodes[m].intel = known

    imposed = assign_query_options(range(sc), config.ao)
    holdings = [[n.held(o) for o in range(config.ao)] for n in nodes]
    liars = [s.cheats_in_stage1 for s in strategies]
    any_stall = any(s.stall for s in strategies)
    # counted relay without stallers: tally messages in bulk
    bulk = sealer is None and not any_stall and not detailed
    rand = rng.random
    reports: list[CollisionReport] = []

    def answer_liar(t: int, opt: int) -> VBallotId:
        t_strat = strategies[t]
        t_intel = coalition.get(t_strat.coalition) if t_strat.coalition is not None else None
        return cheat1_respond(nodes[t], opt, remaining_set, pool, t_intel, rng)

    for asker in range(sc):
        a_strat = strategies[asker]
        a_intel = coalition.get(a_strat.coalition) if a_strat.coalition is not None else None
        own = set(nodes[asker].selected)
        options = range(config.ao) if config.ask_every_option else (imposed[asker],)
        targets = [(asker + j) % sc for j in range(1, config.fanout + 1)]
        for opt in options:
            responses: dict[int, Optional[VBallotId]] = {}
            if bulk:
                transcript.bump("QUERY", len(targets))
                transcript.bump("RESPONSE", len(targets))
                inter.messages += 2 * len(targets)
                held_opt = [h[opt] for h in holdings]
                answers = [
                    answer_liar(t, opt) if liars[t]
                    else (h[0] if len(h) == 1 else h[int(rand() * len(h))])
                    for t in targets for h in (held_opt[t],)
                ]
                responses = dict(zip(targets, answers))
                if a_intel is not None:
                    a_intel.responses.extend((asker, t, opt, b) for t, b in responses.items())
                targets_left: Sequence[int] = ()
            else:
                targets_left = targets
            for t in targets_left:
                if wire.send(config.rounds, "QUERY", asker, t, lambda: encode_query(opt)) is None:
                    reports.append(CollisionReport(t, ReportKind.TIMEOUT, frozenset({asker})))
                    continue
                if liars[t]:
                    ballot = answer_liar(t, opt)
                else:
                    held = holdings[t][opt]
                    if not held:
                        raise ProtocolError(f"node {t} holds no id of option {opt}")
                    ballot = held[0] if len(held) == 1 else held[int(rand() * len(held))]
                got = wire.send(config.rounds, "RESPONSE", t, asker,
                                lambda: encode_response(ballot))
                if got is None:
                    responses[t] = None
                    continue
                responses[t] = VBallotId.from_bytes(got[5:]) if sealer is not None else ballot
                if a_intel is not None:
                    a_intel.responses.append((asker, t, opt, responses[t]))
            answers = list(responses.values())
            distinct = set(answers)
            if (None not in distinct and len(distinct) == len(answers)
                    and remaining_set.isdisjoint(distinct) and own.isdisjoint(distinct)
                    and pool_by_option[opt].issuperset(distinct)):
                continue
            found = check_responses(asker, own, remaining_set, responses,
                                    imposed=opt, pool_ids=pool_ids)
            members = a_intel.members if a_intel is not None else ()
            reports.extend(rep for rep in found if report_policy(a_strat, rep, members))

    colluders = coalition.get(1)
    if colluders is not None:
        election.revealed = privacy_colluder_analyze(colluders.responses, config.k,
                                                     exclude=colluders.members)
        election.exposures = sc - len(colluders.members)

    if reports:
        return cancel(reports)
    election.result = finalize(config, cluster_id, published, [], signer, shadows)
    if detailed:
        for pos in range(sc):
            transcript.add(config.rounds, pos, "SIGN", election.result.signatures[shadows[pos]])
    return election


def form_cluster(census: Sequence[str], cs: int, mix: AdversaryMix, ledger: WarningLedger,
                 seed: Seed = None, avoid: Iterable[frozenset[str]] = ()
                 ) -> tuple[list[str], list[Strategy]]:
    """Draw ``cs`` unpunished voters in random ring order and place the adversaries.

    Rosters listed in ``avoid`` (clusters that were cancelled) are never reused.
    """
    rng = as_rng(seed)
    eligible = [v for v in census if not ledger.is_punished(v)]
    if len(eligible) < cs:
        raise InsufficientVoters(f"{len(eligible)} eligible voters, need {cs}")
    banned = set(avoid)
    if len(eligible) == cs and frozenset(eligible) in banned:
        raise InsufficientVoters("only a previously cancelled roster is available")
    while True:
        roster = rng.sample(eligible, cs)
        if frozenset(roster) not in banned:
            break
    return roster, mix.assign(cs, rng)


# -- campaigns ---------------------------------------------------------------

@dataclass
class SimConfig:
    cluster: ClusterConfig
    mix: AdversaryMix = field(default_factory=AdversaryMix)
    trials: int = 1000
    seed: int = DEFAULT_SEED
    census_size: Optional[int] = None
    latency: LatencyModel = field(default_factory=LatencyModel)
    relay_mode: str = "sealed"
    vote_shares: Optional[list[float]] = None

    def __post_init__(self) -> None:
        if self.trials < 0:
            raise ConfigError("trials must be >= 0")
        if self.relay_mode not in ("sealed", "counted"):
            raise ConfigError("relay_mode must be 'sealed' or 'counted'")
        if self.vote_shares is not None:
            if len(self.vote_shares) != self.cluster.ao or min(self.vote_shares) < 0:
                raise ConfigError("vote_shares needs ao non-negative weights")
        if self.census_size is not None and self.census_size < self.cluster.sc:
            raise ConfigError("census_size smaller than the cluster")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimConfig":
        data = dict(data)
        known = {"cluster", "mix", "trials", "seed", "census_size", "latency", "relay_mode",
                 "vote_shares"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cluster = ClusterConfig(**data.pop("cluster"))
            mix = AdversaryMix(**data.pop("mix", {}))
            latency = LatencyModel(**data.pop("latency", {}))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad simulation config: {exc}") from exc
        return cls(cluster=cluster, mix=mix, latency=latency, **data)

    @classmethod
    def load(cls, path: str) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        c = self.cluster
        return {
            "cluster": {"sc": c.sc, "ao": c.ao, "k": c.k, "fanout": c.fanout,
                        "timeout_ms": c.timeout_ms, "warn_threshold": c.warn_threshold,
                        "ask_every_option": c.ask_every_option},
            "mix": self.mix.to_dict(),
            "trials": self.trials, "seed": self.seed, "census_size": self.census_size,
            "latency": {"low_ms": self.latency.low_ms, "high_ms": self.latency.high_ms},
            "relay_mode": self.relay_mode, "vote_shares": self.vote_shares,
        }


def wilson(successes: int, n: int) -> tuple[float, float]:
    if n == 0:
        return (0.0, 1.0)
    from statsmodels.stats.proportion import proportion_confint
    lo, hi = proportion_confint(successes, n, alpha=0.05, method="wilson")
    return (float(lo), float(hi))


@dataclass
class _Counts:
    trials: int = 0
    valid: int = 0
    cancelled: int = 0
    cancelled_stage1: int = 0
    undetected_alterations: int = 0
    attack_trials: int = 0
    detected: int = 0
    timeouts: int = 0
    exposures: int = 0
    reveals: int = 0
    false_reveals: int = 0
    warnings_issued: int = 0
    honest_warnings: int = 0
    honest_voters: int = 0
    punishments: int = 0
    skipped: int = 0
    stage1_messages: int = 0
    stage2_messages: int = 0
    completed: int = 0
    formula_mismatches: int = 0

    def add(self, other: "_Counts") -> None:
        for name in self.__dataclass_fields__:
            setattr(self, name, getattr(self, name) + getattr(other, name))


@dataclass
class SimReport:
    config: dict
    trials: int
    valid: int
    cancelled: int
    cancelled_stage1: int
    undetected_alterations: int
    attack_trials: int
    detected: int
    detection_rate: Optional[float]
    detection_ci: Optional[tuple[float, float]]
    undetected_rate: Optional[float]
    undetected_ci: Optional[tuple[float, float]]
    timeouts: int
    exposures: int
    reveals: int
    false_reveals: int
    reveal_rate: Optional[float]
    reveal_ci: Optional[tuple[float, float]]
    warnings_issued: int
    honest_warnings: int
    honest_warning_rate: Optional[float]
    punishments: int
    skipped_trials: int
    stage1_messages_mean: Optional[float]
    stage2_messages_mean: Optional[float]
    message_formula_ok: bool

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in self.to_dict().items():
            if name == "config":
                continue
            if isinstance(value, tuple):
                value = f"{value[0]:.6g};{value[1]:.6g}"
            elif isinstance(value, float):
                value = f"{value:.6g}"
            w.writerow([name, value])
        return buf.getvalue()


def _draw_votes(sc: int, ao: int, shares: Optional[Sequence[float]], rng: random.Random) -> list[int]:
    if shares is None:
        return [rng.randrange(ao) for _ in range(sc)]
    return rng.choices(range(ao), weights=shares, k=sc)


def _run_trials(cfg: SimConfig, indices: Sequence[int], ledger: Optional[WarningLedger] = None
                ) -> tuple[_Counts, WarningLedger]:
    c = _Counts()
    cc = cfg.cluster
    ledger = ledger if ledger is not None else WarningLedger(cc.warn_threshold)
    census = [f"v{j}" for j in range(cfg.census_size)] if cfg.census_size else None
    cancelled_rosters: set[frozenset[str]] = set()
    exp1, exp2 = expected_messages(cc)
    sealed = cfg.relay_mode == "sealed"
    signer = HmacSigner(str(cfg.seed).encode())
    for i in indices:
        rng = random.Random(derive_seed(cfg.seed, i))
        voters = census if census is not None else [f"t{i}v{j}" for j in range(cc.sc)]
        try:
            roster, strategies = form_cluster(voters, cc.sc, cfg.mix, ledger, rng,
                                              avoid=cancelled_rosters)
        except InsufficientVoters:
            c.skipped += 1
            continue
        votes = _draw_votes(cc.sc, cc.ao, cfg.vote_shares, rng)
        inter = IntermediaryState(census=set(voters), latency=cfg.latency,
                                  timeout_ms=cc.timeout_ms, keep_log=False)
        e = run_election(cc, roster, strategies, votes, rng, cluster_id=f"trial{i}",
                         intermediary=inter, signer=signer, sealed=sealed, detailed=False)
        c.trials += 1
        res = e.result
        attacked = any(s.kind in (StrategyKind.CHEAT1, StrategyKind.CHEAT2) or s.cheats_in_stage1
                       for s in strategies)
        c.attack_trials += attacked
        if res.valid:
            c.valid += 1
            if e.altered:
                c.undetected_alterations += 1
        else:
            c.cancelled += 1
            c.cancelled_stage1 += e.stage1_cancelled
            c.detected += attacked
            c.timeouts += any(r.kind is ReportKind.TIMEOUT for r in res.reports)
            cancelled_rosters.add(frozenset(roster))
            warned = [roster[p] for p in sorted(res.warnings)]
            kinds = ",".join(sorted({r.kind.value for r in res.reports}))
            c.punishments += len(ledger.record(f"trial{i}", warned, kinds))
            c.warnings_issued += len(warned)
            c.honest_warnings += sum(1 for p in res.warnings if strategies[p].honest)
        c.honest_voters += sum(1 for s in strategies if s.honest)
        c.exposures += e.exposures
        c.reveals += len(e.revealed)
        c.false_reveals += e.false_reveals
        counts = message_count(e.transcript)
        c.stage1_messages += counts["stage1"]
        c.stage2_messages += counts["stage2"]
        if res.valid or (e.reached_stage2 and not e.stage1_cancelled
                         and not any(r.kind is ReportKind.TIMEOUT for r in res.reports)):
            c.completed += 1
            if (counts["stage1"], counts["stage2"]) != (exp1, exp2):
                c.formula_mismatches += 1
    return c, ledger


def _chunk_worker(args: tuple[dict, list[int]]) -> tuple[_Counts, WarningLedger]:
    cfg_dict, idx = args
    return _run_trials(SimConfig.from_dict(cfg_dict), idx)


def run_campaign(cfg: SimConfig, ledger: Optional[WarningLedger] = None,
                 workers: int = 1) -> SimReport:
    """Run ``cfg.trials`` independent elections and aggregate the metrics.

    Trial ``i`` is seeded from ``(cfg.seed, i)``, so results do not depend on
    ``workers``. Parallel execution needs an open census (``census_size`` None)
    because a shared census couples trials through punishments.
    """
    indices = list(range(cfg.trials))
    if workers > 1 and cfg.census_size is None and ledger is None and cfg.trials > 1:
        from concurrent.futures import ProcessPoolExecutor
        chunks = [indices[w::workers] for w in range(workers)]
        chunks = [sorted(ch) for ch in chunks if ch]
        total = _Counts()
        merged = WarningLedger(cfg.cluster.warn_threshold)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for counts, part in pool.map(_chunk_worker, [(cfg.to_dict(), ch) for ch in chunks]):
                total.add(counts)
                for voter, evs in part.events.items():
                    for ev in evs:
                        merged.record(ev[0], [voter], ev[1])
        counts = total
    else:
        counts, _ = _run_trials(cfg, indices, ledger)
    return build_report(cfg, counts)


def build_report(cfg: SimConfig, c: _Counts) -> SimReport:
    def rate(num: int, den: int) -> Optional[float]:
        return num / den if den else None

    def ci(num: int, den: int) -> Optional[tuple[float, float]]:
        return wilson(num, den) if den else None

    return SimReport(
        config=cfg.to_dict(),
        trials=c.trials, valid=c.valid, cancelled=c.cancelled,
        cancelled_stage1=c.cancelled_stage1,
        undetected_alterations=c.undetected_alterations,
        attack_trials=c.attack_trials, detected=c.detected,
        detection_rate=rate(c.detected, c.attack_trials),
        detection_ci=ci(c.detected, c.attack_trials),
        undetected_rate=rate(c.undetected_alterations, c.attack_trials),
        undetected_ci=ci(c.undetected_alterations, c.attack_trials),
        timeouts=c.timeouts,
        exposures=c.exposures, reveals=c.reveals, false_reveals=c.false_reveals,
        reveal_rate=rate(c.reveals, c.exposures), reveal_ci=ci(c.reveals, c.exposures),
        warnings_issued=c.warnings_issued, honest_warnings=c.honest_warnings,
        honest_warning_rate=rate(c.honest_warnings, c.honest_voters),
        punishments=c.punishments, skipped_trials=c.skipped,
        stage1_messages_mean=rate(c.stage1_messages, c.trials),
        stage2_messages_mean=rate(c.stage2_messages, c.trials),
        message_formula_ok=c.formula_mismatches == 0,
    )


@dataclass
class ConcentrationEstimate:
    attacked_clusters: int
    sampled_clusters: int
    altered: float
    altered_ci: tuple[float, float]
    punished: float
    punished_ci: tuple[float, float]
    per_election_success: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def simulate_concentration(required_cheaters: float, cs: int = 25, dn: int = 20, ao: int = 3,
                           samples: int = 500, seed: int = DEFAULT_SEED,
                           warn_threshold: int = 3) -> ConcentrationEstimate:
    """Monte Carlo for coalitions of ``dn`` per cluster, one active cheater each.

    Each sampled coalition keeps voting (in fresh clusters with new honest
    voters) until its active cheater either alters a vote or collects
    ``warn_threshold`` warnings. Counts are scaled to the number of attacked
    clusters, ``required_cheaters / dn``.
    """
    cc = ClusterConfig(sc=cs, ao=ao, warn_threshold=warn_threshold)
    mix = AdversaryMix(dn=dn, coordinated=True, active="single")
    clusters = int(round(required_cheaters / dn)) if dn else 0
    altered = punished = elections = successes = 0
    signer = HmacSigner(b"concentration")
    for i in range(samples):
        ledger = WarningLedger(warn_threshold)
        attempt = 0
        while True:
            rng = random.Random(derive_seed(seed, "conc", i, attempt))
            strategies = mix.assign(cs, rng)
            active = next(p for p, s in enumerate(strategies) if s.active)
            roster = [f"h{i}.{attempt}.{p}" for p in range(cs)]
            roster[active] = f"cheater{i}"
            votes = _draw_votes(cs, ao, None, rng)
            e = run_election(cc, roster, strategies, votes, rng, cluster_id=f"conc{i}.{attempt}",
                             signer=signer, sealed=False, detailed=False)
            elections += 1
            attempt += 1
            if e.altered:
                altered += 1
                successes += 1
                break
            if not e.result.valid and active in e.result.warnings:
                ledger.record(f"conc{i}.{attempt}", [f"cheater{i}"], "detected")
                if ledger.is_punished(f"cheater{i}"):
                    punished += 1
                    break
            if attempt >= 10 * warn_threshold:
                break
    scale = clusters / samples if samples else 0.0
    a_lo, a_hi = wilson(altered, samples)
    p_lo, p_hi = wilson(punished, samples)
    return ConcentrationEstimate(
        attacked_clusters=clusters, sampled_clusters=samples,
        altered=altered * scale, altered_ci=(a_lo * clusters, a_hi * clusters),
        punished=punished * scale, punished_ci=(p_lo * clusters, p_hi * clusters),
        per_election_success=successes / elections if elections else 0.0,
    )


__all__ = [
    "DEFAULT_SEED", "Election", "HmacSigner", "InsufficientVoters", "IntermediaryState",
    "LatencyModel", "OpacityViolation", "Sealer", "SimConfig", "SimReport", "WarningLedger",
    "derive_seed", "expected_messages", "form_cluster", "message_count", "relay",
    "run_campaign", "run_election", "simulate_concentration", "HONEST",
]
