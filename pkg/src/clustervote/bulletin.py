"""Election-wide bulletin board of signed cluster results, with public auditing."""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .protocol import (
    ClusterConfig,
    ClusterResult,
    ConfigError,
    MalformedRemaining,
    ProtocolError,
    Seed,
    Signer,
    VBallotId,
    as_rng,
    canonical_encoding,
    tally,
)

INTERMEDIARY_KEY = "intermediary"
_HEX = re.compile(r"^[0-9a-f]+$")


class CensusTooSmall(ProtocolError):
    code = "CENSUS_TOO_SMALL"


class DuplicateSigner(ProtocolError):
    code = "DUPLICATE_SIGNER"


class BadSignature(ProtocolError):
    code = "BAD_SIGNATURE"


class AlreadyPublished(ProtocolError):
    code = "ALREADY_PUBLISHED"


class MalformedEntry(ProtocolError):
    code = "MALFORMED_ENTRY"


def partition(census: Sequence[str], cs: int, seed: Seed = None) -> list[list[str]]:
    """Shuffle the census into disjoint clusters of ``cs``.

    Leftover voters join the last cluster instead of forming a small one,
    since small clusters make cheating much easier.
    """
    if cs < 2:
        raise ConfigError("cluster size must be >= 2")
    if len(census) < cs:
        raise CensusTooSmall(f"{len(census)} voters cannot fill a cluster of {cs}")
    voters = list(census)
    as_rng(seed).shuffle(voters)
    n = len(voters) // cs
    clusters = [voters[i * cs:(i + 1) * cs] for i in range(n)]
    clusters[-1].extend(voters[n * cs:])
    return clusters


class Ed25519Signer:
    """Publicly verifiable signatures with keys derived from a master secret."""

    def __init__(self, master: bytes) -> None:
        self._master = master
        self._keys: dict = {}

    def _private(self, key_id: str):
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        key = self._keys.get(key_id)
        if key is None:
            raw = hashlib.blake2b(key_id.encode(), key=self._master[:64], digest_size=32).digest()
            key = self._keys[key_id] = Ed25519PrivateKey.from_private_bytes(raw)
        return key

    def public_key(self, key_id: str) -> bytes:
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
        return self._private(key_id).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)

    def sign(self, key_id: str, message: bytes) -> bytes:
        return self._private(key_id).sign(message)

    def verify(self, key_id: str, message: bytes, signature: bytes) -> bool:
        return KeyDirectory({key_id: self.public_key(key_id)}).verify(key_id, message, signature)


@dataclass
class KeyDirectory:
    """Public keys of every shadow id issued, plus the intermediary's."""

    public_keys: dict[str, bytes] = field(default_factory=dict)
    # verification is a pure function of its inputs, so repeat audits can reuse answers
    _checked: dict = field(default_factory=dict, repr=False, compare=False)

    def verify(self, key_id: str, message: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
        raw = self.public_keys.get(key_id)
        if raw is None:
            return False
        memo = (raw, message, signature)
        if memo in self._checked:
            return self._checked[memo]
        try:
            Ed25519PublicKey.from_public_bytes(raw).verify(signature, message)
            ok = True
        except (InvalidSignature, ValueError):
            ok = False
        if len(self._checked) > 100_000:
            self._checked.clear()
        self._checked[memo] = ok
        return ok

    def voters(self) -> set[str]:
        return set(self.public_keys) - {INTERMEDIARY_KEY}

    def to_json(self) -> str:
        return json.dumps({k: v.hex() for k, v in sorted(self.public_keys.items())},
                          indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "KeyDirectory":
        return cls({k: bytes.fromhex(v) for k, v in json.loads(text).items()})


@dataclass
class BoardEntry:
    cluster_id: str
    tally: list[int]
    remaining: list[VBallotId]
    signatures: dict[str, bytes]
    countersignature: bytes

    @property
    def signers(self) -> list[str]:
        return sorted(self.signatures)

    def message(self) -> bytes:
        return canonical_encoding(self.cluster_id, self.remaining, self.tally)

    def countersign_message(self) -> bytes:
        return self.message() + b"\x00" + ",".join(self.signers).encode()

    def to_dict(self) -> dict:
        return {
            "cluster_id": self.cluster_id,
            "tally": list(self.tally),
            "remaining": [[b.option, b.hex] for b in self.remaining],
            "signatures": {k: v.hex() for k, v in sorted(self.signatures.items())},
            "countersignature": self.countersignature.hex(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BoardEntry":
        """Strict parse; anything unexpected raises MalformedEntry."""
        try:
            if set(d) != {"cluster_id", "tally", "remaining", "signatures", "countersignature"}:
                raise ValueError(f"unexpected keys {sorted(d)}")
            cid = d["cluster_id"]
            if not isinstance(cid, str) or not cid:
                raise ValueError("cluster_id")
            counts = d["tally"]
            if not isinstance(counts, list) or not all(
                    isinstance(c, int) and not isinstance(c, bool) and c >= 0 for c in counts):
                raise ValueError("tally")
            remaining = []
            for item in d["remaining"]:
                option, serial = item
                if not isinstance(option, int) or isinstance(option, bool) or option < 0:
                    raise ValueError("option")
                remaining.append(VBallotId(option, _parse_hex(serial, 16)))
            sigs = {k: _raw_hex(v) for k, v in d["signatures"].items()}
            if not sigs:
                raise ValueError("no signatures")
            return cls(cid, list(counts), remaining, sigs, _raw_hex(d["countersignature"]))
        except (TypeError, ValueError, KeyError, AttributeError) as exc:
            raise MalformedEntry(str(exc)) from exc


def _raw_hex(text: str) -> bytes:
    if not isinstance(text, str) or not text or len(text) % 2 or not _HEX.match(text):
        raise ValueError("bad hex")
    return bytes.fromhex(text)


def _parse_hex(text: str, nbytes: int) -> int:
    if not isinstance(text, str) or len(text) != 2 * nbytes or not _HEX.match(text):
        raise ValueError("bad serial")
    return int(text, 16)


@dataclass
class BulletinBoard:
    expected_clusters: list[str]
    ao: int
    entries: list[BoardEntry] = field(default_factory=list)
    conflicts: list[BoardEntry] = field(default_factory=list)
    malformed: list[str] = field(default_factory=list)

    def entry_for(self, cluster_id: str) -> Optional[BoardEntry]:
        return next((e for e in self.entries if e.cluster_id == cluster_id), None)

    @property
    def global_tally(self) -> list[int]:
        out = [0] * self.ao
        for e in self.entries:
            for i, c in enumerate(e.tally[:self.ao]):
                out[i] += c
        return out

    def dumps(self) -> str:
        lines = [json.dumps({"type": "header", "ao": self.ao, "clusters": self.expected_clusters},
                            separators=(",", ":"))]
        for kind, group in (("entry", self.entries), ("conflict", self.conflicts)):
            for e in group:
                lines.append(json.dumps({"type": kind, **e.to_dict()}, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "BulletinBoard":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise MalformedEntry("empty board")
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise MalformedEntry("first line must be the board header")
        board = cls(list(header["clusters"]), int(header["ao"]))
        for line in lines[1:]:
            try:
                rec = json.loads(line)
                kind = rec.pop("type")
                entry = BoardEntry.from_dict(rec)
            except (ValueError, KeyError, AttributeError, TypeError, MalformedEntry):
                board.malformed.append(line)
                continue
            if kind == "entry":
                board.entries.append(entry)
            elif kind == "conflict":
                board.conflicts.append(entry)
            else:
                board.malformed.append(line)
        return board

    @classmethod
    def load(cls, path: str) -> "BulletinBoard":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def countersign(signer: Signer, entry: BoardEntry) -> bytes:
    return signer.sign(INTERMEDIARY_KEY, entry.countersign_message())


def entry_from_result(result: ClusterResult, countersign_with: Signer) -> BoardEntry:
    if not result.valid or result.tally is None:
        raise ProtocolError(f"cluster {result.cluster_id} was cancelled; nothing to publish")
    entry = BoardEntry(result.cluster_id, list(result.tally), list(result.remaining_published),
                       dict(result.signatures), b"")
    entry.countersignature = countersign(countersign_with, entry)
    return entry


def _entry_problems(entry: BoardEntry, verifier: Signer, census: Optional[set[str]],
                    ao: int) -> list[tuple[str, str]]:
    problems = []
    message = entry.message()
    for key_id in entry.signers:
        if census is not None and key_id not in census:
            problems.append(("UNKNOWN_SIGNER", key_id))
        if not verifier.verify(key_id, message, entry.signatures[key_id]):
            problems.append(("BAD_SIGNATURE", key_id))
    if not verifier.verify(INTERMEDIARY_KEY, entry.countersign_message(), entry.countersignature):
        problems.append(("BAD_COUNTERSIGNATURE", entry.cluster_id))
    try:
        expected = tally(ClusterConfig(sc=max(len(entry.signers), 2), ao=ao), entry.remaining)
        if expected != entry.tally:
            problems.append(("TALLY_MISMATCH", f"published {entry.tally}, remaining gives {expected}"))
    except (MalformedRemaining, ConfigError) as exc:
        problems.append(("TALLY_MISMATCH", str(exc)))
    return problems


def publish(board: BulletinBoard, result: ClusterResult | BoardEntry, verifier: Signer,
            countersign_with: Optional[Signer] = None) -> BoardEntry:
    """Append a VALID cluster result after checking every signature.

    ``result`` may be a ClusterResult (countersigned here with
    ``countersign_with``) or an already countersigned BoardEntry.
    """
    if isinstance(result, ClusterResult):
        if countersign_with is None:
            raise ConfigError("a countersigning key is needed to publish a raw result")
        entry = entry_from_result(result, countersign_with)
    else:
        entry = result
    bad = [p for p in _entry_problems(entry, verifier, None, board.ao)
           if p[0] in ("BAD_SIGNATURE", "BAD_COUNTERSIGNATURE", "TALLY_MISMATCH")]
    if bad:
        raise BadSignature(f"{entry.cluster_id}: {bad}")
    if board.entry_for(entry.cluster_id) is not None:
        raise AlreadyPublished(entry.cluster_id)
    taken = {s for e in board.entries for s in e.signers}
    dup = taken.intersection(entry.signers)
    if dup:
        raise DuplicateSigner(f"{sorted(dup)[:3]} already signed another result")
    board.entries.append(entry)
    return entry


def resubmit(board: BulletinBoard, entry: BoardEntry, verifier: Signer,
             census: Optional[set[str]] = None) -> BoardEntry:
    """A voter re-posts its cluster's signed result.

    Accepted when the cluster is missing. An identical copy is a no-op; a
    different signed result for a published cluster is kept as a conflict.
    """
    problems = _entry_problems(entry, verifier, census, board.ao)
    if problems:
        raise BadSignature(f"{entry.cluster_id}: {problems}")
    current = board.entry_for(entry.cluster_id)
    if current is None:
        taken = {s for e in board.entries for s in e.signers}
        if taken.intersection(entry.signers):
            raise DuplicateSigner(entry.cluster_id)
        board.entries.append(entry)
        return entry
    if current.to_dict() == entry.to_dict():
        return current
    if all(c.to_dict() != entry.to_dict() for c in board.conflicts):
        board.conflicts.append(entry)
    raise AlreadyPublished(f"conflicting result for {entry.cluster_id} retained for audit")


@dataclass(frozen=True)
class Finding:
    kind: str
    cluster_id: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "cluster_id": self.cluster_id, "detail": self.detail}


@dataclass
class AuditReport:
    findings: list[Finding]
    entries: int
    global_tally: list[int]
    voters: int

    @property
    def clean(self) -> bool:
        return not self.findings

    def kinds(self) -> set[str]:
        return {f.kind for f in self.findings}

    def to_json(self) -> str:
        return json.dumps({"clean": self.clean, "entries": self.entries,
                           "global_tally": self.global_tally, "voters": self.voters,
                           "findings": [f.to_dict() for f in self.findings]},
                          indent=2, sort_keys=True) + "\n"


def verify_board(board: BulletinBoard, census: Iterable[str], verifier: Signer) -> AuditReport:
    """Audit signatures, census membership, one result per voter, tallies and coverage."""
    census = set(census)
    findings: list[Finding] = []
    for line in board.malformed:
        findings.append(Finding("MALFORMED_ENTRY", "?", line[:80]))
    seen_signers: dict[str, str] = {}
    seen_clusters: set[str] = set()
    expected = set(board.expected_clusters)
    for e in board.entries:
        if e.cluster_id in seen_clusters:
            findings.append(Finding("DUPLICATE_CLUSTER", e.cluster_id))
        seen_clusters.add(e.cluster_id)
        if e.cluster_id not in expected:
            findings.append(Finding("UNEXPECTED_CLUSTER", e.cluster_id))
        if len(e.tally) != board.ao:
            findings.append(Finding("TALLY_MISMATCH", e.cluster_id, "wrong number of options"))
        for kind, detail in _entry_problems(e, verifier, census, board.ao):
            findings.append(Finding(kind, e.cluster_id, detail))
        for s in e.signers:
            if s in seen_signers:
                findings.append(Finding("DUPLICATE_SIGNER", e.cluster_id,
                                        f"{s} also signed {seen_signers[s]}"))
            else:
                seen_signers[s] = e.cluster_id
    for cid in board.expected_clusters:
        if cid not in seen_clusters:
            findings.append(Finding("MISSING_CLUSTER", cid))
    for c in board.conflicts:
        findings.append(Finding("CONFLICT", c.cluster_id, "a different signed result exists"))
    gt = board.global_tally
    return AuditReport(findings, len(board.entries), gt, len(seen_signers))


@dataclass
class GeneratedElection:
    board: BulletinBoard
    directory: KeyDirectory
    signer: Ed25519Signer
    true_tally: list[int]
    real_ids: list[str]


def build_board(voters: int, cs: int, ao: int, seed: int = 0,
                vote_shares: Optional[Sequence[float]] = None) -> GeneratedElection:
    """Run an honest election over a synthetic census and publish every cluster."""
    from .adversaries import HONEST
    from .sim import IntermediaryState, run_election

    rng = random.Random(seed)
    census = [f"voter{j:06d}" for j in range(voters)]
    clusters = partition(census, cs, rng)
    signer = Ed25519Signer(hashlib.sha256(f"board:{seed}".encode()).digest())
    ids = [f"cluster{i:04d}" for i in range(len(clusters))]
    board = BulletinBoard(ids, ao)
    directory = KeyDirectory({INTERMEDIARY_KEY: signer.public_key(INTERMEDIARY_KEY)})
    truth = [0] * ao
    for cid, roster in zip(ids, clusters):
        votes = (rng.choices(range(ao), weights=vote_shares, k=len(roster)) if vote_shares
                 else [rng.randrange(ao) for _ in roster])
        for v in votes:
            truth[v] += 1
        cc = ClusterConfig(sc=len(roster), ao=ao)
        inter = IntermediaryState(census=set(census), timeout_ms=cc.timeout_ms)
        e = run_election(cc, roster, [HONEST] * len(roster), votes, rng, cluster_id=cid,
                         intermediary=inter, signer=signer, sealed=False, detailed=False)
        for shadow in e.shadow_ids:
            directory.public_keys[shadow] = signer.public_key(shadow)
        publish(board, e.result, directory, countersign_with=signer)
    return GeneratedElection(board, directory, signer, truth, census)
