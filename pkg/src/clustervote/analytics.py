"""Closed-form risk figures and reproductions of the published probability tables."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from decimal import Decimal
from typing import Optional, Sequence

from .protocol import Seed, as_rng


@dataclass(frozen=True)
class RiskParams:
    p_no_collision: float = 0.5
    ao: int = 3
    sc: int = 25
    dn: int = 0
    nt: int = 0
    attackers: int = 0
    warn_threshold: int = 3

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_no_collision <= 1.0:
            raise ValueError("p_no_collision must lie in [0, 1]")
        if self.nt > self.sc:
            raise ValueError("nt cannot exceed the cluster size")

    @property
    def cs(self) -> int:
        return self.sc


def p_cheat_single(p_nc: float, ao: int, sc: int) -> float:
    """Chance one CHEAT 1 attacker survives every check: ``p_nc ** (sc/ao)``."""
    return p_nc ** (sc / ao)


def p_cheat_independent(p_cheat: float, dn: int) -> float:
    if dn < 1:
        raise ValueError("dn must be >= 1")
    return p_cheat ** dn


def p_cheat_coordinated(p_nc: float, sc: int, dn: int, ao: int) -> float:
    """Per-cheater survival when the ``dn`` attackers never report each other."""
    if not 0 <= dn < sc:
        raise ValueError("need 0 <= dn < sc")
    return p_nc ** ((sc - dn) / ao)


def p_punished(p_detect: float, warn_threshold: int = 3) -> float:
    """Detected on each of ``warn_threshold`` consecutive attempts."""
    if warn_threshold < 1:
        raise ValueError("warn_threshold must be >= 1")
    return p_detect ** warn_threshold


def p_nosame(ao: int, nt: int) -> float:
    """Chance that ``nt`` colluders all impose distinct options."""
    if ao < 2 or nt < 1:
        raise ValueError("need ao >= 2 and nt >= 1")
    if nt > ao:
        return 0.0
    return (math.factorial(ao - 1) / math.factorial(ao - nt)) / ao ** (nt - 1)


def p_same(ao: int, nt: int) -> float:
    return 1.0 - p_nosame(ao, nt)


def p_diffids(nt: int) -> float:
    """Chance that a 2-id holder hands ``nt`` same-option askers two distinct ids."""
    if nt < 1:
        raise ValueError("nt must be >= 1")
    return 1.0 - 0.5 ** (nt - 1)


def p_match(ao: int, vote_shares: Optional[Sequence[float]] = None,
            imposed_shares: Optional[Sequence[float]] = None) -> float:
    """Chance a queried node voted the imposed option (1/ao under uniform votes)."""
    if vote_shares is None:
        return 1.0 / ao
    imposed = imposed_shares if imposed_shares is not None else [1.0 / ao] * ao
    if len(vote_shares) != ao or len(imposed) != ao:
        raise ValueError("share vectors must have ao entries")
    return sum(v * q for v, q in zip(vote_shares, imposed))


def p_reveal(ao: int, nt: int, vote_shares: Optional[Sequence[float]] = None) -> float:
    return p_same(ao, nt) * p_diffids(nt) * p_match(ao, vote_shares)


def discovered(ao: int, nt: int, cs: int, attackers: int) -> float:
    """Expected votes exposed by ``attackers`` spread in groups of ``nt`` per cluster."""
    if nt > cs:
        raise ValueError("nt cannot exceed cs")
    return (attackers - attackers * (nt / cs)) * p_reveal(ao, nt) / 2


@dataclass(frozen=True)
class Scenario:
    concurrent_voters: float
    required_concurrent_cheaters: float


def concentration_scenario(voters: float, window_minutes: float, minutes_per_vote: float,
                           cs: int, dn: int) -> Scenario:
    """Concurrent voters, and cheaters needed so every cluster holds ``dn`` of them."""
    if not 0 <= dn < cs:
        raise ValueError("need 0 <= dn < cs")
    concurrent = voters * minutes_per_vote / window_minutes
    return Scenario(concurrent, concurrent * dn / (cs - dn))


def empirical_p_same(ao: int, nt: int, trials: int, seed: Seed = None,
                     cluster_size: Optional[int] = None) -> float:
    """Fraction of random placements where two of ``nt`` colluders impose one option.

    Without ``cluster_size`` each colluder's position is an independent uniform
    draw (the closed form's model). With it, colluders take distinct seats of a
    random ring of that size, which lowers the rate for small clusters.
    """
    rng = as_rng(seed)
    hits = 0
    for _ in range(trials):
        if cluster_size is None:
            options = [rng.randrange(ao) for _ in range(nt)]
        else:
            options = [p % ao for p in rng.sample(range(cluster_size), nt)]
        hits += len(set(options)) < nt
    return hits / trials if trials else 0.0


# Published grids, with the values as printed (comma decimals normalised).
TABLE2_PUBLISHED = [
    (4, 2, "0.25"), (8, 2, "0.06"), (15, 2, "0.006"), (25, 2, "1.7E-4"), (40, 2, "9.5E-7"),
    (4, 3, "0.40"), (8, 3, "0.15"), (15, 3, "0.03"), (25, 3, "0.003"), (40, 3, "9.7E-5"),
    (4, 5, "0.57"), (8, 5, "0.33"), (15, 5, "0.12"), (25, 5, "0.03"), (40, 5, "0.004"),
]
TABLE3_PUBLISHED = [(3, 2, "0.33"), (3, 3, "0.78"), (5, 2, "0.2"), (5, 4, "0.81"), (5, 6, "1")]
TABLE4_PUBLISHED = [(3, 2, "0.06"), (3, 3, "0.19"), (5, 2, "0.02"), (5, 4, "0.14"), (5, 6, "0.19")]
TABLE5_PUBLISHED = [
    (3, 2, 15, 1000, "0.06", 24), (3, 3, 15, 1000, "0.19", 77), (3, 4, 15, 1000, "0.29", 107),
    (5, 2, 35, 1000, "0.02", 9), (5, 3, 35, 1000, "0.08", 35), (5, 4, 35, 1000, "0.14", 62),
    (5, 5, 35, 1000, "0.18", 77), (5, 6, 35, 1000, "0.19", 80),
]


def display_unit(shown: str) -> float:
    """Value of one unit in the last printed digit of ``shown``."""
    return float(Decimal(1).scaleb(Decimal(shown.upper()).as_tuple().exponent))


def round_like(value: float, shown: str) -> float:
    """``value`` rounded half-up to the precision printed in ``shown``."""
    unit = Decimal(1).scaleb(Decimal(shown.upper()).as_tuple().exponent)
    return float(Decimal(repr(value)).quantize(unit, rounding="ROUND_HALF_UP"))


def matches_display(value: float, shown: str) -> bool:
    """True if ``shown`` is ``value`` rounded or truncated at the printed precision.

    The published tables mostly round, but a few entries (0.1575 printed
    as 0.15, 0.125 as 0.12) are truncated.
    """
    unit = display_unit(shown)
    target = float(Decimal(shown.upper()))
    if math.isclose(round_like(value, shown), target, rel_tol=1e-9, abs_tol=unit * 1e-6):
        return True
    truncated = math.floor(value / unit + 1e-9) * unit
    return math.isclose(truncated, target, rel_tol=1e-9, abs_tol=unit * 1e-6)


def fmt4(x: float) -> str:
    return f"{x:.4g}"


def table2() -> list[dict]:
    return [{"sc": sc, "ao": ao, "p_cheat": p_cheat_single(0.5, ao, sc), "published": shown}
            for sc, ao, shown in TABLE2_PUBLISHED]


def table3() -> list[dict]:
    return [{"ao": ao, "nt": nt, "p_same": p_same(ao, nt), "published": shown}
            for ao, nt, shown in TABLE3_PUBLISHED]


def table4() -> list[dict]:
    return [{"ao": ao, "nt": nt, "p_reveal": p_reveal(ao, nt), "published": shown}
            for ao, nt, shown in TABLE4_PUBLISHED]


def table5() -> list[dict]:
    return [{"ao": ao, "nt": nt, "cs": cs, "attackers": a, "p_reveal": p_reveal(ao, nt),
             "discovered": discovered(ao, nt, cs, a), "published": shown_d}
            for ao, nt, cs, a, _shown_p, shown_d in TABLE5_PUBLISHED]


TABLES = {2: table2, 3: table3, 4: table4, 5: table5}
COLUMNS = {
    2: ["sc", "ao", "p_cheat"],
    3: ["ao", "nt", "p_same"],
    4: ["ao", "nt", "p_reveal"],
    5: ["ao", "nt", "cs", "attackers", "p_reveal", "discovered"],
}


def _cell(value) -> str:
    return fmt4(value) if isinstance(value, float) else str(value)


def render_table(which: int, fmt: str = "text") -> str:
    """Render a table as csv, json or aligned text (raw values plus a published column)."""
    if which not in TABLES:
        raise ValueError(f"no table {which}; choose from {sorted(TABLES)}")
    rows = TABLES[which]()
    cols = COLUMNS[which]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([_cell(row[c]) for c in cols])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps(rows, indent=2, sort_keys=True) + "\n"
    header = cols + ["published"]
    body = [[_cell(row[c]) for c in cols] + [str(row["published"])] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines) + "\n"


__all__ = [
    "RiskParams", "Scenario", "p_cheat_single", "p_cheat_independent", "p_cheat_coordinated",
    "p_punished", "p_nosame", "p_same", "p_diffids", "p_match", "p_reveal", "discovered",
    "concentration_scenario", "empirical_p_same", "table2", "table3", "table4", "table5",
    "render_table", "matches_display", "round_like", "TABLE2_PUBLISHED", "TABLE3_PUBLISHED",
    "TABLE4_PUBLISHED", "TABLE5_PUBLISHED",
]
