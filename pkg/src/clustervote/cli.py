"""Command-line front end: tables, simulate, scenario, board, verify.

Exit codes: 0 success, 1 audit findings, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from .analytics import concentration_scenario, render_table
from .protocol import ConfigError, ProtocolError
from .sim import DEFAULT_SEED, SimConfig, run_campaign

EXIT_OK, EXIT_FINDINGS, EXIT_USAGE = 0, 1, 2

# flag name -> (section of the config dict, key)
_OVERRIDES = {
    "sc": ("cluster", "sc"), "ao": ("cluster", "ao"), "k": ("cluster", "k"),
    "fanout": ("cluster", "fanout"), "timeout_ms": ("cluster", "timeout_ms"),
    "warn_threshold": ("cluster", "warn_threshold"),
    "dn": ("mix", "dn"), "active": ("mix", "active"), "cheat2": ("mix", "cheat2"),
    "swaps": ("mix", "swaps"), "nt": ("mix", "nt"), "stallers": ("mix", "stallers"),
    "trials": (None, "trials"), "seed": (None, "seed"), "census_size": (None, "census_size"),
    "relay_mode": (None, "relay_mode"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _keys_path(board: str, keys: Optional[str]) -> str:
    return keys or board + ".keys"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="clustervote", description="Cluster MPC voting: analytics, simulation, audit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("tables", help="reproduce the closed-form risk tables")
    t.add_argument("--which", type=int, choices=[2, 3, 4, 5], required=True)
    t.add_argument("--format", choices=["text", "csv", "json"], default="text")

    s = sub.add_parser("simulate", help="run a Monte Carlo campaign")
    s.add_argument("--config", help="JSON campaign file; flags override its values")
    s.add_argument("--format", choices=["json", "csv"], default="json")
    s.add_argument("--output", help="write the report here instead of stdout")
    s.add_argument("--workers", type=int, default=1)
    for name in ("sc", "ao", "k", "fanout", "timeout_ms", "warn_threshold", "dn", "cheat2",
                 "swaps", "nt", "stallers", "trials", "seed", "census_size"):
        s.add_argument("--" + name.replace("_", "-"), dest=name, type=int)
    s.add_argument("--coordinated", action="store_true", default=None)
    s.add_argument("--active", choices=["all", "single"])
    s.add_argument("--relay-mode", dest="relay_mode", choices=["sealed", "counted"])

    c = sub.add_parser("scenario", help="concurrency arithmetic for a concentration attack")
    c.add_argument("--voters", type=float, default=22e6)
    c.add_argument("--window", type=float, default=720.0, help="voting window in minutes")
    c.add_argument("--minutes-per-vote", type=float, default=4.0)
    c.add_argument("--cs", type=int, default=25)
    c.add_argument("--dn", type=int, default=20)
    c.add_argument("--ao", type=int, default=3)
    c.add_argument("--simulate", action="store_true", help="append Monte Carlo estimates")
    c.add_argument("--samples", type=int, default=300)
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    c.add_argument("--format", choices=["text", "json"], default="text")

    b = sub.add_parser("board", help="run an honest election and write its bulletin board")
    b.add_argument("output")
    b.add_argument("--voters", type=int, default=103)
    b.add_argument("--cs", type=int, default=25)
    b.add_argument("--ao", type=int, default=3)
    b.add_argument("--seed", type=int, default=DEFAULT_SEED)
    b.add_argument("--keys", help="public key file (default: OUTPUT.keys)")

    v = sub.add_parser("verify", help="audit a bulletin board")
    v.add_argument("board")
    v.add_argument("--keys", help="public key file (default: BOARD.keys)")
    v.add_argument("--format", choices=["text", "json"], default="text")
    return p


def _sim_config(args: argparse.Namespace) -> SimConfig:
    data: dict = {"cluster": {"sc": 25, "ao": 3}}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
    data.setdefault("cluster", {})
    data.setdefault("mix", {})
    data.setdefault("seed", DEFAULT_SEED)
    for flag, (section, key) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if section is None:
            data[key] = value
        else:
            data[section][key] = value
    if args.coordinated:
        data["mix"]["coordinated"] = True
    return SimConfig.from_dict(data)


def cmd_tables(args) -> int:
    sys.stdout.write(render_table(args.which, args.format))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    report = run_campaign(cfg, workers=max(1, args.workers))
    text = report.to_json() if args.format == "json" else report.to_csv()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_scenario(args) -> int:
    sc = concentration_scenario(args.voters, args.window, args.minutes_per_vote, args.cs, args.dn)
    out = {"concurrent_voters": round(sc.concurrent_voters),
           "required_concurrent_cheaters": round(sc.required_concurrent_cheaters),
           "attacked_clusters": round(sc.required_concurrent_cheaters / args.dn) if args.dn else 0}
    if args.simulate and args.dn:
        from .sim import simulate_concentration
        est = simulate_concentration(sc.required_concurrent_cheaters, cs=args.cs, dn=args.dn,
                                     ao=args.ao, samples=args.samples, seed=args.seed)
        out.update({"altered_votes": est.altered, "altered_ci": list(est.altered_ci),
                    "punished_cheaters": est.punished, "punished_ci": list(est.punished_ci),
                    "per_election_success": est.per_election_success})
    if args.format == "json":
        sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    else:
        for key, value in out.items():
            if isinstance(value, list):
                value = f"[{value[0]:.1f}, {value[1]:.1f}]"
            elif isinstance(value, float):
                value = f"{value:.4f}" if value < 1 else f"{value:.1f}"
            sys.stdout.write(f"{key}: {value}\n")
    return EXIT_OK


def cmd_board(args) -> int:
    from .bulletin import build_board
    g = build_board(args.voters, args.cs, args.ao, seed=args.seed)
    g.board.save(args.output)
    with open(_keys_path(args.output, args.keys), "w", encoding="utf-8") as fh:
        fh.write(g.directory.to_json())
    sys.stdout.write(f"{len(g.board.entries)} clusters, global tally {g.board.global_tally}\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .bulletin import BulletinBoard, KeyDirectory, verify_board
    keys = _keys_path(args.board, args.keys)
    for path in (args.board, keys):
        if not os.path.isfile(path):
            raise UsageError(f"no such file: {path}")
    try:
        board = BulletinBoard.load(args.board)
        with open(keys, encoding="utf-8") as fh:
            directory = KeyDirectory.from_json(fh.read())
    except (ValueError, KeyError, ProtocolError) as exc:
        raise UsageError(f"cannot parse board: {exc}") from exc
    report = verify_board(board, directory.voters(), directory)
    if args.format == "json":
        sys.stdout.write(report.to_json())
    else:
        for f in report.findings:
            sys.stdout.write(f"{f.kind}\t{f.cluster_id}\t{f.detail}\n")
        status = "clean" if report.clean else f"{len(report.findings)} findings"
        sys.stdout.write(f"{status}: {report.entries} entries, {report.voters} signers, "
                         f"global tally {report.global_tally}\n")
    return EXIT_OK if report.clean else EXIT_FINDINGS


COMMANDS = {"tables": cmd_tables, "simulate": cmd_simulate, "scenario": cmd_scenario,
            "board": cmd_board, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_usage().strip())
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
