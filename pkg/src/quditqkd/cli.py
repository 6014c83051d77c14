"""Command line front end.

Subcommands: ``simulate`` runs a seeded local session, ``analyze``
prints closed-form channel statistics, ``distill`` selects and runs
key-distillation parameters, ``threshold`` scans the feasibility
frontier, ``verify`` runs the built-in consistency suites and
``netrun`` launches one networked role.

Every subcommand takes ``--config FILE`` holding JSON defaults keyed by
flag name; explicit flags win over the file, which wins over built-ins.
Exit status is 0 on success, 2 for an expected negative outcome (the
continuation condition failed, no feasible parameters), 1 on errors or
verification mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import verify as verify_mod
from .analysis import analysis_report, bell_distribution, error_matrix
from .channels import UnsupportedModelError, resolve_channel
from .distill import (
    DistillBudget,
    DistillParams,
    InsufficientKeyError,
    check_secure_condition,
    ep_recursion,
    majority_stage,
    sample_labeled_key,
    select_params,
    simulate_distillation,
)
from .field import field_spec
from .netrun import RoleConfig, run_role
from .protocol import EC_MODES, SessionConfig, run_session
from .threshold import e_max_scan

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_EXPECTED_FAIL = 2

SESSION_DEFAULTS = {
    "n": 2,
    "rounds": 10000,
    "channel": "identity",
    "sample_fraction": 0.1,
    "seed": 0,
    "ec_mode": "in_pair",
    "condition_strict": True,
    "modulus": None,
}

ANALYZE_DEFAULTS = {"n": 2, "channel": "identity", "modulus": None}

DISTILL_DEFAULTS = {
    "matrix": None,
    "channel": None,
    "n": 2,
    "modulus": None,
    "auto_params": False,
    "k": None,
    "r": None,
    "k_max": 30,
    "r_max": 999_999,
    "css_target": 0.01,
    "z_budget": 0.005,
    "margin": 10.0,
    "count": None,
    "seed": 0,
}

THRESHOLD_DEFAULTS = {"n": 2, "grid": 2000, "ec_samples": 64}

VERIFY_DEFAULTS = {"samples": 2000, "seed": 0}

NETRUN_DEFAULTS = dict(
    SESSION_DEFAULTS,
    role=None,
    k=0,
    r=1,
    listen=None,
    connect_alice=None,
    connect_bob=None,
)


def _layer(args: argparse.Namespace, defaults: dict) -> dict:
    """Built-in defaults, overridden by --config JSON, then by flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        unknown = set(data) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged.update(data)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _dump_json(data: dict, path: str) -> None:
    if path == "-":
        json.dump(data, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_modulus(text: str) -> int:
    return int(text, 0)


def _format_rate(name: str, est) -> str:
    if est.rate is None:
        return f"{name}: n/a (no trials)"
    return (
        f"{name}: {est.rate:.6f}  [{est.low:.6f}, {est.high:.6f}]"
        f"  ({est.successes}/{est.trials})"
    )


def _session_from(merged: dict) -> SessionConfig:
    return SessionConfig(
        n=merged["n"],
        rounds=merged["rounds"],
        channel=merged["channel"],
        sample_fraction=merged["sample_fraction"],
        seed=merged["seed"],
        ec_mode=merged["ec_mode"],
        condition_strict=merged["condition_strict"],
        modulus=merged["modulus"],
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    merged = _layer(args, SESSION_DEFAULTS)
    out = run_session(_session_from(merged))
    stats = out.stats
    if args.round_log:
        with open(args.round_log, "w", encoding="utf-8", newline="") as fh:
            out.log.to_csv(fh)
    quiet = args.json == "-"
    if not quiet:
        print(
            f"rounds: {stats.rounds}  sifted: {stats.sifted_count}"
            f"  sampled: {stats.sample_count}"
        )
        if stats.status != "ok":
            print(f"status: {stats.status}")
        else:
            print(_format_rate("e_b", stats.e_b))
            print(_format_rate("e_b_all", stats.e_b_all))
            print(_format_rate("e_c", stats.e_c))
            lhs = stats.condition_lhs
            shown = "n/a" if lhs is None else f"{lhs:.6f}"
            print(f"continuation lhs: {shown}  (< 1/2 to continue)")
            print(f"verdict: {'continue' if stats.condition_pass else 'abort'}")
            print(f"key bits: {stats.key_length}")
    if args.json:
        _dump_json({"config": merged, "stats": stats.to_json_dict()}, args.json)
    if stats.status != "ok":
        return EXIT_ERROR
    return EXIT_PASS if stats.condition_pass else EXIT_EXPECTED_FAIL


def cmd_analyze(args: argparse.Namespace) -> int:
    merged = _layer(args, ANALYZE_DEFAULTS)
    spec = field_spec(merged["n"], merged["modulus"])
    model = resolve_channel(merged["channel"], spec)
    report = analysis_report(model)
    quiet = args.json == "-"
    if not quiet:
        print(f"channel: {merged['channel']}  (n={spec.n}, kind={report['kind']})")
        if report["kind"] == "unitary":
            for key, value in sorted(report["outcome_table"].items()):
                if value:
                    print(f"  outcome {key}: {value:.6g}")
        e_b = report.get("e_b")
        print(f"e_b: {'n/a' if e_b is None else format(e_b, '.6g')}")
        print(f"e_c: {report['e_c']:.6g}")
        if "error_matrix" in report:
            m = report["error_matrix"]
            print(
                "error matrix: "
                f"p_i={m['p_i']:.6g} p_x={m['p_x']:.6g} "
                f"p_y={m['p_y']:.6g} p_z={m['p_z']:.6g}"
            )
        if "distill_lhs" in report:
            word = "pass" if report["distill_pass"] else "fail"
            print(f"distill condition: lhs={report['distill_lhs']:.6g} ({word})")
        if "continuation_lhs" in report:
            word = "pass" if report["continuation_pass"] else "fail"
            print(
                f"continuation condition: lhs={report['continuation_lhs']:.6g} ({word})"
            )
    if args.json:
        _dump_json(report, args.json)
    return EXIT_PASS


def _distill_matrix(merged: dict):
    if merged["matrix"] is not None and merged["channel"] is not None:
        raise ValueError("give either --matrix or --channel, not both")
    if merged["matrix"] is not None:
        raw = merged["matrix"]
        parts = raw.split(",") if isinstance(raw, str) else list(raw)
        if len(parts) != 4:
            raise ValueError("matrix needs four comma-separated entries")
        return tuple(float(p) for p in parts)
    if merged["channel"] is None:
        raise ValueError("distill needs --matrix or --channel")
    spec = field_spec(merged["n"], merged["modulus"])
    model = resolve_channel(merged["channel"], spec)
    dist = bell_distribution(model)
    return error_matrix(dist)


def cmd_distill(args: argparse.Namespace) -> int:
    merged = _layer(args, DISTILL_DEFAULTS)
    matrix = _distill_matrix(merged)
    budget = DistillBudget(
        k_max=merged["k_max"],
        r_max=merged["r_max"],
        css_target=merged["css_target"],
        z_budget=merged["z_budget"],
        margin=merged["margin"],
    )
    m = ep_recursion(matrix, 0)
    report: dict = {
        "matrix": list(m.as_floats()),
        "secure_condition": check_secure_condition(m),
    }
    quiet = args.json == "-"
    feasible = True
    params = None
    if merged["auto_params"]:
        outcome = select_params(m, budget)
        report["selection"] = outcome.to_json_dict()
        feasible = outcome.feasible
        params = outcome.params
        if not quiet:
            if outcome.feasible:
                x_fail = outcome.x_fail
                z_fail = outcome.z_fail
                word = "yes" if outcome.meets_target else "no"
                print(f"selected: k={params.k} r={params.r}")
                print(f"x_fail: {x_fail:.6g}  z_fail: {z_fail:.6g}")
                print(
                    f"meets css target {budget.css_target}: {word}"
                    f"  (sum {x_fail + z_fail:.6g})"
                )
            else:
                print(f"no feasible parameters up to k_max={budget.k_max}")
    else:
        if merged["k"] is None or merged["r"] is None:
            raise ValueError("distill needs --auto-params or both --k and --r")
        params = DistillParams(merged["k"], merged["r"])
        pumped = ep_recursion(m, params.k)
        x_fail, z_fail = majority_stage(pumped, params.r)
        report["manual"] = {
            "k": params.k,
            "r": params.r,
            "pumped_matrix": list(pumped.as_floats()),
            "x_fail": x_fail,
            "z_fail": z_fail,
        }
        if not quiet:
            print(f"params: k={params.k} r={params.r}")
            print(
                "pumped matrix: "
                + " ".join(f"{v:.6g}" for v in pumped.as_floats())
            )
            print(f"x_fail: {x_fail:.6g}  z_fail: {z_fail:.6g}")
    if merged["count"] is not None and params is not None and feasible:
        rng = np.random.default_rng(merged["seed"])
        keys = sample_labeled_key(m, merged["count"], rng)
        run = simulate_distillation(keys, params, rng, matrix=m)
        report["run"] = run.to_json_dict()
        if not quiet:
            rate = run.disagreement_rate
            shown = "n/a" if rate is None else f"{rate:.6g}"
            print(
                f"run: {run.input_length} labels -> {run.survivor_count} survivors"
                f" -> {run.n_blocks} blocks, disagreement {shown}"
            )
    if args.json:
        _dump_json(report, args.json)
    return EXIT_PASS if feasible else EXIT_EXPECTED_FAIL


def cmd_threshold(args: argparse.Namespace) -> int:
    merged = _layer(args, THRESHOLD_DEFAULTS)
    result = e_max_scan(merged["n"], grid=merged["grid"], ec_samples=merged["ec_samples"])
    quiet = args.json == "-"
    if not quiet:
        print(
            f"n={result.n} grid={result.grid}: e_max = {result.e_max:.6f}"
            f"  (resolution {result.resolution:.6g})"
        )
        statuses: dict[str, int] = {}
        for row in result.rows:
            statuses[row.status] = statuses.get(row.status, 0) + 1
        for status in sorted(statuses):
            print(f"  {status}: {statuses[status]} slices")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            result.to_csv(fh)
    if args.json:
        _dump_json(result.to_json_dict(), args.json)
    return EXIT_PASS


def cmd_verify(args: argparse.Namespace) -> int:
    merged = _layer(args, VERIFY_DEFAULTS)
    results = verify_mod.run_all(samples=merged["samples"], seed=merged["seed"])
    for suite in results:
        print(suite.line())
    if all(suite.passed for suite in results):
        print("all checks passed")
        return EXIT_PASS
    print("verification FAILED")
    return EXIT_ERROR


def cmd_netrun(args: argparse.Namespace) -> int:
    merged = _layer(args, NETRUN_DEFAULTS)
    if merged["role"] is None:
        raise ValueError("netrun needs --role alice|bob|eve")
    cfg = RoleConfig(
        role=merged["role"],
        session=_session_from(merged),
        params=DistillParams(merged["k"], merged["r"]),
        listen=merged["listen"],
        connect_alice=merged["connect_alice"],
        connect_bob=merged["connect_bob"],
    )
    report = run_role(cfg)
    quiet = args.report == "-"
    if not quiet:
        print(f"role: {report.role}  status: {report.status}")
        if report.abort_sent:
            print(f"abort sent: {report.abort_sent}")
        shared = report.shared or {}
        if "sifted" in shared:
            print(f"rounds: {shared['rounds']}  sifted: {shared['sifted']}")
        if "e_b" in shared:
            s, t = shared["e_b"]
            rate = "n/a" if not t else f"{s / t:.6f}"
            print(f"sample e_b: {rate}  ({s}/{t})")
        if "condition_pass" in shared:
            verdict = "continue" if shared["condition_pass"] else "abort"
            print(f"verdict: {verdict}")
        if "survivors" in shared:
            print(
                f"survivors: {shared['survivors']}  blocks: {shared['blocks']}"
                f"  disagreements: {shared['disagreements']}"
            )
        if report.final_key is not None:
            print(f"final key bits: {len(report.final_key)}")
    if args.report:
        _dump_json(report.to_json_dict(), args.report)
    return report.exit_code


def _add_session_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, help="field degree, 2..8")
    p.add_argument("--rounds", type=int, help="transmission rounds")
    p.add_argument("--channel", help="channel string, e.g. z_flip:0.3")
    p.add_argument(
        "--sample-fraction", dest="sample_fraction", type=float,
        help="fraction of sifted rounds revealed",
    )
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--ec-mode", dest="ec_mode", choices=EC_MODES)
    p.add_argument(
        "--strict", dest="condition_strict", action=argparse.BooleanOptionalAction,
        help="strict (<) versus relaxed (<=) continuation comparison",
    )
    p.add_argument("--modulus", type=_parse_modulus, help="field modulus override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quditqkd",
        description="qudit prepare-and-measure key distribution workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one seeded local session")
    _add_session_flags(p)
    p.add_argument("--config", help="JSON file with flag defaults")
    p.add_argument("--round-log", dest="round_log", help="write per-round CSV here")
    p.add_argument("--json", help="write the JSON report here ('-' for stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="closed-form channel statistics")
    p.add_argument("--n", type=int)
    p.add_argument("--channel")
    p.add_argument("--modulus", type=_parse_modulus)
    p.add_argument("--config", help="JSON file with flag defaults")
    p.add_argument("--json", help="write the JSON report here ('-' for stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("distill", help="select and run distillation parameters")
    p.add_argument("--matrix", help="p_i,p_x,p_y,p_z")
    p.add_argument("--channel", help="derive the matrix from this channel")
    p.add_argument("--n", type=int)
    p.add_argument("--modulus", type=_parse_modulus)
    p.add_argument(
        "--auto-params", dest="auto_params", action=argparse.BooleanOptionalAction,
        help="search for the smallest workable depth",
    )
    p.add_argument("--k", type=int, help="pumping depth")
    p.add_argument("--r", type=int, help="majority block size (odd)")
    p.add_argument("--k-max", dest="k_max", type=int)
    p.add_argument("--r-max", dest="r_max", type=int)
    p.add_argument("--css-target", dest="css_target", type=float)
    p.add_argument("--z-budget", dest="z_budget", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--count", type=int, help="also run this many sampled labels")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file with flag defaults")
    p.add_argument("--json", help="write the JSON report here ('-' for stdout)")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("threshold", help="feasibility frontier scan")
    p.add_argument("--n", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--ec-samples", dest="ec_samples", type=int)
    p.add_argument("--csv", help="write per-slice rows here")
    p.add_argument("--config", help="JSON file with flag defaults")
    p.add_argument("--json", help="write the JSON report here ('-' for stdout)")
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("verify", help="built-in consistency suites")
    p.add_argument("--samples", type=int, help="random draws per sampled suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file with flag defaults")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("netrun", help="launch one networked role")
    p.add_argument("--role", choices=("alice", "bob", "eve"))
    _add_session_flags(p)
    p.add_argument("--k", type=int, help="pumping depth")
    p.add_argument("--r", type=int, help="majority block size (odd)")
    p.add_argument("--listen", help="host:port to listen on")
    p.add_argument("--connect-alice", dest="connect_alice", help="host:port of alice")
    p.add_argument("--connect-bob", dest="connect_bob", help="host:port of bob")
    p.add_argument("--config", help="JSON file with flag defaults")
    p.add_argument("--report", help="write the JSON role report here ('-' for stdout)")
    p.set_defaults(func=cmd_netrun)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ValueError,
        UnsupportedModelError,
        InsufficientKeyError,
        OSError,
        json.JSONDecodeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
