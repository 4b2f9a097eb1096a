"""Command-line surface.

Subcommands: convert, orders, filter, odometer, replay, policy, oracle.
All budgets, bounds, and epsilons are in nats. Exit codes: 0 success,
1 validation error, 2 oracle assertion failure.
"""

import argparse
import json
import random
import sys
from typing import Optional

from rdpmeter.core import (
    OrderSet,
    RdpCurve,
    curve_to_dp,
    default_order_set,
    granularity_order_set,
)
from rdpmeter.harness import (
    FILTER,
    ODOMETER,
    PolicySpec,
    ScheduleReplay,
    SessionConfig,
    SessionLog,
    log_to_csv,
    replay_schedule,
    run_session,
    simulate_policy,
)
from rdpmeter.mechanisms import GaussianMechanism, gaussian_rdp_curve
from rdpmeter.odometers import FilterSchedule
from rdpmeter.oracle import (
    AdversaryScript,
    numeric_renyi_gaussian,
    random_script,
    script_from_json,
    verify_filter_bound,
    verify_truncated_odometer,
)


class _UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; that code is reserved
    # for oracle failures here, so usage problems become exit 1 instead
    def error(self, message):
        raise _UsageError(message)


def _read_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path} is not valid JSON: {exc}") from exc


def _load_orders(path: Optional[str]) -> OrderSet:
    if path is None:
        return default_order_set()
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get("orders")
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON list or {{\"orders\": [...]}}")
    return OrderSet(data)


def _load_curve(path: str) -> RdpCurve:
    return RdpCurve.from_json(_read_json(path))


def _load_script(path: str) -> AdversaryScript:
    return script_from_json(_read_json(path))


def _load_schedule(path: str) -> ScheduleReplay:
    return ScheduleReplay.from_json(_read_json(path))


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        try:
            with open(out, "w", encoding="utf-8") as handle:
                handle.write(text)
        except OSError as exc:
            raise ValueError(f"cannot write {out}: {exc}") from exc


# ------------------------------------------------------------- subcommands


def _cmd_convert(args) -> int:
    curve = _load_curve(args.curve)
    guarantee = curve_to_dp(curve, args.delta)
    _emit(
        json.dumps(
            {
                "eps": guarantee.epsilon,
                "alpha": guarantee.witness_order,
                "delta": guarantee.delta,
            }
        ),
        args.out,
    )
    return 0


def _cmd_orders(args) -> int:
    if args.granularity is not None:
        orders = granularity_order_set(args.granularity)
    else:
        orders = default_order_set()
    _emit(json.dumps({"orders": list(orders)}), args.out)
    return 0


def _session_source(args):
    if (args.script is None) == (args.schedule is None):
        raise _UsageError("exactly one of --script / --schedule is required")
    if args.script is not None:
        return _load_script(args.script)
    return _load_schedule(args.schedule)


def _emit_log(log: SessionLog, args) -> None:
    if args.format == "csv":
        _emit(log_to_csv(log), args.out)
    else:
        _emit(log.to_jsonl(), args.out)


def _cmd_filter(args) -> int:
    if (args.cap is None) == (args.dp_target is None):
        raise _UsageError("exactly one of --cap / --dp-target is required")
    source = _session_source(args)
    if args.cap is not None:
        cap = _load_curve(args.cap)
        orders = cap.orders
        config = SessionConfig(
            mode=FILTER,
            orders=orders,
            delta=args.delta,
            seed=args.seed,
            source=source,
            cap=cap,
            sealed=args.sealed,
        )
    else:
        orders = _load_orders(args.orders_file)
        config = SessionConfig(
            mode=FILTER,
            orders=orders,
            delta=args.delta,
            seed=args.seed,
            source=source,
            dp_target=args.dp_target,
            sealed=args.sealed,
        )
    _emit_log(run_session(config), args)
    return 0


def _cmd_odometer(args) -> int:
    source = _session_source(args)
    orders = _load_orders(args.orders_file)
    config = SessionConfig(
        mode=ODOMETER,
        orders=orders,
        delta=args.delta,
        seed=args.seed,
        source=source,
    )
    _emit_log(run_session(config), args)
    return 0


def _cmd_replay(args) -> int:
    schedule = _load_schedule(args.schedule)
    orders = _load_orders(args.orders_file)
    trace = replay_schedule(schedule, orders)
    if args.format == "csv":
        lines = ["step," + ",".join(f"spent_{a}" for a in orders)]
        for i, curve in enumerate(trace, start=1):
            lines.append(f"{i}," + ",".join(repr(v) for v in curve.values))
        _emit("\n".join(lines) + "\n", args.out)
    else:
        _emit(
            "".join(
                json.dumps({"step": i, "spent": curve.to_json()}) + "\n"
                for i, curve in enumerate(trace, start=1)
            ),
            args.out,
        )
    return 0


def _cmd_policy(args) -> int:
    base = _load_schedule(args.base)
    signal = _read_json(args.signal)
    if not isinstance(signal, list):
        raise ValueError(f"{args.signal}: expected a JSON list of numbers")
    policy = (
        PolicySpec.from_json(_read_json(args.policy))
        if args.policy is not None
        else PolicySpec()
    )
    orders = _load_orders(args.orders_file)
    adapted = simulate_policy(policy, [float(x) for x in signal], base, orders)
    _emit(json.dumps(adapted.to_json()), args.out)
    return 0


def _cmd_oracle_verify_filter(args) -> int:
    script = _load_script(args.script)
    cap = _load_curve(args.cap)
    report = verify_filter_bound(script, cap)
    _emit(json.dumps(report.to_json()), args.out)
    return 0 if report.ok else 2


def _cmd_oracle_verify_truncated(args) -> int:
    script = _load_script(args.script)
    if args.orders_file is not None:
        orders = _load_orders(args.orders_file)
    elif script.orders is not None:
        orders = script.orders
    else:
        raise _UsageError("--orders-file is required for an empty script")
    schedule = FilterSchedule(delta=args.delta, orders=orders)
    report = verify_truncated_odometer(script, schedule, args.f)
    _emit(json.dumps(report.to_json()), args.out)
    return 0 if report.ok else 2


def _cmd_oracle_gaussian_check(args) -> int:
    orders = _load_orders(args.orders_file)
    mech = GaussianMechanism(sigma=args.sigma, sensitivity=args.sensitivity)
    closed = gaussian_rdp_curve(mech, orders)
    errors = [
        abs(
            closed.values[i]
            - numeric_renyi_gaussian(args.sigma, args.sensitivity, alpha)
        )
        for i, alpha in enumerate(orders)
    ]
    worst = max(errors)
    ok = worst <= args.tol
    _emit(
        json.dumps(
            {
                "sigma": args.sigma,
                "sensitivity": args.sensitivity,
                "max_abs_err": worst,
                "tolerance": args.tol,
                "ok": ok,
            }
        ),
        args.out,
    )
    return 0 if ok else 2


def _cmd_oracle_selftest(args) -> int:
    rng = random.Random(args.seed)
    orders = OrderSet([2.0, 4.0])
    schedule = FilterSchedule(delta=args.delta, orders=orders)
    failures = 0
    for _ in range(args.count):
        script = random_script(rng, orders)
        totals = _declared_total(script, orders)
        cap = RdpCurve(
            orders,
            tuple(rng.uniform(0.0, 1.5) * t for t in totals),
        )
        if not verify_filter_bound(script, cap).ok:
            failures += 1
        for f in (1, 2, 3):
            if not verify_truncated_odometer(script, schedule, f).ok:
                failures += 1
    _emit(
        json.dumps(
            {
                "scripts": args.count,
                "checks": args.count * 4,
                "failures": failures,
                "ok": failures == 0,
            }
        ),
        args.out,
    )
    return 0 if failures == 0 else 2


def _declared_total(script: AdversaryScript, orders: OrderSet) -> list[float]:
    """Worst-case declared spend down any root-to-leaf path."""

    def walk(node) -> list[float]:
        if node is None:
            return [0.0] * len(orders)
        best = [0.0] * len(orders)
        for child in node.children.values():
            sub = walk(child)
            best = [max(b, s) for b, s in zip(best, sub)]
        return [r + b for r, b in zip(node.request.values, best)]

    return walk(script.root)


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="rdpmeter",
        description=(
            "Privacy accounting for adaptively chosen budgets: filters, "
            "odometers, and exact verification oracles. All budgets and "
            "bounds are in nats."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert a budget curve to a DP bound")
    p.add_argument("--curve", required=True, help="curve JSON file")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("orders", help="emit an order set")
    p.add_argument(
        "--granularity",
        type=int,
        help="emit the power-of-two set sized for n-outcome mechanisms",
    )
    p.add_argument("--out")
    p.set_defaults(func=_cmd_orders)

    for mode in (FILTER, ODOMETER):
        p = sub.add_parser(mode, help=f"run a {mode} session")
        p.add_argument("--delta", type=float, required=True)
        p.add_argument("--orders-file")
        p.add_argument("--script", help="adversary script JSON file")
        p.add_argument("--schedule", help="budget schedule JSON file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
        p.add_argument("--out")
        if mode == FILTER:
            p.add_argument("--cap", help="budget cap curve JSON file")
            p.add_argument("--dp-target", type=float, help="target DP epsilon")
            p.add_argument(
                "--sealed",
                action="store_true",
                help="refuse every request after the first denial",
            )
            p.set_defaults(func=_cmd_filter)
        else:
            p.set_defaults(func=_cmd_odometer)

    p = sub.add_parser("replay", help="expand a schedule to a cumulative trace")
    p.add_argument("--schedule", required=True)
    p.add_argument("--orders-file")
    p.add_argument("--format", choices=["jsonl", "csv"], default="jsonl")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("policy", help="apply the budget-adaptation rule")
    p.add_argument("--base", required=True, help="baseline schedule JSON file")
    p.add_argument("--signal", required=True, help="per-period signal JSON list")
    p.add_argument("--policy", help="policy parameters JSON file")
    p.add_argument("--orders-file")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_policy)

    p = sub.add_parser("oracle", help="exact verification")
    osub = p.add_subparsers(dest="oracle_command", required=True)

    q = osub.add_parser("verify-filter", help="certify a cap against a script")
    q.add_argument("--script", required=True)
    q.add_argument("--cap", required=True)
    q.add_argument("--out")
    q.set_defaults(func=_cmd_oracle_verify_filter)

    q = osub.add_parser(
        "verify-truncated", help="certify a truncation level against a script"
    )
    q.add_argument("--script", required=True)
    q.add_argument("--delta", type=float, required=True)
    q.add_argument("--f", type=int, required=True)
    q.add_argument("--orders-file")
    q.add_argument("--out")
    q.set_defaults(func=_cmd_oracle_verify_truncated)

    q = osub.add_parser(
        "gaussian-check", help="closed-form Gaussian curve vs quadrature"
    )
    q.add_argument("--sigma", type=float, required=True)
    q.add_argument("--sensitivity", type=float, default=1.0)
    q.add_argument("--tol", type=float, default=1e-6)
    q.add_argument("--orders-file")
    q.add_argument("--out")
    q.set_defaults(func=_cmd_oracle_gaussian_check)

    q = osub.add_parser(
        "selftest", help="random scripts against filter and truncation bounds"
    )
    q.add_argument("--count", type=int, default=25)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--delta", type=float, default=0.05)
    q.add_argument("--out")
    q.set_defaults(func=_cmd_oracle_selftest)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
