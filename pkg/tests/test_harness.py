import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdpmeter.core import OrderSet, RdpCurve, curve_to_dp, default_order_set
from rdpmeter.harness import (
    FILTER,
    ODOMETER,
    PolicySpec,
    ScheduleReplay,
    ScheduleStep,
    SessionConfig,
    SessionLog,
    export,
    log_to_csv,
    reconstruct,
    replay_schedule,
    run_session,
    schedule_total,
    simulate_policy,
)
from rdpmeter.mechanisms import (
    DiscreteMechanism,
    GaussianMechanism,
    gaussian_rdp_curve,
)
from rdpmeter.odometers import running_bound
from rdpmeter.oracle import BOTTOM, AdversaryScript, ScriptNode

ORDERS2 = OrderSet([2.0])
ORDERS24 = OrderSet([2.0, 4.0])

# a mechanism whose two worlds agree: zero true divergence, so any
# nonnegative declared budget is a valid over-declaration
NULL_MECH = DiscreteMechanism(outcomes=("x",), p0=(1.0,), p1=(1.0,))


def _req(eps: float) -> RdpCurve:
    return RdpCurve(ORDERS2, (eps,))


def chain_script() -> AdversaryScript:
    """Requests 0.4, 0.5, 0.2, 0.1; reacts to the denial of the third."""
    n4 = ScriptNode(mech=NULL_MECH, request=_req(0.1))
    n3 = ScriptNode(mech=NULL_MECH, request=_req(0.2), children={BOTTOM: n4})
    n2 = ScriptNode(mech=NULL_MECH, request=_req(0.5), children={"x": n3})
    n1 = ScriptNode(mech=NULL_MECH, request=_req(0.4), children={"x": n2})
    return AdversaryScript(root=n1)


def gaussian_schedule(n: int, sigma: float = 1.0, count: int = 1) -> ScheduleReplay:
    return ScheduleReplay(
        steps=tuple(ScheduleStep(GaussianMechanism(sigma), count) for _ in range(n))
    )


class TestSessionConfig:
    def test_filter_needs_exactly_one_budget_spec(self):
        src = gaussian_schedule(1)
        with pytest.raises(ValueError):
            SessionConfig(
                mode=FILTER, orders=ORDERS2, delta=1e-5, seed=0, source=src
            )
        with pytest.raises(ValueError):
            SessionConfig(
                mode=FILTER,
                orders=ORDERS2,
                delta=1e-5,
                seed=0,
                source=src,
                cap=_req(1.0),
                dp_target=2.0,
            )

    def test_odometer_rejects_budget_specs(self):
        with pytest.raises(ValueError):
            SessionConfig(
                mode=ODOMETER,
                orders=ORDERS2,
                delta=1e-5,
                seed=0,
                source=gaussian_schedule(1),
                cap=_req(1.0),
            )

    def test_mode_and_seed_validation(self):
        src = gaussian_schedule(1)
        with pytest.raises(ValueError):
            SessionConfig(
                mode="auditor", orders=ORDERS2, delta=1e-5, seed=0, source=src
            )
        with pytest.raises(ValueError):
            SessionConfig(
                mode=ODOMETER, orders=ORDERS2, delta=1e-5, seed=-1, source=src
            )

    def test_cap_orders_must_match(self):
        with pytest.raises(ValueError):
            SessionConfig(
                mode=FILTER,
                orders=ORDERS24,
                delta=1e-5,
                seed=0,
                source=gaussian_schedule(1),
                cap=_req(1.0),
            )

    def test_script_orders_must_match(self):
        with pytest.raises(ValueError):
            SessionConfig(
                mode=FILTER,
                orders=ORDERS24,
                delta=1e-5,
                seed=0,
                source=chain_script(),
                cap=RdpCurve(ORDERS24, (1.0, 1.0)),
            )


class TestRunSession:
    def test_scripted_filter_decisions(self):
        config = SessionConfig(
            mode=FILTER,
            orders=ORDERS2,
            delta=1e-5,
            seed=0,
            source=chain_script(),
            cap=_req(1.0),
        )
        log = run_session(config)
        decisions = [r["decision"] for r in log.events]
        assert decisions == ["GRANT", "GRANT", "PASS", "GRANT"]
        assert log.final_state.spent.values == (1.0,)

    def test_header_carries_cap_and_config(self):
        config = SessionConfig(
            mode=FILTER,
            orders=ORDERS2,
            delta=1e-5,
            seed=9,
            source=chain_script(),
            cap=_req(1.0),
        )
        header = run_session(config).header
        assert header["kind"] == "filter"
        assert header["delta"] == 1e-5
        assert header["orders"] == [2.0]
        assert header["seed"] == 9
        assert RdpCurve.from_json(header["cap"]) == _req(1.0)

    def test_fresh_odometer_header_bound_is_doubled_base(self):
        orders = default_order_set()
        delta = 1e-5
        config = SessionConfig(
            mode=ODOMETER,
            orders=orders,
            delta=delta,
            seed=0,
            source=ScheduleReplay(steps=()),
        )
        log = run_session(config)
        m = len(orders)
        expected = min(
            2.0 * math.log(2.0 * m / delta) / (a - 1.0) for a in orders
        )
        assert log.header["bound"]["eps"] == expected
        assert log.events == []

    def test_odometer_events_record_indices_and_bound(self):
        config = SessionConfig(
            mode=ODOMETER,
            orders=ORDERS24,
            delta=1e-5,
            seed=0,
            source=gaussian_schedule(3),
        )
        log = run_session(config)
        assert [r["i"] for r in log.events] == [1, 2, 3]
        state = log.final_state
        bound = running_bound(state)
        last = log.events[-1]["bound"]
        assert last["eps"] == bound.eps_dp
        assert last["alpha"] == bound.witness_order
        assert last["f"] == bound.witness_level
        assert log.events[-1]["f_per_alpha"] == {
            "2.0": state._f[0],
            "4.0": state._f[1],
        }

    def test_same_seed_gives_byte_identical_logs(self):
        config = SessionConfig(
            mode=FILTER,
            orders=ORDERS2,
            delta=1e-5,
            seed=1234,
            source=chain_script(),
            cap=_req(1.0),
        )
        a = run_session(config).to_jsonl()
        b = run_session(config).to_jsonl()
        assert a.encode() == b.encode()

    def test_dp_target_header_records_target_and_derived_cap(self):
        # the conversion floor for {2, 4} at delta 1e-5 is ln(1e5)/3, about
        # 3.84, so a target of 5 leaves real headroom at alpha 4
        config = SessionConfig(
            mode=FILTER,
            orders=ORDERS24,
            delta=1e-5,
            seed=0,
            source=gaussian_schedule(1, sigma=100.0),
            dp_target=5.0,
        )
        log = run_session(config)
        assert log.header["dp_target"] == 5.0
        assert log.events[0]["decision"] == "GRANT"
        cap = RdpCurve.from_json(log.header["cap"])
        spent = log.final_state.spent
        assert not spent.is_zero()
        assert curve_to_dp(spent, 1e-5).epsilon <= 5.0
        assert cap.orders.orders == (2.0, 4.0)

    def test_scripted_sampling_is_seed_dependent(self):
        coin = DiscreteMechanism(
            outcomes=("h", "t"), p0=(0.5, 0.5), p1=(0.5, 0.5)
        )
        deep = ScriptNode(mech=coin, request=RdpCurve(ORDERS2, (0.1,)))
        root = ScriptNode(
            mech=coin, request=RdpCurve(ORDERS2, (0.1,)), children={"h": deep}
        )
        script = AdversaryScript(root=root)
        lengths = set()
        for seed in range(8):
            config = SessionConfig(
                mode=FILTER,
                orders=ORDERS2,
                delta=1e-5,
                seed=seed,
                source=script,
                cap=_req(5.0),
            )
            lengths.add(len(run_session(config).events))
        assert lengths == {1, 2}


class TestReconstruct:
    def test_filter_log_reconstructs_exactly(self):
        config = SessionConfig(
            mode=FILTER,
            orders=ORDERS2,
            delta=1e-5,
            seed=0,
            source=chain_script(),
            cap=_req(1.0),
        )
        log = run_session(config)
        rebuilt = reconstruct(SessionLog.from_jsonl(log.to_jsonl()))
        live = log.final_state
        assert rebuilt.spent.values == live.spent.values
        assert rebuilt.cap == live.cap
        assert [e.decision for e in rebuilt.history] == [
            e.decision for e in live.history
        ]

    def test_odometer_log_reconstructs_exactly(self):
        config = SessionConfig(
            mode=ODOMETER,
            orders=ORDERS24,
            delta=1e-5,
            seed=0,
            source=gaussian_schedule(5, sigma=0.7, count=2),
        )
        log = run_session(config)
        rebuilt = reconstruct(SessionLog.from_jsonl(log.to_jsonl()))
        live = log.final_state
        assert rebuilt.spent.values == live.spent.values
        assert rebuilt._f == live._f
        assert running_bound(rebuilt) == running_bound(live)

    def test_tampered_decision_is_rejected(self):
        config = SessionConfig(
            mode=FILTER,
            orders=ORDERS2,
            delta=1e-5,
            seed=0,
            source=chain_script(),
            cap=_req(1.0),
        )
        log = run_session(config)
        log.records[3]["decision"] = "GRANT"
        with pytest.raises(ValueError, match="replay decides"):
            reconstruct(log)

    def test_tampered_bound_is_rejected(self):
        config = SessionConfig(
            mode=ODOMETER,
            orders=ORDERS24,
            delta=1e-5,
            seed=0,
            source=gaussian_schedule(2),
        )
        log = run_session(config)
        log.records[-1]["bound"]["eps"] *= 0.5
        with pytest.raises(ValueError, match="bound diverges"):
            reconstruct(log)

    def test_unknown_kind_is_rejected(self):
        with pytest.raises(ValueError, match="unknown session kind"):
            reconstruct(SessionLog(records=[{"kind": "ledger"}]))


class TestReplaySchedule:
    def test_constant_sigma_one_accumulates_alpha_halves(self):
        trace = replay_schedule(gaussian_schedule(6), ORDERS24)
        assert len(trace) == 6
        for n, curve in enumerate(trace, start=1):
            assert curve.values == (n * 1.0, n * 2.0)

    def test_sigma_switch_quarters_the_slope(self):
        steps = (
            ScheduleStep(GaussianMechanism(1.0), 2),
            ScheduleStep(GaussianMechanism(2.0), 2),
        )
        trace = replay_schedule(ScheduleReplay(steps=steps), ORDERS2)
        increments = [trace[0].values[0]] + [
            trace[i].values[0] - trace[i - 1].values[0] for i in range(1, 4)
        ]
        assert increments[0] == 1.0 and increments[1] == 1.0
        assert increments[2] == 0.25 and increments[3] == 0.25

    def test_empty_schedule_gives_empty_trace(self):
        assert replay_schedule(ScheduleReplay(steps=()), ORDERS24) == []
        assert schedule_total(ScheduleReplay(steps=()), ORDERS24).is_zero()

    def test_counts_expand_to_individual_queries(self):
        trace = replay_schedule(
            ScheduleReplay(steps=(ScheduleStep(GaussianMechanism(1.0), 5),)),
            ORDERS2,
        )
        assert len(trace) == 5

    def test_step_count_must_be_positive_integer(self):
        with pytest.raises(ValueError):
            ScheduleStep(GaussianMechanism(1.0), 0)
        with pytest.raises(ValueError):
            ScheduleStep(GaussianMechanism(1.0), 1.5)

    def test_schedule_json_round_trip(self):
        sched = ScheduleReplay(
            steps=(
                ScheduleStep(GaussianMechanism(1.0), 3),
                ScheduleStep(GaussianMechanism(2.0, 0.5), 1),
            )
        )
        assert ScheduleReplay.from_json(sched.to_json()) == sched


class TestPolicySpec:
    def test_defaults_match_the_training_recipe(self):
        spec = PolicySpec()
        assert spec.period_epochs == 10
        assert spec.threshold_sigmas == 3.0
        assert spec.sigma_increment == 0.1
        assert spec.eval_sigma == 100.0
        assert spec.min_remaining_epochs == 50

    def test_validation(self):
        with pytest.raises(ValueError):
            PolicySpec(sigma_increment=0.0)
        with pytest.raises(ValueError):
            PolicySpec(batch_increment=0)
        with pytest.raises(ValueError):
            PolicySpec(min_remaining_epochs=-1)
        with pytest.raises(ValueError):
            PolicySpec(period_epochs=0)
        with pytest.raises(ValueError):
            PolicySpec(threshold_sigmas=-0.5)
        with pytest.raises(ValueError):
            PolicySpec(eval_sigma=0.0)

    def test_json_round_trip(self):
        spec = PolicySpec(period_epochs=5, sigma_ceiling=3.0)
        assert PolicySpec.from_json(spec.to_json()) == spec


class TestSimulatePolicy:
    BASE = ScheduleReplay(
        steps=tuple(
            ScheduleStep(GaussianMechanism(1.0), 512) for _ in range(100)
        )
    )

    def test_never_improving_signal_keeps_baseline_sigma(self):
        out = simulate_policy(PolicySpec(), [0.0] * 10, self.BASE, ORDERS24)
        training = [s for s in out.steps if s.count == 512]
        assert len(training) == 100
        assert all(s.mech.sigma == 1.0 for s in training)

    def test_eval_queries_are_added_to_the_trace(self):
        out = simulate_policy(PolicySpec(), [0.0] * 10, self.BASE, ORDERS24)
        evals = [s for s in out.steps if s.count == 1]
        assert len(evals) == 10
        assert all(s.mech.sigma == 100.0 for s in evals)
        base_total = schedule_total(self.BASE, ORDERS24)
        out_total = schedule_total(out, ORDERS24)
        eval_curve = gaussian_rdp_curve(GaussianMechanism(100.0), ORDERS24)
        for i in range(len(ORDERS24)):
            assert out_total.values[i] == pytest.approx(
                base_total.values[i] + 10 * eval_curve.values[i]
            )

    def test_improving_signal_ramps_sigma_by_increment(self):
        threshold = 3.0 * 100.0
        out = simulate_policy(
            PolicySpec(), [threshold] * 10, self.BASE, ORDERS24
        )
        training = [s for s in out.steps if s.count == 512]
        for period in range(10):
            sigma = training[period * 10].mech.sigma
            assert sigma == pytest.approx(1.0 + 0.1 * period)

    def test_signal_below_threshold_walks_sigma_back_down(self):
        signal = [1e9, 1e9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        out = simulate_policy(PolicySpec(), signal, self.BASE, ORDERS24)
        training = [s for s in out.steps if s.count == 512]
        sigmas = [training[p * 10].mech.sigma for p in range(10)]
        assert sigmas[1] == pytest.approx(1.1)
        assert sigmas[2] == pytest.approx(1.2)
        assert sigmas[3] == pytest.approx(1.1)
        assert sigmas[4] == pytest.approx(1.0)
        assert sigmas[5:] == [1.0] * 5

    def test_guard_blocks_decrease_when_headroom_short(self):
        # 60 epochs, improvement only in the last period: by then the
        # adapted run has spent the whole baseline budget, so fewer than
        # 50 further epochs fit and the rule must hold sigma steady
        base = ScheduleReplay(
            steps=tuple(
                ScheduleStep(GaussianMechanism(1.0), 512) for _ in range(60)
            )
        )
        signal = [0.0] * 5 + [1e9]
        out = simulate_policy(PolicySpec(), signal, base, ORDERS24)
        training = [s for s in out.steps if s.count == 512]
        assert all(s.mech.sigma == 1.0 for s in training)

    def test_guard_invariant_headroom_at_every_decrease(self):
        # wherever sigma steps up, at least 50 more epochs must have fit
        # under the cap at the pre-increase rate
        policy = PolicySpec()
        cap = schedule_total(self.BASE, ORDERS24)
        out = simulate_policy(policy, [1e9] * 10, self.BASE, ORDERS24)
        spent = [0.0] * len(ORDERS24)
        prev_sigma = 1.0
        for step in out.steps:
            if step.count == 512 and step.mech.sigma > prev_sigma:
                rate = gaussian_rdp_curve(
                    GaussianMechanism(prev_sigma), ORDERS24
                )
                admitted = max(
                    int((cap.values[i] - spent[i]) / (512 * rate.values[i]))
                    for i in range(len(ORDERS24))
                )
                assert admitted >= policy.min_remaining_epochs
                prev_sigma = step.mech.sigma
            curve = gaussian_rdp_curve(step.mech, ORDERS24)
            for i in range(len(ORDERS24)):
                spent[i] += step.count * curve.values[i]

    def test_sigma_ceiling_caps_the_ramp(self):
        policy = PolicySpec(sigma_ceiling=1.25)
        out = simulate_policy(policy, [1e9] * 10, self.BASE, ORDERS24)
        training = [s for s in out.steps if s.count == 512]
        assert max(s.mech.sigma for s in training) <= 1.25

    def test_signal_length_must_match_period_count(self):
        with pytest.raises(ValueError, match="signal has"):
            simulate_policy(PolicySpec(), [0.0] * 3, self.BASE, ORDERS24)

    def test_non_gaussian_steps_are_rejected(self):
        base = ScheduleReplay(steps=(ScheduleStep(NULL_MECH, 1),))
        with pytest.raises(ValueError, match="Gaussian"):
            simulate_policy(PolicySpec(), [], base, ORDERS24)

    def test_default_orders_are_used_when_unspecified(self):
        base = gaussian_schedule(10, count=1)
        out = simulate_policy(PolicySpec(), [0.0], base)
        assert len(out.steps) == 11


class TestExport:
    def _filter_log(self):
        config = SessionConfig(
            mode=FILTER,
            orders=ORDERS2,
            delta=1e-5,
            seed=0,
            source=chain_script(),
            cap=_req(1.0),
        )
        return run_session(config)

    def _odometer_log(self, n=3):
        config = SessionConfig(
            mode=ODOMETER,
            orders=ORDERS24,
            delta=1e-5,
            seed=0,
            source=gaussian_schedule(n),
        )
        return run_session(config)

    def test_json_export_reimports_exactly(self, tmp_path):
        log = self._odometer_log()
        path = tmp_path / "session.jsonl"
        export(log, "json", str(path))
        again = SessionLog.from_jsonl(path.read_text())
        assert again.records == log.records

    def test_csv_row_count_is_events_plus_header(self, tmp_path):
        log = self._odometer_log(4)
        path = tmp_path / "session.csv"
        export(log, "csv", str(path))
        rows = path.read_text().splitlines()
        assert len(rows) == 4 + 1

    def test_empty_log_gives_header_only_csv(self):
        config = SessionConfig(
            mode=ODOMETER,
            orders=ORDERS24,
            delta=1e-5,
            seed=0,
            source=ScheduleReplay(steps=()),
        )
        text = log_to_csv(run_session(config))
        rows = text.splitlines()
        assert rows == ["step,spent_2.0,spent_4.0,f_2.0,f_4.0,eps_dp"]

    def test_filter_csv_freezes_spent_on_denials(self):
        text = log_to_csv(self._filter_log())
        rows = [r.split(",") for r in text.splitlines()]
        assert rows[0] == ["step", "decision", "spent_2.0"]
        assert [r[1] for r in rows[1:]] == ["GRANT", "GRANT", "PASS", "GRANT"]
        assert [r[2] for r in rows[1:]] == ["0.4", "0.9", "0.9", "1.0"]

    def test_odometer_csv_carries_f_and_bound_columns(self):
        log = self._odometer_log(3)
        rows = [r.split(",") for r in log_to_csv(log).splitlines()]
        state = log.final_state
        assert rows[-1][1:3] == [repr(v) for v in state.spent.values]
        assert rows[-1][3:5] == [str(f) for f in state._f]
        assert float(rows[-1][5]) == running_bound(state).eps_dp

    def test_unwritable_path_reports_the_path(self):
        log = self._filter_log()
        with pytest.raises(OSError, match="no/such/dir"):
            export(log, "json", "/no/such/dir/session.jsonl")

    def test_unknown_format_is_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="format"):
            export(self._filter_log(), "parquet", str(tmp_path / "x"))

    def test_jsonl_parses_one_object_per_line(self):
        log = self._odometer_log()
        lines = log.to_jsonl().splitlines()
        assert len(lines) == len(log.records)
        for line, record in zip(lines, log.records):
            assert json.loads(line) == record

    def test_empty_jsonl_is_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            SessionLog.from_jsonl("")


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    sigmas=st.lists(
        st.floats(min_value=0.3, max_value=4.0, allow_nan=False),
        min_size=1,
        max_size=6,
    ),
)
def test_odometer_sessions_always_reconstruct(seed, sigmas):
    sched = ScheduleReplay(
        steps=tuple(ScheduleStep(GaussianMechanism(s), 1) for s in sigmas)
    )
    config = SessionConfig(
        mode=ODOMETER, orders=ORDERS24, delta=1e-5, seed=seed, source=sched
    )
    log = run_session(config)
    rebuilt = reconstruct(SessionLog.from_jsonl(log.to_jsonl()))
    assert rebuilt.spent.values == log.final_state.spent.values
    assert rebuilt._f == log.final_state._f
