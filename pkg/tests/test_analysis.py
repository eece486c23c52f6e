import pytest
from hypothesis import given, settings, strategies as st

from conftest import operator_net
from covertpay.analysis import (CorrelationFinding, CoverTraffic, channel_directory, correlate, detection_metrics,
                                poison)
from covertpay.codec import AsciiScheme, HuffmanScheme
from covertpay.harness import Run, two_path_detection, two_path_network
from covertpay.payments import Deterministic, ForwardingEvent, PaymentEngine, RouteConstraints
from covertpay.protocol import attach_cnc, send_command
from covertpay.scenario import (AnalysisConfig, CommandConfig, CoverTrafficConfig, OperatorConfig,
                                ReimbursementConfig, Scenario, TopologyConfig)
from covertpay.sim import EventLoop, NS_PER_S

HUFF = HuffmanScheme()


def test_two_path_baseline_attributes_the_botmaster():
    case = two_path_detection()
    assert [f.candidate_predecessor for f in case.ranking] == ["botmaster"]
    assert case.ranking[0].score == 1.0
    assert case.metrics == {"rank_of_truth": 1, "score_margin": 1.0}
    (ev,) = case.engine.forwarding_history("A")
    # 100 sat plus the three forwarding fees of A, B and C
    assert (ev.amt_in_sat, ev.amt_out_sat, ev.fee_sat) == (103, 102, 1)
    (ev,) = case.engine.forwarding_history("D")
    assert ev.amt_in_sat == 53


def test_two_path_extended_blames_the_upstream_relay():
    case = two_path_detection(extended=True)
    assert case.ranking[0].candidate_predecessor == "Q"
    assert "botmaster" not in {f.candidate_predecessor for f in case.ranking}
    assert case.metrics["rank_of_truth"] is None


def test_empty_inputs():
    ev = ForwardingEvent(0, 1, 2, 10, 9, 1)
    assert correlate([], {"A": [ev]}, {}) == []
    assert correlate([(NS_PER_S, 9)], {}, {}) == []
    assert correlate([(NS_PER_S, 9)], {"A": []}, {}) == []
    with pytest.raises(ValueError):
        correlate([(0, 1)], {}, {}, window_s=0)


def test_unknown_channel_resolves_to_a_placeholder():
    ev = ForwardingEvent(NS_PER_S, 77, 2, 10, 9, 1)
    (finding,) = correlate([(2 * NS_PER_S, 9)], {"A": [ev]}, {})
    assert finding.candidate_predecessor == "chan:77"


def test_window_and_tolerance_edges():
    chans = {1: ("up", "A")}
    t = 20 * NS_PER_S
    inside = ForwardingEvent(t - 10 * NS_PER_S, 1, 2, 109, 108, 1)
    late = ForwardingEvent(t + 1, 1, 2, 101, 100, 1)
    early = ForwardingEvent(t - 10 * NS_PER_S - 1, 1, 2, 101, 100, 1)
    too_big = ForwardingEvent(t, 1, 2, 110, 109, 1)
    too_small = ForwardingEvent(t, 1, 2, 100, 99, 1)
    assert [f.score for f in correlate([(t, 100)], {"A": [inside]}, chans)] == [1.0]
    for ev in (late, early, too_big, too_small):
        assert correlate([(t, 100)], {"A": [ev]}, chans) == []


def brute_force(receipts, logs, chans, window_s, tol):
    """Independent oracle: every (event, receipt) pair checked directly."""
    window_ns = int(round(window_s * NS_PER_S))
    explained, pairs = {}, {}
    for monitor, events in logs.items():
        for ev in events:
            ends = chans.get(ev.chan_id_in)
            cand = f"chan:{ev.chan_id_in}" if ends is None else (ends[1] if ends[0] == monitor else ends[0])
            for idx, (ts, amount) in enumerate(sorted(receipts)):
                if ts - window_ns <= ev.timestamp_ns <= ts and amount <= ev.amt_out_sat <= amount + tol:
                    explained.setdefault(cand, set()).add(idx)
                    pairs[cand] = pairs.get(cand, 0) + 1
    return sorted(((c, len(explained[c]) / len(receipts), pairs[c]) for c in explained),
                  key=lambda x: (-x[1], x[0]))


events = st.builds(ForwardingEvent, st.integers(0, 60 * NS_PER_S), st.integers(1, 6), st.integers(1, 6),
                   st.integers(1, 40), st.integers(1, 40), st.integers(0, 3))


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60 * NS_PER_S), st.integers(1, 40)), min_size=1, max_size=12),
       st.dictionaries(st.sampled_from(["A", "B", "C"]), st.lists(events, max_size=15), max_size=3),
       st.floats(0.5, 20), st.integers(0, 8))
def test_correlation_matches_brute_force_oracle(receipts, logs, window_s, tol):
    chans = {1: ("A", "u1"), 2: ("u2", "A"), 3: ("B", "u1"), 4: ("C", "u3"), 5: ("B", "C")}
    ranking = correlate(receipts, logs, chans, window_s, tol)
    got = [(f.candidate_predecessor, f.score, len(f.matched)) for f in ranking]
    assert got == brute_force(receipts, logs, chans, window_s, tol)
    window_ns = int(round(window_s * NS_PER_S))
    for f in ranking:
        assert 0 < f.score <= 1
        for pair in f.matched:
            ts, amount = pair.receipt
            assert ts - window_ns <= pair.event.timestamp_ns <= ts
            assert amount <= pair.event.amt_out_sat <= amount + tol


def test_unmonitored_traffic_never_changes_findings():
    def findings(extra_traffic):
        net, first = two_path_network()
        engine = PaymentEngine(net, EventLoop(), Deterministic(7.0))
        tr = attach_cnc(engine, "cnc", AsciiScheme())
        for amount, chan in zip((100, 50), first):
            engine.send_keysend("botmaster", net.pubkey("cnc"), amount, RouteConstraints(first_channel=chan))
            if extra_traffic:
                # relays that are not monitored pay each other in between
                engine.send_keysend("B", net.pubkey("C"), amount)
                engine.send_keysend("E", net.pubkey("F"), amount)
            engine.loop.run()
        logs = {m: engine.forwarding_history(m) for m in ("A", "D")}
        return [f.as_record() for f in correlate(tr.received, logs, channel_directory(net))]

    assert findings(False) == findings(True)


def test_detection_metrics():
    solo = [CorrelationFinding("bm", score=0.75)]
    assert detection_metrics("bm", solo) == {"rank_of_truth": 1, "score_margin": 0.75}
    ranked = [CorrelationFinding("x", score=0.9), CorrelationFinding("bm", score=0.5)]
    assert detection_metrics("bm", ranked) == {"rank_of_truth": 2, "score_margin": pytest.approx(-0.4)}
    assert detection_metrics("bm", [])["rank_of_truth"] is None


def _poisoned(amount, trigger="when_receiving", after=3, command="sudo"):
    net, cncs = operator_net()
    engine = PaymentEngine(net, EventLoop(), Deterministic(7.0))
    tr = attach_cnc(engine, "cnc0", HUFF)
    inj = poison(engine, "R1", net.pubkey("cnc0"), amount, trigger, tr, after_payloads=after)
    send_command(engine, "botmaster", cncs, command, HUFF)
    engine.loop.run()
    return tr, inj


def test_mid_command_digit_injection_corrupts_the_command():
    tr, inj = _poisoned(3)
    assert inj.effective
    assert tr.decoded_commands and tr.decoded_commands[0] != "sudo"
    assert inj.cost_msat == 3_000 + inj.result.total_fee_msat
    assert inj.result.total_fee_msat == 2_000


def test_end_sentinel_injection_truncates_the_frame():
    tr, inj = _poisoned(6)
    amounts = [a for _, a in tr.received]
    cut = amounts.index(6)
    assert cut == 4  # start sentinel plus three payload digits
    assert tr.decoded_commands[0] != "sudo"
    # the rest of the real command arrives while idle and is logged as strays
    assert [a for _, a in tr.strays] == amounts[cut + 1:]


def test_idle_injection_is_harmless():
    tr, inj = _poisoned(3, trigger="immediately")
    assert inj.effective
    assert tr.commands() == ["sudo"]
    assert tr.strays[0][1] == 3


def test_failed_injection_is_reported():
    net, cncs = operator_net()
    engine = PaymentEngine(net, EventLoop(), Deterministic(7.0))
    net.set_online("cnc0", False)
    inj = poison(engine, "R1", net.pubkey("cnc0"), 3)
    assert inj.fired and not inj.effective and inj.cost_msat == 0
    assert inj.as_record()["failure_reason"] == "destination_offline"


def test_poison_argument_errors():
    net, cncs = operator_net()
    engine = PaymentEngine(net, EventLoop())
    with pytest.raises(ValueError):
        poison(engine, "R1", net.pubkey("cnc0"), 3, trigger="when_receiving")
    with pytest.raises(ValueError):
        poison(engine, "R1", net.pubkey("cnc0"), 3, trigger="later")


def test_cover_traffic_plans_are_seeded_prefixes():
    net, _ = operator_net()
    engine = PaymentEngine(net, EventLoop())
    short = CoverTraffic(engine, ["R1", "R2", "R3"], seed=9).plan(10, 0, 100, [1, 2])
    long = CoverTraffic(engine, ["R1", "R2", "R3"], seed=9).plan(30, 0, 100, [1, 2])
    assert long[:10] == short
    assert all(src != dst for _, src, dst, _ in long)
    other = CoverTraffic(engine, ["R1", "R2", "R3"], seed=10).plan(10, 0, 100, [1, 2])
    assert other != short


def _cover_run(n_payments):
    sc = Scenario(
        seed=3,
        topology=TopologyConfig(kind="layered", layers=3, width=3),
        operator=OperatorConfig(n_cnc_servers=1),
        command=CommandConfig(text="sudo hping", scheme="huffman"),
        analysis=AnalysisConfig(monitors=["L1_0", "L1_1", "L1_2"], compromised=["cnc000"]),
        cover_traffic=CoverTrafficConfig(n_payments=n_payments, amounts=[1, 2, 3, 4], horizon_s=250),
        reimbursement=ReimbursementConfig(enabled=False),
    ).validate()
    return Run(sc).execute().metrics


def test_cover_traffic_degrades_attribution_monotonically():
    metrics = [_cover_run(n) for n in (0, 50, 200, 800)]
    assert metrics[0] == {"rank_of_truth": 1, "score_margin": 1.0}
    ranks = [m["rank_of_truth"] or float("inf") for m in metrics]
    margins = [m["score_margin"] for m in metrics]
    assert ranks == sorted(ranks)
    assert margins == sorted(margins, reverse=True)
    assert margins[-1] < margins[0]
