"""Countermeasures: timing correlation of forwarding logs, stream poisoning, cover traffic."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .network import MSAT_PER_SAT
from .protocol import CommandTranscript
from .sim import NS_PER_S

DEFAULT_WINDOW_S = 10.0
DEFAULT_FEE_TOLERANCE_SAT = 8


@dataclass(frozen=True)
class MatchedPair:
    monitor: str
    event: object  # ForwardingEvent
    receipt: tuple  # (timestamp_ns, amount_sat)


@dataclass
class CorrelationFinding:
    candidate_predecessor: str
    matched: list = field(default_factory=list)
    score: float = 0.0

    def as_record(self):
        return {"candidate": self.candidate_predecessor, "score": self.score,
                "matched_pairs": len(self.matched)}


def matches(event, receipt, window_s, fee_tolerance_sat):
    """Window and amount-consistency predicate for one (event, receipt) pair."""
    ts, amount = receipt
    window_ns = int(round(window_s * NS_PER_S))
    return (amount <= event.amt_out_sat <= amount + fee_tolerance_sat
            and ts - window_ns <= event.timestamp_ns <= ts)


def correlate(cc_receipts, monitor_logs, channel_info, window_s=DEFAULT_WINDOW_S,
              fee_tolerance_sat=DEFAULT_FEE_TOLERANCE_SAT):
    """Rank the upstream peers of monitored nodes by how many C&C receipts they explain.

    ``cc_receipts`` is a list of ``(timestamp_ns, amount_sat)``; ``monitor_logs``
    maps a monitored node id to its forwarding events; ``channel_info`` maps a
    channel id to its two endpoints and plays the role of a channel lookup.
    Channels missing from it resolve to ``"chan:<id>"``.
    """
    if window_s <= 0:
        raise ValueError("window must be positive")
    receipts = sorted(cc_receipts)
    if not receipts:
        return []
    window_ns = int(round(window_s * NS_PER_S))
    by_candidate: dict[str, CorrelationFinding] = {}
    explained: dict[str, set] = {}
    for monitor in sorted(monitor_logs):
        events = sorted(monitor_logs[monitor], key=lambda e: e.timestamp_ns)
        for idx, receipt in enumerate(receipts):
            ts, amount = receipt
            for ev in events:
                if ev.timestamp_ns > ts:
                    break
                if ev.timestamp_ns < ts - window_ns:
                    continue
                if not amount <= ev.amt_out_sat <= amount + fee_tolerance_sat:
                    continue
                cand = _upstream(channel_info, monitor, ev.chan_id_in)
                finding = by_candidate.setdefault(cand, CorrelationFinding(cand))
                finding.matched.append(MatchedPair(monitor, ev, receipt))
                explained.setdefault(cand, set()).add(idx)
    for cand, finding in by_candidate.items():
        finding.score = len(explained[cand]) / len(receipts)
    return sorted(by_candidate.values(), key=lambda f: (-f.score, f.candidate_predecessor))


def _upstream(channel_info, monitor, chan_id):
    ends = channel_info.get(chan_id)
    if ends is None:
        return f"chan:{chan_id}"
    a, b = ends
    return b if a == monitor else a


def channel_directory(net):
    return {c.channel_id: (c.endpoint_a, c.endpoint_b) for c in net.channels.values()}


def detection_metrics(ground_truth_origin, ranking):
    """1-based rank of the true origin and its score margin over the best other candidate."""
    rank = None
    truth_score = 0.0
    best_other = 0.0
    for i, finding in enumerate(ranking, 1):
        if finding.candidate_predecessor == ground_truth_origin:
            rank = i
            truth_score = finding.score
        else:
            best_other = max(best_other, finding.score)
    return {"rank_of_truth": rank, "score_margin": truth_score - best_other}


@dataclass
class Injection:
    attacker: str
    target: str
    amount_sat: int
    trigger: str
    after_payloads: int = 0
    fired: bool = False
    fired_at_ns: int | None = None
    result: object = None  # PaymentResult

    @property
    def effective(self):
        return self.fired and self.result is not None and self.result.success

    @property
    def cost_msat(self):
        if not self.effective:
            return 0
        return self.amount_sat * MSAT_PER_SAT + self.result.total_fee_msat

    def as_record(self):
        return {
            "attacker": self.attacker, "target": self.target, "amount_sat": self.amount_sat,
            "trigger": self.trigger, "fired_at_ns": self.fired_at_ns, "success": self.effective,
            "failure_reason": getattr(self.result, "failure_reason", None),
        }


def poison(engine, attacker, cc_pubkey, amount_sat, trigger="immediately",
           transcript: CommandTranscript | None = None, after_payloads=0):
    """Inject a payment into a C&C's incoming stream.

    ``when_receiving`` waits until the transcript is inside a frame and has
    buffered ``after_payloads`` payload amounts, then fires once.
    """
    target = engine.net.node_by_pubkey(cc_pubkey)
    inj = Injection(attacker, target, amount_sat, trigger, after_payloads)

    def fire():
        inj.fired = True
        inj.fired_at_ns = engine.loop.now_ns
        inj.result = engine.send_keysend(attacker, cc_pubkey, amount_sat)

    if trigger == "immediately":
        fire()
    elif trigger == "when_receiving":
        if transcript is None:
            raise ValueError("when_receiving needs the target's transcript to watch")

        def listener(tr, _amount, _ts):
            if not inj.fired and tr.decoder_state == "receiving" and len(tr.buffer) >= after_payloads:
                fire()

        transcript.listeners.append(listener)
    else:
        raise ValueError(f"unknown trigger {trigger!r}")
    return inj


class CoverTraffic:
    """Random relay-to-relay payments with chosen amounts, scheduled on the loop."""

    def __init__(self, engine, relays, seed=0):
        self.engine = engine
        self.relays = sorted(relays)
        self.rng = random.Random(f"{seed}:cover")
        self.results = []

    def plan(self, n_payments, start_ns, end_ns, amounts):
        """Draw ``n_payments`` (time, src, dst, amount) tuples; prefixes of longer plans
        are identical for the same seed."""
        out = []
        for _ in range(n_payments):
            t = self.rng.randrange(start_ns, end_ns)
            src, dst = self.rng.sample(self.relays, 2)
            out.append((t, src, dst, self.rng.choice(amounts)))
        return out

    def schedule(self, plan):
        for t, src, dst, amount in plan:
            self.engine.loop.schedule_at(t, self._pay, src, dst, amount)

    def _pay(self, src, dst, amount):
        net = self.engine.net
        if not net.node(src).online:
            return
        self.results.append(self.engine.send_keysend(src, net.pubkey(dst), amount))
