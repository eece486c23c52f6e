"""Botmaster -> C&C command propagation, the receiver state machine and reimbursement."""
from __future__ import annotations

from dataclasses import dataclass, field

from .codec import END, START, encode, frame
from .errors import CodecError
from .network import MSAT_PER_SAT
from .payments import PaymentEngine, RouteConstraints
from .sim import seconds_to_ns

DEFAULT_RETRY_LIMIT = 3
DEFAULT_RESCHEDULE_DELAY_S = 600.0
DEFAULT_RESERVE_SAT = 1000


@dataclass
class PaymentAttempt:
    position: int
    kind: str  # start | payload | end
    amount_sat: int
    success: bool
    sent_at_ns: int
    settled_at_ns: int
    latency_s: float
    fee_msat: int
    failure_reason: str | None
    restart: int = 0  # how many reschedules preceded this attempt

    def as_record(self):
        return dict(self.__dict__)


@dataclass
class SendSession:
    target: str
    command: str
    scheme: object
    retry_limit_k: int = DEFAULT_RETRY_LIMIT
    consecutive_failures: int = 0
    state: str = "pending"  # pending | in_progress | completed | rescheduled
    rescheduled_at_ns: int | None = None
    payments_sent: int = 0
    satoshi_spent: int = 0
    fees_paid_msat: int = 0
    restarts: int = 0
    started_at_ns: int | None = None
    completed_at_ns: int | None = None
    attempts: list = field(default_factory=list)
    position: int = 0
    _frame: list = field(default_factory=list, repr=False)

    def successful(self, kind=None):
        return [a for a in self.attempts if a.success and (kind is None or a.kind == kind)]

    @property
    def payload_latency_s(self):
        """Summed delivery time of the payload payments of the final (successful) pass."""
        if self.state != "completed":
            return None
        n = len(self._frame) - 2
        payload = [a for a in self.successful("payload")][-n:] if n else []
        return sum(a.latency_s for a in payload)

    @property
    def payload_fees_msat(self):
        return sum(a.fee_msat for a in self.successful("payload"))

    def as_record(self):
        return {
            "target": self.target,
            "command": self.command,
            "scheme": self.scheme.name,
            "state": self.state,
            "rescheduled_at_ns": self.rescheduled_at_ns,
            "retry_limit_k": self.retry_limit_k,
            "payments_sent": self.payments_sent,
            "attempts": len(self.attempts),
            "restarts": self.restarts,
            "satoshi_spent": self.satoshi_spent,
            "fees_paid_msat": self.fees_paid_msat,
            "payload_fees_msat": self.payload_fees_msat,
            "payload_latency_s": self.payload_latency_s,
            "started_at_ns": self.started_at_ns,
            "completed_at_ns": self.completed_at_ns,
        }


class CommandSender:
    """Runs one independent send session per target on the engine's event loop.

    A failed payment is retried immediately; once a payment has been retried
    ``retry_limit_k`` times in a row the session is rescheduled and, on
    resumption, restarts from the start sentinel.
    """

    def __init__(self, engine: PaymentEngine, botmaster, reschedule_delay_s=DEFAULT_RESCHEDULE_DELAY_S,
                 max_reschedules=0, constraints: RouteConstraints | None = None):
        self.engine = engine
        self.botmaster = botmaster
        self.reschedule_delay_ns = seconds_to_ns(reschedule_delay_s)
        self.max_reschedules = max_reschedules
        self.constraints = constraints
        self.sessions: list[SendSession] = []

    def submit(self, target, command, scheme, retry_limit_k=DEFAULT_RETRY_LIMIT, at_ns=None):
        session = SendSession(target, command, scheme, retry_limit_k)
        session._frame = frame(encode(command, scheme))
        self.sessions.append(session)
        loop = self.engine.loop
        loop.schedule_at(loop.now_ns if at_ns is None else at_ns, self._begin, session)
        return session

    def _begin(self, s):
        net = self.engine.net
        s.started_at_ns = self.engine.loop.now_ns
        if not net.node(s.target).online:
            self._reschedule(s)
            return
        s.state = "in_progress"
        s.position = 0
        s.consecutive_failures = 0
        self._send_next(s)

    def _send_next(self, s):
        eng = self.engine
        amount = s._frame[s.position]
        kind = "start" if s.position == 0 else "end" if s.position == len(s._frame) - 1 else "payload"
        res = eng.send_keysend(self.botmaster, eng.net.pubkey(s.target), amount, self.constraints)
        s.attempts.append(PaymentAttempt(s.position, kind, amount, res.success, res.sent_at_ns,
                                         res.settled_at_ns, res.latency_s, res.total_fee_msat,
                                         res.failure_reason, s.restarts))
        if res.success:
            s.consecutive_failures = 0
            s.payments_sent += 1
            s.satoshi_spent += amount
            s.fees_paid_msat += res.total_fee_msat
            s.position += 1
            if s.position == len(s._frame):
                eng.loop.schedule_at(res.settled_at_ns, self._complete, s)
            else:
                eng.loop.schedule_at(res.settled_at_ns, self._send_next, s)
        elif s.consecutive_failures < s.retry_limit_k:
            s.consecutive_failures += 1
            eng.loop.schedule_at(res.settled_at_ns, self._send_next, s)
        else:
            self._reschedule(s)

    def _complete(self, s):
        s.state = "completed"
        s.completed_at_ns = self.engine.loop.now_ns

    def _reschedule(self, s):
        s.state = "rescheduled"
        s.rescheduled_at_ns = self.engine.loop.now_ns + self.reschedule_delay_ns
        if s.restarts < self.max_reschedules:
            s.restarts += 1
            self.engine.loop.schedule_at(s.rescheduled_at_ns, self._begin, s)


def send_command(engine: PaymentEngine, botmaster, targets, command, scheme,
                 retry_limit_k=DEFAULT_RETRY_LIMIT, reschedule_delay_s=DEFAULT_RESCHEDULE_DELAY_S,
                 constraints=None):
    """Send ``command`` to every target and return the per-target sessions once each
    has either completed or been rescheduled."""
    sender = CommandSender(engine, botmaster, reschedule_delay_s, max_reschedules=0, constraints=constraints)
    sessions = [sender.submit(t, command, scheme, retry_limit_k) for t in targets]
    engine.loop.run_until(lambda: all(s.state in ("completed", "rescheduled") for s in sessions))
    return sessions


@dataclass
class CommandTranscript:
    receiver: str
    scheme: object
    received: list = field(default_factory=list)  # (timestamp_ns, amount_sat)
    decoder_state: str = "idle"
    buffer: list = field(default_factory=list)
    decoded_commands: list = field(default_factory=list)  # str or CodecError
    strays: list = field(default_factory=list)
    abandoned: list = field(default_factory=list)  # partial frames cut short by a new start
    listeners: list = field(default_factory=list, repr=False)

    def commands(self):
        return [c for c in self.decoded_commands if isinstance(c, str)]

    def errors(self):
        return [c for c in self.decoded_commands if isinstance(c, CodecError)]

    def receipt_records(self):
        return [{"receiver": self.receiver, "timestamp": ts, "amount": a} for ts, a in self.received]


def cnc_on_payment(transcript: CommandTranscript, amount, timestamp_ns):
    """Feed one settled incoming amount into the receiver state machine.

    Returns the decoded command (or the decode error) when an end sentinel
    closes a frame, otherwise None. A start sentinel inside a frame abandons
    the partial frame and opens a new one.
    """
    transcript.received.append((timestamp_ns, amount))
    out = None
    if transcript.decoder_state == "idle":
        if amount == START:
            transcript.decoder_state = "receiving"
            transcript.buffer = []
        else:
            transcript.strays.append((timestamp_ns, amount))
    elif amount == START:
        # the sender restarted the command; the partial frame can never complete
        transcript.abandoned.append(list(transcript.buffer))
        transcript.buffer = []
    elif amount == END:
        try:
            out = transcript.scheme.decode(transcript.buffer)
        except CodecError as exc:
            out = exc
        transcript.decoded_commands.append(out)
        transcript.buffer = []
        transcript.decoder_state = "idle"
    else:
        transcript.buffer.append(amount)
    for listener in transcript.listeners:
        listener(transcript, amount, timestamp_ns)
    return out


def attach_cnc(engine: PaymentEngine, node_id, scheme) -> CommandTranscript:
    transcript = CommandTranscript(node_id, scheme)
    engine.on_receive(node_id, lambda amount, ts, _res: cnc_on_payment(transcript, amount, ts))
    return transcript


@dataclass(frozen=True)
class ReimbursementPolicy:
    threshold_sat: int
    collector_pubkey: str
    reserve_sat: int = DEFAULT_RESERVE_SAT

    def __post_init__(self):
        if self.threshold_sat <= 0:
            raise ValueError("threshold must be positive")
        if self.reserve_sat < 0:
            raise ValueError("reserve must be non-negative")


def earned_msat(net, node_id):
    """Per-channel balance above the capital ``node_id`` itself locked in, keyed by channel."""
    out = {}
    for chan in net.channels_of(node_id):
        extra = chan.local_msat(node_id) - chan.funded_msat(node_id)
        if extra > 0:
            out[chan.channel_id] = extra
    return out


def reimburse_tick(engine: PaymentEngine, cnc, policy: ReimbursementPolicy):
    """Forward received funds to the collector once they reach the threshold.

    Pays out of the channel holding the most received funds, leaving
    ``reserve_sat`` there for routing fees; other channels wait for later ticks.
    """
    net = engine.net
    earned = earned_msat(net, cnc)
    if sum(earned.values()) < policy.threshold_sat * MSAT_PER_SAT:
        return None
    chan_id = min(earned, key=lambda c: (-earned[c], c))
    amount = earned[chan_id] // MSAT_PER_SAT - policy.reserve_sat
    if amount <= 0:
        return None
    return engine.send_keysend(cnc, policy.collector_pubkey, amount,
                               RouteConstraints(first_channel=chan_id))


def sweep_collector(net, collector, botmaster, sweep_fee_sat=None):
    """Close every collector channel and move the settled funds on-chain to the botmaster.

    Returns the satoshi that reach the botmaster.
    """
    fee = net.config.sweep_fee_sat if sweep_fee_sat is None else sweep_fee_sat
    settled = 0
    for chan in net.channels_of(collector):
        settlement = net.close_channel(chan.channel_id, closer=collector)
        settled += settlement.settled_sat[collector]
    if settled <= fee:
        return 0
    net.transfer_onchain(collector, botmaster, settled - fee, fee, tx_type="sweep")
    return settled - fee
