"""Source-routed keysend payments with HTLC-style all-or-nothing settlement."""
from __future__ import annotations

import hashlib
import random
from dataclasses import asdict, dataclass, field

from .errors import NodeError, RoutingError
from .network import MSAT_PER_SAT, Network
from .sim import EventLoop, seconds_to_ns

FAILURE_REASONS = ("no_route", "insufficient_capacity", "destination_offline", "injected_failure")
DEFAULT_MAX_HOPS = 20


def hop_fee(amount_msat, base_fee_msat, rate_ppm):
    if amount_msat < 0 or base_fee_msat < 0 or rate_ppm < 0:
        raise ValueError("fee inputs must be non-negative")
    return base_fee_msat + amount_msat * rate_ppm // 1_000_000


@dataclass(frozen=True)
class Hop:
    channel_id: int
    sender: str
    receiver: str


@dataclass(frozen=True)
class Route:
    """Ordered hops plus the amount carried over each one (msat)."""
    hops: tuple
    amounts_msat: tuple

    @property
    def nodes(self):
        return (self.hops[0].sender,) + tuple(h.receiver for h in self.hops)

    @property
    def intermediaries(self):
        return self.nodes[1:-1]

    @property
    def channel_ids(self):
        return tuple(h.channel_id for h in self.hops)

    @property
    def total_fee_msat(self):
        return self.amounts_msat[0] - self.amounts_msat[-1]

    def hop_fees_msat(self):
        """Fee retained by each intermediary, in route order."""
        return [self.amounts_msat[i] - self.amounts_msat[i + 1] for i in range(len(self.hops) - 1)]


@dataclass(frozen=True)
class RouteConstraints:
    fixed_intermediary_hops: int | None = None
    first_channel: int | None = None
    exclude_nodes: frozenset = frozenset()
    max_hops: int = DEFAULT_MAX_HOPS


@dataclass(frozen=True)
class HtlcLock:
    payment_hash: bytes
    preimage: bytes

    @classmethod
    def from_preimage(cls, preimage):
        return cls(hashlib.sha256(preimage).digest(), preimage)

    def verify(self):
        return hashlib.sha256(self.preimage).digest() == self.payment_hash


@dataclass(frozen=True)
class ForwardingEvent:
    """What a forwarding node stores locally; carries no origin or position data."""
    timestamp_ns: int
    chan_id_in: int
    chan_id_out: int
    amt_in_sat: int
    amt_out_sat: int
    fee_sat: int

    def as_record(self):
        return {
            "timestamp": self.timestamp_ns,
            "chan_id_in": self.chan_id_in,
            "chan_id_out": self.chan_id_out,
            "amt_in": self.amt_in_sat,
            "amt_out": self.amt_out_sat,
            "fee": self.fee_sat,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(int(rec["timestamp"]), int(rec["chan_id_in"]), int(rec["chan_id_out"]),
                   int(rec["amt_in"]), int(rec["amt_out"]), int(rec["fee"]))


@dataclass
class PaymentResult:
    success: bool
    amount_sat: int
    route_length_hops: int = 0
    total_fee_msat: int = 0
    latency_s: float = 0.0
    failure_reason: str | None = None
    source: str = ""
    destination: str = ""
    sent_at_ns: int = 0
    settled_at_ns: int = 0
    route: Route | None = field(default=None, repr=False)
    hop_fees_msat: tuple = ()

    def as_record(self):
        rec = asdict(self)
        rec.pop("route")
        rec["hop_fees_msat"] = list(self.hop_fees_msat)
        rec["channels"] = list(self.route.channel_ids) if self.route else []
        return rec


# latency models

@dataclass(frozen=True)
class Deterministic:
    value_s: float

    def sample(self, rng):
        return float(self.value_s)


@dataclass(frozen=True)
class Uniform:
    lo_s: float
    hi_s: float

    def __post_init__(self):
        if self.lo_s > self.hi_s or self.lo_s < 0:
            raise ValueError(f"invalid uniform latency bounds ({self.lo_s}, {self.hi_s})")

    def sample(self, rng):
        if self.lo_s == self.hi_s:
            return float(self.lo_s)
        return rng.uniform(self.lo_s, self.hi_s)


@dataclass(frozen=True)
class Empirical:
    samples_s: tuple

    def __post_init__(self):
        if not self.samples_s or any(s < 0 for s in self.samples_s):
            raise ValueError("empirical latency needs non-negative samples")

    def sample(self, rng):
        return float(rng.choice(self.samples_s))

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            values = [float(line.split()[0]) for line in fh if line.strip() and not line.startswith("#")]
        return cls(tuple(values))


# Stand-in for the measured keysend delays: mean 7 s, never reaching 10 s.
REPLICATION_LATENCY = Uniform(4.0, 10.0)


def sample_latency(model, rng):
    return model.sample(rng)


class FailureInjector:
    """Scripted probabilistic mid-route failures."""

    def __init__(self, probability=0.0, seed=0):
        if not 0.0 <= probability <= 1.0:
            raise ValueError("failure probability must be in [0, 1]")
        self.probability = probability
        self.rng = random.Random(f"{seed}:failures")

    def failing_hop(self, n_hops):
        """Index of the hop whose HTLC is refused, or None."""
        if self.probability == 0.0:
            return None
        if self.rng.random() < self.probability:
            return self.rng.randrange(n_hops)
        return None


def _usable(net, chan, sender, receiver, source, destination):
    if not chan.is_open:
        return False
    if chan.private and sender != source and receiver != destination:
        return False
    return net.nodes[sender].online and net.nodes[receiver].online


def find_route(net: Network, source, destination, amount_sat, constraints=None) -> Route:
    """Cheapest minimum-hop route that every directional balance can carry.

    Layered backward search from the destination: layer ``h`` holds, for each
    node, the smallest amount it must push into its outgoing channel to get
    ``amount_sat`` to the destination in exactly ``h`` hops, with ties broken
    on the channel-id sequence. Fees never decrease with amount, so the
    smallest downstream requirement always dominates.
    """
    constraints = constraints or RouteConstraints()
    net.node(source)
    net.node(destination)
    if source == destination:
        raise RoutingError("source and destination are the same node")
    if amount_sat <= 0:
        raise ValueError("amount must be positive")
    amount_msat = amount_sat * MSAT_PER_SAT
    excluded = set(constraints.exclude_nodes)
    if constraints.fixed_intermediary_hops is not None:
        lengths = [constraints.fixed_intermediary_hops + 1]
    else:
        lengths = range(1, constraints.max_hops + 1)
    max_len = max(lengths)

    source_private = {}
    for chan in net.channels_of(source):
        if chan.private:
            source_private.setdefault(chan.peer(source), []).append(chan)

    # node -> (amount pushed out of node, channel-id path, node path)
    layer = {destination: (amount_msat, (), (destination,))}
    for h in range(1, max_len + 1):
        nxt = {}
        for receiver, (out_msat, chan_path, node_path) in layer.items():
            # every receiver except the destination forwards, so it must be a public node
            if receiver != destination and (receiver == source or receiver in excluded
                                            or not net.nodes[receiver].publicly_advertised):
                continue
            if receiver == destination:
                candidates = net.channels_of(receiver)
            else:
                # private channels are only usable as the source's first hop
                candidates = net.public_channels_of(receiver) + source_private.get(receiver, [])
            for chan in candidates:
                sender = chan.peer(receiver)
                if sender == destination or sender in excluded:
                    continue
                if h > 1 and sender != source and sender in node_path:
                    continue
                if not _usable(net, chan, sender, receiver, source, destination):
                    continue
                if receiver == destination:
                    need = out_msat
                else:
                    pol = chan_policy_out(net, receiver, chan_path[0])
                    need = out_msat + hop_fee(out_msat, pol.base_fee_msat, pol.proportional_rate_ppm)
                if sender == source and constraints.first_channel is not None \
                        and chan.channel_id != constraints.first_channel:
                    continue
                if chan.local_msat(sender) < need:
                    continue
                cand = (need, (chan.channel_id,) + chan_path, (sender,) + node_path)
                best = nxt.get(sender)
                if best is None or cand[:2] < best[:2]:
                    nxt[sender] = cand
        layer = nxt
        if h in lengths and source in layer:
            return _build_route(net, layer[source], amount_msat)
        if not layer:
            break
    raise RoutingError(f"no route from {source} to {destination} for {amount_sat} sat")


def chan_policy_out(net, node_id, channel_id):
    return net.channels[channel_id].policy(node_id)


def _build_route(net, entry, amount_msat):
    first_msat, chan_path, node_path = entry
    hops = tuple(Hop(c, node_path[i], node_path[i + 1]) for i, c in enumerate(chan_path))
    amounts = [0] * len(hops)
    amounts[-1] = amount_msat
    for i in range(len(hops) - 2, -1, -1):
        fwd = hops[i + 1]
        pol = net.channels[fwd.channel_id].policy(fwd.sender)
        amounts[i] = amounts[i + 1] + hop_fee(amounts[i + 1], pol.base_fee_msat, pol.proportional_rate_ppm)
    if amounts[0] != first_msat:
        raise AssertionError("route amount reconstruction mismatch")
    return Route(hops, tuple(amounts))


class PaymentEngine:
    """Executes keysend payments on a network, on a shared event loop."""

    def __init__(self, net: Network, loop: EventLoop | None = None, latency=Deterministic(7.0),
                 seed=0, failures: FailureInjector | None = None, constraints=None):
        self.net = net
        self.loop = loop or EventLoop()
        self.latency = latency
        self.latency_rng = random.Random(f"{seed}:latency")
        self.preimage_rng = random.Random(f"{seed}:preimage")
        self.failures = failures or FailureInjector(0.0, seed)
        self.constraints = constraints or RouteConstraints()
        self.history: dict[str, list[ForwardingEvent]] = {}
        self.results: list[PaymentResult] = []
        self._receive_hooks: dict[str, list] = {}
        self.fees_paid_msat: dict[str, int] = {}

    def on_receive(self, node_id, callback):
        """Call ``callback(amount_sat, timestamp_ns, result)`` when a payment reaches ``node_id``."""
        self._receive_hooks.setdefault(node_id, []).append(callback)

    def send_keysend(self, source, destination_pubkey, amount_sat, constraints=None) -> PaymentResult:
        net = self.net
        now = self.loop.now_ns
        src = net.node(source)
        if not src.online:
            raise NodeError(f"source {source} is offline")
        destination = net.node_by_pubkey(destination_pubkey)
        result = PaymentResult(False, amount_sat, source=source, destination=destination,
                               sent_at_ns=now, settled_at_ns=now)
        if not net.node(destination).online:
            result.failure_reason = "destination_offline"
            return self._finish(result)
        try:
            route = find_route(net, source, destination, amount_sat, constraints or self.constraints)
        except RoutingError:
            result.failure_reason = "no_route"
            return self._finish(result)
        result.route = route
        result.route_length_hops = len(route.hops)

        lock = HtlcLock.from_preimage(self.preimage_rng.getrandbits(256).to_bytes(32, "big"))
        latency_s = sample_latency(self.latency, self.latency_rng)
        latency_ns = seconds_to_ns(latency_s)
        result.latency_s = latency_s
        result.settled_at_ns = now + latency_ns

        failing = self.failures.failing_hop(len(route.hops))
        locked = []
        reason = None
        for i, (hop, amt) in enumerate(zip(route.hops, route.amounts_msat)):
            if failing == i:
                reason = "injected_failure"
                break
            chan = net.channels[hop.channel_id]
            if chan.local_msat(hop.sender) < amt:
                reason = "insufficient_capacity"
                break
            chan.move(hop.sender, amt)
            locked.append((chan, hop, amt))
        if reason is not None or not lock.verify():
            # unwind every offered HTLC
            for chan, hop, amt in reversed(locked):
                chan.move(hop.receiver, amt)
            result.failure_reason = reason
            return self._finish(result)

        result.success = True
        result.total_fee_msat = route.total_fee_msat
        result.hop_fees_msat = tuple(route.hop_fees_msat())
        self.fees_paid_msat[source] = self.fees_paid_msat.get(source, 0) + route.total_fee_msat
        n = len(route.hops)
        for i, node_id in enumerate(route.intermediaries):
            ts = now + latency_ns * (i + 1) // n
            amt_in = route.amounts_msat[i] // MSAT_PER_SAT
            amt_out = route.amounts_msat[i + 1] // MSAT_PER_SAT
            event = ForwardingEvent(ts, route.hops[i].channel_id, route.hops[i + 1].channel_id,
                                    amt_in, amt_out, amt_in - amt_out)
            self.history.setdefault(node_id, []).append(event)
        for hook in self._receive_hooks.get(destination, []):
            self.loop.schedule_at(result.settled_at_ns, hook, amount_sat, result.settled_at_ns, result)
        return self._finish(result)

    def _finish(self, result):
        self.results.append(result)
        return result

    def forwarding_history(self, node_id):
        self.net.node(node_id)
        return sorted(self.history.get(node_id, []), key=lambda e: (e.timestamp_ns, e.chan_id_in))
