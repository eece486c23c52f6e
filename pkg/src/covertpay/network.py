"""Channel graph, node roles and on-chain accounting.

Balances inside channels are integer millisatoshi; on-chain balances and
every value crossing the on-chain boundary are integer satoshi.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

from .errors import ChannelError, InsufficientFundsError, NodeError

MSAT_PER_SAT = 1000
SAT_PER_BTC = 100_000_000

ROLES = ("botmaster", "cnc_server", "collector", "relay")
PRIVATE_ROLES = frozenset({"botmaster", "cnc_server", "collector"})

DEFAULT_OPEN_FEE_SAT = 154
DEFAULT_CLOSE_FEE_SAT = 0
DEFAULT_SWEEP_FEE_SAT = 154
DEFAULT_MIN_CAPACITY_SAT = 20_000
DEFAULT_CHANNELS_PER_SERVER = 3


def sat_to_btc(sat):
    """Format satoshi as an 8-decimal BTC string."""
    sign = "-" if sat < 0 else ""
    whole, frac = divmod(abs(int(sat)), SAT_PER_BTC)
    return f"{sign}{whole}.{frac:08d}"


def derive_pubkey(node_id):
    return "02" + hashlib.sha256(f"node:{node_id}".encode()).hexdigest()


@dataclass(frozen=True)
class FeePolicy:
    base_fee_msat: int = 1000
    proportional_rate_ppm: int = 1

    def __post_init__(self):
        if self.base_fee_msat < 0 or self.proportional_rate_ppm < 0:
            raise ValueError("fee policy values must be non-negative")


@dataclass
class NodeRecord:
    node_id: str
    public_key: str
    role: str
    publicly_advertised: bool
    online: bool = True
    onchain_balance_sat: int = 0


@dataclass
class ChannelState:
    channel_id: int
    endpoint_a: str
    endpoint_b: str
    capacity_sat: int
    balance_a_msat: int
    balance_b_msat: int
    private: bool
    policy_a: FeePolicy = field(default_factory=FeePolicy)
    policy_b: FeePolicy = field(default_factory=FeePolicy)
    status: str = "open"
    funder: str | None = None

    @property
    def is_open(self):
        return self.status == "open"

    def _side(self, node_id):
        if node_id == self.endpoint_a:
            return "a"
        if node_id == self.endpoint_b:
            return "b"
        raise ChannelError(f"{node_id} is not an endpoint of channel {self.channel_id}")

    def peer(self, node_id):
        return self.endpoint_b if self._side(node_id) == "a" else self.endpoint_a

    def local_msat(self, node_id):
        return self.balance_a_msat if self._side(node_id) == "a" else self.balance_b_msat

    def policy(self, node_id):
        return self.policy_a if self._side(node_id) == "a" else self.policy_b

    def funded_msat(self, node_id):
        """Capital ``node_id`` itself put into the channel at open time."""
        return self.capacity_sat * MSAT_PER_SAT if self.funder == node_id else 0

    def move(self, sender, amount_msat):
        """Shift ``amount_msat`` from ``sender``'s side to the peer's side."""
        if amount_msat < 0:
            raise ValueError("amount must be non-negative")
        if self._side(sender) == "a":
            if self.balance_a_msat < amount_msat:
                raise ChannelError("directional balance exceeded")
            self.balance_a_msat -= amount_msat
            self.balance_b_msat += amount_msat
        else:
            if self.balance_b_msat < amount_msat:
                raise ChannelError("directional balance exceeded")
            self.balance_b_msat -= amount_msat
            self.balance_a_msat += amount_msat

    def as_record(self):
        return {
            "chan_id": self.channel_id,
            "node1": self.endpoint_a,
            "node2": self.endpoint_b,
            "capacity": self.capacity_sat,
            "private": self.private,
        }


@dataclass(frozen=True)
class LedgerEvent:
    seq: int
    tx_type: str  # funding | closing | sweep
    node: str
    amount_sat: int
    fee_sat: int

    def as_record(self):
        return {
            "seq": self.seq,
            "tx_type": self.tx_type,
            "node": self.node,
            "amount_sat": self.amount_sat,
            "fee_sat": self.fee_sat,
        }


@dataclass(frozen=True)
class Settlement:
    channel_id: int
    closer: str
    settled_sat: dict
    dust_msat: dict
    close_fee_sat: int


class Ledger:
    """On-chain side of the simulation: miner sink and the funding/closing log."""

    def __init__(self):
        self.miner_fee_sink_sat = 0
        self.events: list[LedgerEvent] = []
        # per-node on-chain fees paid, including settlement dust
        self.fees_paid_sat: dict[str, int] = {}
        self.dust_paid_msat: dict[str, int] = {}

    def record(self, tx_type, node, amount_sat, fee_sat):
        event = LedgerEvent(len(self.events) + 1, tx_type, node, amount_sat, fee_sat)
        self.events.append(event)
        self.miner_fee_sink_sat += fee_sat
        self.fees_paid_sat[node] = self.fees_paid_sat.get(node, 0) + fee_sat
        return event


@dataclass
class NetworkConfig:
    open_fee_sat: int = DEFAULT_OPEN_FEE_SAT
    close_fee_sat: int = DEFAULT_CLOSE_FEE_SAT
    sweep_fee_sat: int = DEFAULT_SWEEP_FEE_SAT
    min_channel_capacity_sat: int = DEFAULT_MIN_CAPACITY_SAT
    channels_per_server: int = DEFAULT_CHANNELS_PER_SERVER
    default_fee_policy: FeePolicy = field(default_factory=FeePolicy)


class Network:
    def __init__(self, config: NetworkConfig | None = None, seed=0):
        self.config = config or NetworkConfig()
        self.rng = random.Random(f"{seed}:topology")
        self.nodes: dict[str, NodeRecord] = {}
        self.channels: dict[int, ChannelState] = {}
        self.ledger = Ledger()
        self._by_pubkey: dict[str, str] = {}
        self._adjacent: dict[str, list[int]] = {}
        self._adjacent_public: dict[str, list[int]] = {}
        self._next_channel_id = 1

    # nodes

    def add_node(self, node_id, role="relay", onchain_sat=0, publicly_advertised=None, online=True):
        if node_id in self.nodes:
            raise NodeError(f"duplicate node {node_id}")
        if role not in ROLES:
            raise NodeError(f"unknown role {role!r}")
        if onchain_sat < 0:
            raise NodeError("on-chain balance must be non-negative")
        if publicly_advertised is None:
            publicly_advertised = role not in PRIVATE_ROLES
        if role in PRIVATE_ROLES and publicly_advertised:
            raise NodeError(f"{role} nodes are private")
        pubkey = derive_pubkey(node_id)
        node = NodeRecord(node_id, pubkey, role, publicly_advertised, online, onchain_sat)
        self.nodes[node_id] = node
        self._by_pubkey[pubkey] = node_id
        self._adjacent[node_id] = []
        self._adjacent_public[node_id] = []
        return node

    def node(self, node_id) -> NodeRecord:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise NodeError(f"unknown node {node_id}") from None

    def node_by_pubkey(self, pubkey) -> str:
        try:
            return self._by_pubkey[pubkey]
        except KeyError:
            raise NodeError(f"unknown public key {pubkey[:16]}...") from None

    def pubkey(self, node_id):
        return self.node(node_id).public_key

    def set_online(self, node_id, online):
        self.node(node_id).online = online

    def nodes_with_role(self, role):
        return [n for n in self.nodes.values() if n.role == role]

    def public_relays(self):
        return sorted(n.node_id for n in self.nodes.values() if n.role == "relay" and n.publicly_advertised)

    # channels

    def channel(self, channel_id) -> ChannelState:
        try:
            return self.channels[channel_id]
        except KeyError:
            raise ChannelError(f"unknown channel {channel_id}") from None

    def channels_of(self, node_id, include_closed=False):
        chans = (self.channels[c] for c in self._adjacent[node_id])
        return [c for c in chans if include_closed or c.is_open]

    def public_channels_of(self, node_id):
        chans = (self.channels[c] for c in self._adjacent_public[node_id])
        return [c for c in chans if c.is_open]

    def _new_channel(self, a, b, capacity_sat, balance_a_msat, private, funder, policy_a, policy_b):
        policy_default = self.config.default_fee_policy
        chan = ChannelState(
            channel_id=self._next_channel_id,
            endpoint_a=a,
            endpoint_b=b,
            capacity_sat=capacity_sat,
            balance_a_msat=balance_a_msat,
            balance_b_msat=capacity_sat * MSAT_PER_SAT - balance_a_msat,
            private=private,
            policy_a=policy_a or policy_default,
            policy_b=policy_b or policy_default,
            funder=funder,
        )
        self._next_channel_id += 1
        self.channels[chan.channel_id] = chan
        self._adjacent[a].append(chan.channel_id)
        self._adjacent[b].append(chan.channel_id)
        if not private:
            self._adjacent_public[a].append(chan.channel_id)
            self._adjacent_public[b].append(chan.channel_id)
        return chan

    def _check_endpoints(self, a, b):
        self.node(a)
        self.node(b)
        if a == b:
            raise ChannelError("channel endpoints must differ")

    def add_genesis_channel(self, a, b, capacity_sat, balance_a_sat=None, private=False,
                            policy_a=None, policy_b=None):
        """Create a channel that predates the simulation (no funding transaction).

        Used for the pre-existing public relay graph; the capacity is part of
        the initial conservation total.
        """
        self._check_endpoints(a, b)
        if capacity_sat <= 0:
            raise ChannelError("capacity must be positive")
        if balance_a_sat is None:
            balance_a_msat = capacity_sat * MSAT_PER_SAT // 2
        else:
            if not 0 <= balance_a_sat <= capacity_sat:
                raise ChannelError("balance outside capacity")
            balance_a_msat = balance_a_sat * MSAT_PER_SAT
        return self._new_channel(a, b, capacity_sat, balance_a_msat, private, None, policy_a, policy_b)

    def open_channel(self, funder, peer, capacity_sat, private, policy_funder=None, policy_peer=None):
        self._check_endpoints(funder, peer)
        node = self.node(funder)
        if not node.online:
            raise NodeError(f"funder {funder} is offline")
        if capacity_sat < self.config.min_channel_capacity_sat:
            raise ChannelError(
                f"capacity {capacity_sat} below minimum {self.config.min_channel_capacity_sat}")
        needed = capacity_sat + self.config.open_fee_sat
        if node.onchain_balance_sat < needed:
            raise InsufficientFundsError(
                f"{funder} has {node.onchain_balance_sat} sat, needs {needed}")
        node.onchain_balance_sat -= needed
        self.ledger.record("funding", funder, capacity_sat, self.config.open_fee_sat)
        return self._new_channel(funder, peer, capacity_sat, capacity_sat * MSAT_PER_SAT,
                                 private, funder, policy_funder, policy_peer)

    def close_channel(self, channel_id, closer=None) -> Settlement:
        chan = self.channel(channel_id)
        if not chan.is_open:
            raise ChannelError(f"channel {channel_id} already closed")
        closer = closer or chan.funder or chan.endpoint_a
        chan._side(closer)
        fee = self.config.close_fee_sat
        settled, dust = {}, {}
        for node_id, bal in ((chan.endpoint_a, chan.balance_a_msat), (chan.endpoint_b, chan.balance_b_msat)):
            settled[node_id], dust[node_id] = divmod(bal, MSAT_PER_SAT)
        if settled[closer] < fee:
            raise InsufficientFundsError("closer balance does not cover the close fee")
        settled[closer] -= fee
        # sub-satoshi remainders of both sides add up to 0 or 1000 msat
        dust_sat = sum(dust.values()) // MSAT_PER_SAT
        for node_id in settled:
            self.nodes[node_id].onchain_balance_sat += settled[node_id]
            if dust[node_id]:
                self.ledger.dust_paid_msat[node_id] = self.ledger.dust_paid_msat.get(node_id, 0) + dust[node_id]
        chan.status = "closed"
        chan.balance_a_msat = chan.balance_b_msat = 0
        self.ledger.record("closing", closer, settled[closer], fee)
        self.ledger.miner_fee_sink_sat += dust_sat
        return Settlement(channel_id, closer, settled, dust, fee)

    def autopilot_open(self, node_id, k_channels=None, capacity_sat=None, candidates=None):
        """Open private channels from ``node_id`` to distinct random public relays."""
        k = self.config.channels_per_server if k_channels is None else k_channels
        capacity = self.config.min_channel_capacity_sat if capacity_sat is None else capacity_sat
        pool = sorted(candidates) if candidates is not None else self.public_relays()
        pool = [p for p in pool if p != node_id and self.node(p).publicly_advertised]
        if len(pool) < k:
            raise ChannelError(f"need {k} public nodes, only {len(pool)} available")
        needed = k * (capacity + self.config.open_fee_sat)
        if self.node(node_id).onchain_balance_sat < needed:
            raise InsufficientFundsError(f"{node_id} cannot fund {k} channels")
        peers = self.rng.sample(pool, k)
        return [self.open_channel(node_id, p, capacity, private=True) for p in peers]

    def transfer_onchain(self, src, dst, amount_sat, fee_sat, tx_type="sweep"):
        node = self.node(src)
        self.node(dst)
        if amount_sat < 0 or node.onchain_balance_sat < amount_sat + fee_sat:
            raise InsufficientFundsError(f"{src} cannot transfer {amount_sat} + {fee_sat} fee")
        node.onchain_balance_sat -= amount_sat + fee_sat
        self.nodes[dst].onchain_balance_sat += amount_sat
        return self.ledger.record(tx_type, src, amount_sat, fee_sat)

    # accounting

    def conservation_total_sat(self):
        onchain = sum(n.onchain_balance_sat for n in self.nodes.values())
        locked = sum(c.capacity_sat for c in self.channels.values() if c.is_open)
        return onchain + locked + self.ledger.miner_fee_sink_sat

    def holdings_msat(self, node_ids):
        """On-chain plus local channel balance of a set of nodes, in msat."""
        node_ids = set(node_ids)
        total = sum(self.nodes[n].onchain_balance_sat for n in node_ids) * MSAT_PER_SAT
        for chan in self.channels.values():
            if not chan.is_open:
                continue
            if chan.endpoint_a in node_ids:
                total += chan.balance_a_msat
            if chan.endpoint_b in node_ids:
                total += chan.balance_b_msat
        return total

    def check_invariants(self):
        for chan in self.channels.values():
            if chan.is_open:
                if chan.balance_a_msat < 0 or chan.balance_b_msat < 0:
                    raise AssertionError(f"negative balance in channel {chan.channel_id}")
                if chan.balance_a_msat + chan.balance_b_msat != chan.capacity_sat * MSAT_PER_SAT:
                    raise AssertionError(f"capacity mismatch in channel {chan.channel_id}")
        for node in self.nodes.values():
            if node.onchain_balance_sat < 0:
                raise AssertionError(f"negative on-chain balance at {node.node_id}")


def formation_cost(n_servers, channels_per_server=DEFAULT_CHANNELS_PER_SERVER,
                   open_fee_sat=DEFAULT_OPEN_FEE_SAT):
    """On-chain fees for opening every C&C channel; locked capacity is excluded."""
    if n_servers < 0:
        raise ValueError("n_servers must be non-negative")
    return n_servers * channels_per_server * open_fee_sat
