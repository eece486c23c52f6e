import pytest

from covertpay.network import Network, NetworkConfig
from covertpay.payments import Deterministic, PaymentEngine
from covertpay.sim import EventLoop


def line_network(n_relays, capacity_sat=1_000_000, config=None):
    """S - R1 - ... - Rn - T, all public relays, balances split evenly."""
    net = Network(config or NetworkConfig())
    names = ["S"] + [f"R{i}" for i in range(1, n_relays + 1)] + ["T"]
    for name in names:
        net.add_node(name, "relay", 0)
    for a, b in zip(names, names[1:]):
        net.add_genesis_channel(a, b, capacity_sat)
    return net, names


def balances(net):
    return {c.channel_id: (c.balance_a_msat, c.balance_b_msat) for c in net.channels.values()}


def holdings(net):
    """Local channel balance per node, msat."""
    out = {n: 0 for n in net.nodes}
    for c in net.channels.values():
        if c.is_open:
            out[c.endpoint_a] += c.balance_a_msat
            out[c.endpoint_b] += c.balance_b_msat
    return out


def operator_net(n_cnc=1, bm_capacity=1_000_000, inbound=100_000):
    """botmaster -> R1 -> R2 -> R3 -> cnc_i, and R1 -> collector, all private edges inbound-funded."""
    net = Network()
    net.add_node("botmaster", "botmaster", 10_000)
    net.add_node("collector", "collector", 0)
    for r in ("R1", "R2", "R3"):
        net.add_node(r, "relay", 0)
    net.add_genesis_channel("botmaster", "R1", bm_capacity, bm_capacity, private=True)
    net.add_genesis_channel("R1", "R2", 10_000_000)
    net.add_genesis_channel("R2", "R3", 10_000_000)
    net.add_genesis_channel("R1", "collector", 1_000_000, 1_000_000, private=True)
    cncs = []
    for i in range(n_cnc):
        cid = f"cnc{i}"
        net.add_node(cid, "cnc_server", 0)
        net.add_genesis_channel("R3", cid, inbound, inbound, private=True)
        cncs.append(cid)
    return net, cncs


@pytest.fixture
def line4():
    net, names = line_network(4)
    engine = PaymentEngine(net, EventLoop(), Deterministic(7.0))
    return net, names, engine
