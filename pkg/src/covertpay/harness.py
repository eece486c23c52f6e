"""End-to-end scenario runs, reports and replication of the published values."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import records
from .analysis import CoverTraffic, channel_directory, correlate, detection_metrics, poison
from .analysis import DEFAULT_FEE_TOLERANCE_SAT, DEFAULT_WINDOW_S
from .codec import SYN_FLOOD_COMMAND, AsciiScheme, HuffmanScheme, frame
from .network import (MSAT_PER_SAT, FeePolicy, Network, NetworkConfig, formation_cost, sat_to_btc)
from .payments import Deterministic, FailureInjector, PaymentEngine, RouteConstraints
from .protocol import (CommandSender, ReimbursementPolicy, attach_cnc, reimburse_tick,
                       sweep_collector)
from .scenario import (CommandConfig, LatencyConfig, OperatorConfig, RoutingConfig, Scenario,
                       TopologyConfig)
from .sim import NS_PER_S, EventLoop, seconds_to_ns

log = logging.getLogger(__name__)

BOTMASTER = "botmaster"
COLLECTOR = "collector"


def cnc_id(i):
    return f"cnc{i:03d}"


# network construction

@dataclass
class Built:
    net: Network
    entry_relays: list
    exit_relays: list
    cnc_nodes: list = field(default_factory=list)
    operator_initial_msat: int = 0


def _layered(net, topo):
    layers = [[f"L{l + 1}_{i}" for i in range(topo.width)] for l in range(topo.layers)]
    for layer in layers:
        for r in layer:
            net.add_node(r, "relay", topo.relay_onchain_sat)
    for upper, lower in zip(layers, layers[1:]):
        for a in upper:
            for b in lower:
                net.add_genesis_channel(a, b, topo.relay_capacity_sat)
    return layers[0], layers[-1]


def _random(net, topo):
    n = topo.n_relays
    relays = [f"R{i:03d}" for i in range(n)]
    for r in relays:
        net.add_node(r, "relay", topo.relay_onchain_sat)
    edges = set()
    # ring for connectivity, then random chords up to the per-relay target
    for i in range(n):
        if n > 1:
            edges.add(tuple(sorted((i, (i + 1) % n))))
    extra = max(0, topo.channels_per_relay - 2)
    for i in range(n):
        for _ in range(extra):
            j = net.rng.randrange(n)
            if j != i:
                edges.add(tuple(sorted((i, j))))
    for i, j in sorted(edges):
        if i != j:
            net.add_genesis_channel(relays[i], relays[j], topo.relay_capacity_sat)
    return relays, relays


def _explicit_nodes(net, topo):
    for spec in topo.nodes:
        net.add_node(spec.id, spec.role, spec.onchain_sat, online=spec.online)
    relays = net.public_relays()
    return relays, relays


def build_network(sc: Scenario) -> Built:
    fees = sc.fees
    op = sc.operator
    cfg = NetworkConfig(open_fee_sat=fees.open_fee_sat, close_fee_sat=fees.close_fee_sat,
                        sweep_fee_sat=fees.sweep_fee_sat,
                        min_channel_capacity_sat=fees.min_channel_capacity_sat,
                        channels_per_server=op.channels_per_server,
                        default_fee_policy=FeePolicy(fees.base_fee_msat, fees.proportional_rate_ppm))
    net = Network(cfg, seed=sc.seed)
    topo = sc.topology
    if topo.kind == "layered":
        entry, exit_ = _layered(net, topo)
    elif topo.kind == "random":
        entry, exit_ = _random(net, topo)
    else:
        entry, exit_ = _explicit_nodes(net, topo)

    per_channel = op.channel_capacity_sat + fees.open_fee_sat
    bm_funds = op.botmaster_funds_sat
    if bm_funds is None:
        bm_funds = op.botmaster_channels * (op.botmaster_channel_capacity_sat + fees.open_fee_sat)
    cnc_funds = op.cnc_funds_sat if op.cnc_funds_sat is not None else op.channels_per_server * per_channel
    if BOTMASTER not in net.nodes:
        net.add_node(BOTMASTER, "botmaster", bm_funds)
    if COLLECTOR not in net.nodes:
        net.add_node(COLLECTOR, "collector", 0)
    cncs = []
    for i in range(op.n_cnc_servers):
        cid = cnc_id(i)
        if cid not in net.nodes:
            net.add_node(cid, "cnc_server", cnc_funds)
        cncs.append(cid)
    for spec in topo.channels:
        net.add_genesis_channel(spec.a, spec.b, spec.capacity_sat, spec.balance_a_sat, spec.private)
    operator_initial = net.holdings_msat([BOTMASTER, COLLECTOR, *cncs])

    # nothing to command means no operator channels either
    if topo.kind != "explicit" and cncs:
        for peer in net.rng.sample(sorted(entry), min(op.botmaster_channels, len(entry))):
            net.open_channel(BOTMASTER, peer, op.botmaster_channel_capacity_sat, private=True)
        for peer in net.rng.sample(sorted(entry), min(op.collector_channels, len(entry))):
            net.open_channel(peer, COLLECTOR, op.collector_inbound_capacity_sat, private=True)
        for cid in cncs:
            opened = net.autopilot_open(cid, op.channels_per_server, op.channel_capacity_sat,
                                        candidates=exit_)
            # each autopilot peer provides inbound liquidity with its own channel
            for chan in opened:
                if op.inbound_capacity_sat:
                    net.open_channel(chan.peer(cid), cid, op.inbound_capacity_sat, private=True)
    return Built(net, list(entry), list(exit_), cncs, operator_initial)


# run

@dataclass
class Report:
    data: dict

    def __getitem__(self, key):
        return self.data[key]

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def to_text(self):
        d = self.data
        lines = [f"scenario seed={d['seed']} scheme={d['propagation']['scheme']} "
                 f"servers={d['formation']['n_servers']}"]
        f = d["formation"]
        lines.append(f"formation fees        {f['opening_fees_sat']:>10} sat  {sat_to_btc(f['opening_fees_sat'])} BTC")
        p = d["propagation"]
        lines.append(f"payload payments      {p['payload_payments_per_target']:>10}")
        lines.append(f"payload cost          {p['payload_cost_sat_per_target']:>10} sat")
        lines.append(f"routing fees (payload){p['routing_fees_payload_sat']:>10} sat  "
                     f"{sat_to_btc(p['routing_fees_payload_sat'])} BTC")
        lines.append(f"routing fees (all)    {p['routing_fees_total_msat'] // MSAT_PER_SAT:>10} sat")
        lines.append(f"completed sessions    {p['completed']:>10} / {p['targets']}")
        if p["payload_time_s"]:
            lines.append(f"payload time / server {max(p['payload_time_s'].values()):>10.3f} s (max)")
        ok = sum(cmds == [p["command"]] for cmds in d["decoded"].values())
        lines.append(f"decoded correctly     {ok:>10} / {len(d['decoded'])}")
        for inj in d["poison"]:
            lines.append(f"poison {inj['attacker']} -> {inj['target']} amount={inj['amount_sat']} "
                         f"success={inj['success']}")
        r = d["reimbursement"]
        lines.append(f"reimbursed            {r['reimbursed_sat']:>10} sat, swept {r['swept_sat']} sat")
        e = d["economics"]
        lines.append(f"operator net loss     {e['net_loss_msat']:>10} msat  balanced={e['balanced']}")
        for fnd in d["detection"]["findings"][:5]:
            lines.append(f"  candidate {fnd['candidate']:<12} score={fnd['score']:.3f} pairs={fnd['matched_pairs']}")
        if d["detection"]["metrics"]:
            lines.append(f"  truth rank {d['detection']['metrics']['rank_of_truth']}")
        return "\n".join(lines) + "\n"


class Run:
    """Everything a scenario run produced; logs are kept for export and re-checking."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.built = build_network(scenario)
        self.net = self.built.net
        self.loop = EventLoop()
        rt = scenario.routing
        self.constraints = RouteConstraints(fixed_intermediary_hops=rt.fixed_intermediary_hops,
                                            max_hops=rt.max_hops)
        self.engine = PaymentEngine(self.net, self.loop, scenario.latency.build(scenario.base_dir),
                                    seed=scenario.seed,
                                    failures=FailureInjector(scenario.failures.probability, scenario.seed))
        self.scheme = scenario.scheme()
        self.transcripts = {c: attach_cnc(self.engine, c, self.scheme) for c in self.built.cnc_nodes}
        self.operator = [BOTMASTER, COLLECTOR, *self.built.cnc_nodes]
        self.initial_total_sat = self.net.conservation_total_sat()
        self.initial_holdings_msat = self.built.operator_initial_msat
        self.sender = CommandSender(self.engine, BOTMASTER, scenario.protocol.reschedule_delay_s,
                                    scenario.protocol.max_reschedules)
        self.injections = []
        self.cover = None
        self.reimbursements = []
        self.swept_sat = 0
        self.findings = []
        self.metrics = None

    def execute(self):
        sc = self.scenario
        for p in sc.poison:
            self.injections.append(poison(self.engine, p.attacker, self.net.pubkey(p.target), p.amount_sat,
                                          p.trigger, self.transcripts.get(p.target), p.after_payloads))
        if sc.cover_traffic.n_payments:
            self.cover = CoverTraffic(self.engine, self.net.public_relays(), sc.seed)
            self.cover.schedule(self.cover.plan(sc.cover_traffic.n_payments, 0,
                                                seconds_to_ns(sc.cover_traffic.horizon_s),
                                                sc.cover_traffic.amounts))
        self.sender.constraints = self.constraints
        for cid in self.built.cnc_nodes:
            self.sender.submit(cid, sc.command.text, self.scheme, sc.protocol.retry_limit_k)
        self.loop.run()
        self._reimburse()
        self._analyse()
        self.net.check_invariants()
        return self

    def _reimburse(self):
        rc = self.scenario.reimbursement
        if not rc.enabled:
            return
        policy = ReimbursementPolicy(rc.threshold_sat, self.net.pubkey(COLLECTOR), rc.reserve_sat)
        interval = seconds_to_ns(rc.tick_interval_s)
        for _ in range(rc.max_ticks):
            self.loop.run(until_ns=self.loop.now_ns + interval)
            sent = 0
            for cid in self.built.cnc_nodes:
                res = reimburse_tick(self.engine, cid, policy)
                if res is not None:
                    self.reimbursements.append((cid, res))
                    sent += 1
            if not sent:
                break
        self.loop.run()
        if rc.sweep:
            self.swept_sat = sweep_collector(self.net, COLLECTOR, BOTMASTER)
        if rc.close_operator_channels:
            for node in (BOTMASTER, *self.built.cnc_nodes):
                for chan in self.net.channels_of(node):
                    self.net.close_channel(chan.channel_id, closer=node)

    def _analyse(self):
        ac = self.scenario.analysis
        if not (ac.monitors and ac.compromised):
            return
        receipts = []
        for cid in ac.compromised:
            receipts.extend(self.transcripts[cid].received)
        logs = {m: self.engine.forwarding_history(m) for m in ac.monitors}
        self.findings = correlate(receipts, logs, channel_directory(self.net), ac.window_s,
                                  ac.fee_tolerance_sat)
        self.metrics = detection_metrics(BOTMASTER, self.findings)

    # reporting

    def report(self) -> Report:
        sc = self.scenario
        net = self.net
        sessions = self.sender.sessions
        cnc_set = set(self.built.cnc_nodes)
        funding_fees = sum(e.fee_sat for e in net.ledger.events
                           if e.tx_type == "funding" and e.node in cnc_set)
        payload = frame(self.scheme.encode(sc.command.text))[1:-1]
        payload_fees_msat = sum(s.payload_fees_msat for s in sessions)
        operator = set(self.operator)
        routing_paid = sum(v for k, v in self.engine.fees_paid_msat.items() if k in operator)
        onchain_paid = sum(v for k, v in net.ledger.fees_paid_sat.items() if k in operator)
        dust_paid = sum(v for k, v in net.ledger.dust_paid_msat.items() if k in operator)
        # payments into the operator from outside, e.g. poisoning injections
        inflow = sum(r.amount_sat * MSAT_PER_SAT for r in self.engine.results
                     if r.success and r.source not in operator and r.destination in operator)
        final_holdings = net.holdings_msat(self.operator)
        loss = self.initial_holdings_msat - final_holdings
        data = {
            "seed": sc.seed,
            "formation": {
                "n_servers": len(self.built.cnc_nodes),
                "channels_per_server": sc.operator.channels_per_server,
                "open_fee_sat": sc.fees.open_fee_sat,
                "opening_fees_sat": funding_fees,
                "opening_fees_formula_sat": formation_cost(len(self.built.cnc_nodes),
                                                           sc.operator.channels_per_server,
                                                           sc.fees.open_fee_sat),
                "locked_capital_sat": len(self.built.cnc_nodes) * sc.operator.channels_per_server
                * sc.operator.channel_capacity_sat,
            },
            "propagation": {
                "scheme": self.scheme.name,
                "command": sc.command.text,
                "targets": len(sessions),
                "completed": sum(s.state == "completed" for s in sessions),
                "payload_payments_per_target": len(payload),
                "payload_cost_sat_per_target": sum(payload),
                "framed_payments_per_target": len(payload) + 2,
                "satoshi_spent": sum(s.satoshi_spent for s in sessions),
                "routing_fees_payload_msat": payload_fees_msat,
                "routing_fees_payload_sat": payload_fees_msat // MSAT_PER_SAT,
                "routing_fees_total_msat": sum(s.fees_paid_msat for s in sessions),
                "payload_time_s": {s.target: s.payload_latency_s for s in sessions
                                   if s.payload_latency_s is not None},
                "session_time_s": {s.target: (s.completed_at_ns - s.started_at_ns) / NS_PER_S
                                   for s in sessions if s.state == "completed"},
                "sessions": [s.as_record() for s in sessions],
            },
            "reimbursement": {
                "payments": len(self.reimbursements),
                "reimbursed_sat": sum(r.amount_sat for _, r in self.reimbursements if r.success),
                "fees_msat": sum(r.total_fee_msat for _, r in self.reimbursements if r.success),
                "swept_sat": self.swept_sat,
            },
            "economics": {
                "initial_holdings_msat": self.initial_holdings_msat,
                "final_holdings_msat": final_holdings,
                "net_loss_msat": loss,
                "routing_fees_paid_msat": routing_paid,
                "onchain_fees_paid_sat": onchain_paid,
                "settlement_dust_msat": dust_paid,
                "external_inflow_msat": inflow,
                "balanced": loss == routing_paid + onchain_paid * MSAT_PER_SAT + dust_paid - inflow,
                "ledger_conserved": net.conservation_total_sat() == self.initial_total_sat,
            },
            "decoded": {c: [x if isinstance(x, str) else f"error: {x}" for x in t.decoded_commands]
                        for c, t in self.transcripts.items()},
            "poison": [i.as_record() for i in self.injections],
            "detection": {
                "findings": [f.as_record() for f in self.findings],
                "metrics": self.metrics,
            },
        }
        return Report(data)

    def write_logs(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report = self.report()
        (out / "report.json").write_text(report.to_json())
        (out / "report.txt").write_text(report.to_text())
        records.write_jsonl(out / "ledger.jsonl", [e.as_record() for e in self.net.ledger.events])
        records.write_jsonl(out / "channels.jsonl",
                            [c.as_record() for c in sorted(self.net.channels.values(), key=lambda c: c.channel_id)])
        records.write_jsonl(out / "payments.jsonl", [r.as_record() for r in self.engine.results])
        records.write_jsonl(out / "sessions.jsonl", [s.as_record() for s in self.sender.sessions])
        records.write_jsonl(out / "attempts.jsonl",
                            [dict(target=s.target, **a.as_record()) for s in self.sender.sessions for a in s.attempts])
        records.write_jsonl(out / "transcripts.jsonl",
                            [r for c in sorted(self.transcripts) for r in self.transcripts[c].receipt_records()])
        records.write_jsonl(out / "findings.jsonl", [f.as_record() for f in self.findings])
        fwd = out / "forwarding"
        fwd.mkdir(exist_ok=True)
        for node in sorted(self.engine.history):
            records.write_jsonl(fwd / f"{node}.jsonl",
                                [e.as_record() for e in self.engine.forwarding_history(node)])
        return report


def run_scenario(scenario: Scenario, out_dir=None) -> Report:
    run = Run(scenario).execute()
    if out_dir is not None:
        return run.write_logs(out_dir)
    return run.report()


# replication of the published tables

PUBLISHED_FORMATION_SAT = {10: 4_620, 25: 11_550, 50: 23_100, 100: 46_200}
PUBLISHED_ROUTING_FEES_SAT = {
    "ascii": {10: 1_760, 25: 4_400, 50: 8_800, 100: 17_600},
    "huffman": {10: 4_320, 25: 10_800, 50: 21_600, 100: 43_200},
}
PUBLISHED_ENCODING = {"ascii": (44, 2813), "huffman": (108, 215)}
PUBLISHED_TIME_S = {"ascii": 308.0, "huffman": 756.0}
SCALES = (10, 25, 50, 100)


def replication_scenario(n_servers, scheme="ascii", seed=2020, latency=None) -> Scenario:
    """Layered relay mesh where every botmaster -> C&C route crosses exactly 4 relays."""
    return Scenario(
        seed=seed,
        topology=TopologyConfig(kind="layered", layers=4, width=3),
        operator=OperatorConfig(n_cnc_servers=n_servers, botmaster_channel_capacity_sat=5_000_000),
        latency=latency or LatencyConfig(model="deterministic", value_s=7.0),
        command=CommandConfig(text=SYN_FLOOD_COMMAND, scheme=scheme),
        routing=RoutingConfig(fixed_intermediary_hops=4),
    ).validate()


def replicate_tables(seed=2020):
    """Return (text, ok): simulated values next to the published ones."""
    rows = []

    def row(label, simulated, published):
        ok = simulated == published
        rows.append((label, simulated, published, ok))

    for n in SCALES:
        row(f"opening fees, {n} servers (sat)", formation_cost(n), PUBLISHED_FORMATION_SAT[n])
    for name, scheme in (("ascii", AsciiScheme()), ("huffman", HuffmanScheme())):
        amounts = scheme.encode(SYN_FLOOD_COMMAND)
        count, total = PUBLISHED_ENCODING[name]
        row(f"encoding {name} payments", len(amounts), count)
        row(f"encoding {name} cost (sat)", sum(amounts), total)
    for name in ("ascii", "huffman"):
        for n in SCALES:
            rep = run_scenario(replication_scenario(n, name, seed))
            row(f"opening fees from ledger, {name} run, {n} servers (sat)",
                rep["formation"]["opening_fees_sat"], PUBLISHED_FORMATION_SAT[n])
            row(f"routing fees {name}, {n} servers (sat)",
                rep["propagation"]["routing_fees_payload_sat"], PUBLISHED_ROUTING_FEES_SAT[name][n])
            times = set(rep["propagation"]["payload_time_s"].values())
            row(f"propagation time {name}, {n} servers (s per server)",
                times.pop() if len(times) == 1 else sorted(times), PUBLISHED_TIME_S[name])
    width = max(len(r[0]) for r in rows)
    lines = [f"{'quantity':<{width}}  {'simulated':>12}  {'published':>12}  status"]
    for label, sim, pub, ok in rows:
        lines.append(f"{label:<{width}}  {_fmt(sim):>12}  {_fmt(pub):>12}  {'ok' if ok else 'MISMATCH'}")
    all_ok = all(r[3] for r in rows)
    lines.append(f"{'all rows match' if all_ok else 'MISMATCHES FOUND'}")
    return "\n".join(lines) + "\n", all_ok


def _fmt(v):
    return f"{v:g}" if isinstance(v, float) else str(v)


# two disjoint relay paths into one C&C, with one monitored relay on each

@dataclass
class DetectionCase:
    net: Network
    engine: PaymentEngine
    transcript: object
    monitors: tuple
    ranking: list
    metrics: dict


def two_path_network(extended=False, capacity_sat=1_000_000):
    """botmaster -> A -> B -> C -> cnc and botmaster -> D -> E -> F -> cnc.

    With ``extended`` the botmaster sits two more relays behind each monitored
    node (botmaster -> P -> Q -> A and botmaster -> R -> S -> D).
    Returns the network and the botmaster's first channel on each path.
    """
    net = Network()
    net.add_node(BOTMASTER, "botmaster", 0)
    net.add_node("cnc", "cnc_server", 0)
    paths = (["A", "B", "C"], ["D", "E", "F"])
    if extended:
        paths = (["P", "Q", "A", "B", "C"], ["R", "S", "D", "E", "F"])
    for path in paths:
        for relay in path:
            net.add_node(relay, "relay", 0)
    first = []
    for path in paths:
        chan = net.add_genesis_channel(BOTMASTER, path[0], capacity_sat, capacity_sat, private=True)
        first.append(chan.channel_id)
        for a, b in zip(path, path[1:]):
            net.add_genesis_channel(a, b, capacity_sat)
        net.add_genesis_channel(path[-1], "cnc", capacity_sat, capacity_sat, private=True)
    return net, first


def two_path_detection(extended=False, amounts=(100, 50), latency_s=7.0,
                       window_s=DEFAULT_WINDOW_S, fee_tolerance_sat=DEFAULT_FEE_TOLERANCE_SAT):
    """Send one payment down each path, then correlate what A and D logged with
    what the C&C received."""
    net, first = two_path_network(extended)
    engine = PaymentEngine(net, EventLoop(), Deterministic(latency_s))
    transcript = attach_cnc(engine, "cnc", AsciiScheme())
    for amount, chan_id in zip(amounts, first):
        engine.send_keysend(BOTMASTER, net.pubkey("cnc"), amount, RouteConstraints(first_channel=chan_id))
        engine.loop.run()
    monitors = ("A", "D")
    logs = {m: engine.forwarding_history(m) for m in monitors}
    ranking = correlate(transcript.received, logs, channel_directory(net), window_s, fee_tolerance_sat)
    return DetectionCase(net, engine, transcript, monitors, ranking, detection_metrics(BOTMASTER, ranking))
