"""Scenario files: TOML with one table per concern, unknown keys rejected.

Example::

    seed = 7

    [topology]
    kind = "layered"            # layered | random | explicit
    layers = 4
    width = 3

    [operator]
    n_cnc_servers = 10

    [command]
    text = "sudo hping3 -i u1 -S -p 80 -c 10 192.168.1.1"
    scheme = "huffman"

    [latency]
    model = "deterministic"
    value_s = 7.0
"""
from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .codec import SYN_FLOOD_COMMAND, REFERENCE_CODEBOOK, Codebook, make_scheme
from .errors import CodecError, ConfigError
from .payments import Deterministic, Empirical, Uniform


@dataclass
class ChannelSpec:
    a: str
    b: str
    capacity_sat: int
    balance_a_sat: int | None = None
    private: bool = False


@dataclass
class NodeSpec:
    id: str
    role: str = "relay"
    onchain_sat: int = 0
    online: bool = True


@dataclass
class TopologyConfig:
    kind: str = "layered"
    layers: int = 4
    width: int = 3
    n_relays: int = 50
    channels_per_relay: int = 3
    relay_capacity_sat: int = 50_000_000
    relay_onchain_sat: int = 1_000_000_000
    nodes: list = field(default_factory=list)
    channels: list = field(default_factory=list)


@dataclass
class OperatorConfig:
    n_cnc_servers: int = 1
    channels_per_server: int = 3
    channel_capacity_sat: int = 20_000
    inbound_capacity_sat: int = 20_000
    cnc_funds_sat: int | None = None
    botmaster_channels: int = 2
    botmaster_channel_capacity_sat: int = 2_000_000
    botmaster_funds_sat: int | None = None
    collector_channels: int = 2
    collector_inbound_capacity_sat: int = 2_000_000


@dataclass
class FeeConfig:
    base_fee_msat: int = 1000
    proportional_rate_ppm: int = 1
    open_fee_sat: int = 154
    close_fee_sat: int = 0
    sweep_fee_sat: int = 154
    min_channel_capacity_sat: int = 20_000


@dataclass
class LatencyConfig:
    model: str = "deterministic"
    value_s: float = 7.0
    lo_s: float = 4.0
    hi_s: float = 10.0
    samples: list = field(default_factory=list)
    samples_path: str | None = None

    def build(self, base_dir=None):
        if self.model == "deterministic":
            return Deterministic(self.value_s)
        if self.model == "uniform":
            return Uniform(self.lo_s, self.hi_s)
        if self.model == "empirical":
            if self.samples_path:
                return Empirical.from_file(_resolve(self.samples_path, base_dir))
            return Empirical(tuple(self.samples))
        raise ConfigError(f"unknown latency model {self.model!r}")


@dataclass
class CommandConfig:
    text: str = SYN_FLOOD_COMMAND
    scheme: str = "ascii"
    codebook: str | None = None


@dataclass
class ProtocolConfig:
    retry_limit_k: int = 3
    reschedule_delay_s: float = 600.0
    max_reschedules: int = 3


@dataclass
class RoutingConfig:
    fixed_intermediary_hops: int | None = None
    max_hops: int = 20


@dataclass
class FailureConfig:
    probability: float = 0.0


@dataclass
class ReimbursementConfig:
    enabled: bool = True
    threshold_sat: int = 2000
    reserve_sat: int = 1000
    tick_interval_s: float = 60.0
    max_ticks: int = 10
    sweep: bool = True
    close_operator_channels: bool = True


@dataclass
class AnalysisConfig:
    monitors: list = field(default_factory=list)
    compromised: list = field(default_factory=list)
    window_s: float = 10.0
    fee_tolerance_sat: int = 8


@dataclass
class PoisonSpec:
    attacker: str
    target: str
    amount_sat: int
    trigger: str = "when_receiving"
    after_payloads: int = 0


@dataclass
class CoverTrafficConfig:
    n_payments: int = 0
    amounts: list = field(default_factory=lambda: [100])
    horizon_s: float = 600.0


@dataclass
class Scenario:
    seed: int = 0
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    fees: FeeConfig = field(default_factory=FeeConfig)
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    command: CommandConfig = field(default_factory=CommandConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    failures: FailureConfig = field(default_factory=FailureConfig)
    reimbursement: ReimbursementConfig = field(default_factory=ReimbursementConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    poison: list = field(default_factory=list)
    cover_traffic: CoverTrafficConfig = field(default_factory=CoverTrafficConfig)
    base_dir: str | None = None

    def scheme(self):
        codebook = REFERENCE_CODEBOOK
        if self.command.codebook:
            codebook = Codebook.load(_resolve(self.command.codebook, self.base_dir))
        return make_scheme(self.command.scheme, codebook)

    def validate(self):
        if self.topology.kind not in ("layered", "random", "explicit"):
            raise ConfigError(f"unknown topology kind {self.topology.kind!r}")
        if self.operator.n_cnc_servers < 0:
            raise ConfigError("n_cnc_servers must be non-negative")
        if self.command.scheme not in ("ascii", "huffman"):
            raise ConfigError(f"unknown scheme {self.command.scheme!r}")
        try:
            self.scheme().encode(self.command.text)
        except (CodecError, ValueError, OSError) as exc:
            raise ConfigError(f"command not encodable: {exc}") from None
        if not 0.0 <= self.failures.probability <= 1.0:
            raise ConfigError("failure probability must be in [0, 1]")
        if self.analysis.window_s <= 0:
            raise ConfigError("analysis window must be positive")
        for p in self.poison:
            if p.trigger not in ("immediately", "when_receiving"):
                raise ConfigError(f"unknown poison trigger {p.trigger!r}")
        try:
            self.latency.build(self.base_dir)
        except (ValueError, OSError) as exc:
            raise ConfigError(f"latency model: {exc}") from None
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


def _resolve(path, base_dir):
    p = Path(path)
    if not p.is_absolute() and base_dir:
        p = Path(base_dir) / p
    return p


_SECTIONS = {
    "topology": TopologyConfig, "operator": OperatorConfig, "fees": FeeConfig,
    "latency": LatencyConfig, "command": CommandConfig, "protocol": ProtocolConfig,
    "routing": RoutingConfig, "failures": FailureConfig, "reimbursement": ReimbursementConfig,
    "analysis": AnalysisConfig, "cover_traffic": CoverTrafficConfig,
}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def scenario_from_dict(data, base_dir=None) -> Scenario:
    data = dict(data)
    kwargs = {}
    if "seed" in data:
        kwargs["seed"] = int(data.pop("seed"))
    for name, cls in _SECTIONS.items():
        if name in data:
            section = dict(data.pop(name))
            if name == "topology":
                section["nodes"] = [_build(NodeSpec, n, "topology.nodes") for n in section.get("nodes", [])]
                section["channels"] = [_build(ChannelSpec, c, "topology.channels")
                                       for c in section.get("channels", [])]
            kwargs[name] = _build(cls, section, name)
    if "poison" in data:
        kwargs["poison"] = [_build(PoisonSpec, p, "poison") for p in data.pop("poison")]
    if data:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(data))}")
    return Scenario(base_dir=str(base_dir) if base_dir else None, **kwargs).validate()


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return scenario_from_dict(data, base_dir=path.parent)
