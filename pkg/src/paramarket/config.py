"""Run-config files: a flat keyed text format parsed into MarketConfig.

The format is INI-style with one ``[market]`` section, one ``[broker]``
section, one ``[agent <id>]`` section per agent, and optional ``[mlp]`` and
``[sweep]`` sections. Keys are case-sensitive. See README for the schema and
the bundled example configs.
"""

import configparser
from dataclasses import dataclass

from .broker import GainKind
from .core import LossSpec
from .engine import AgentSpec, BrokerSpec, MarketConfig, MlpMarketSpec, Policy

__all__ = ["ConfigError", "SweepSpec", "load_config", "load_sweep", "parse_config"]


class ConfigError(ValueError):
    """Schema violation with the offending section and key attached."""

    def __init__(self, section: str, key: str, message: str):
        self.section = section
        self.key = key
        super().__init__(f"[{section}] {key}: {message}")


@dataclass(frozen=True)
class SweepSpec:
    """One sweep axis: cells (pipe-separated in the file) times seed count."""

    axis: str
    values: tuple
    seeds: int
    base: MarketConfig


def _reader(parser: configparser.ConfigParser, section: str):
    def get(key: str, cast, default=None, required: bool = False):
        if not parser.has_option(section, key):
            if required:
                raise ConfigError(section, key, "required key is missing")
            return default
        raw = parser.get(section, key).strip()
        try:
            return cast(raw)
        except (ValueError, KeyError) as exc:
            raise ConfigError(section, key, f"cannot parse {raw!r}: {exc}") from exc

    return get


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("on", "true", "1", "yes"):
        return True
    if lowered in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {raw!r}")


def _int_tuple(raw: str) -> tuple:
    return tuple(int(v) for v in raw.split(",") if v.strip() != "")


def _layer_set(raw: str):
    return None if raw.strip() == "all" else _int_tuple(raw)


def _step_size(raw: str):
    return None if raw == "auto" else float(raw)


def parse_config(text: str) -> MarketConfig:
    """Parse config text; raises ConfigError with a section/key diagnostic."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("-", "-", f"unparsable config: {exc}") from exc

    if not parser.has_section("market"):
        raise ConfigError("market", "-", "missing [market] section")
    market = _reader(parser, "market")
    model = market("model", str, default="linear")
    gain_kind = market("gain_kind", GainKind, required=True)
    loss = market("loss", LossSpec, default=LossSpec.MEAN_PER_SAMPLE)

    agent_sections = [s for s in parser.sections() if s.startswith("agent ")]
    if len(agent_sections) < 2:
        raise ConfigError("agent <id>", "-", "need at least two [agent <id>] sections")
    agents = []
    for section in sorted(agent_sections):
        agent_id = section.split(" ", 1)[1].strip()
        if not agent_id:
            raise ConfigError(section, "-", "empty agent id")
        a = _reader(parser, section)
        agents.append(
            AgentSpec(
                agent_id=agent_id,
                dim=a("dim", int, required=(model == "linear"), default=0),
                n_samples=a("n", int, required=True),
                noise_variance=a("noise", float, default=0.0),
                policy=a("policy", Policy.parse, default=Policy.parse("trade-when-beneficial")),
                step_size=a("step_size", _step_size, default=None),
                theta_offset=a("theta_offset", float, default=0.0),
                favored_classes=a("favored", _int_tuple, default=()),
                deprived_fraction=a("deprived_fraction", float, default=1.0),
            )
        )

    if not parser.has_section("broker"):
        raise ConfigError("broker", "-", "missing [broker] section")
    b = _reader(parser, "broker")
    broker = BrokerSpec(
        n_samples=b("n", int, required=True),
        noise_variance=b("noise", float, default=0.0),
    )

    mlp_spec = None
    if model == "mlp":
        m = _reader(parser, "mlp") if parser.has_section("mlp") else _reader_empty()
        mlp_spec = MlpMarketSpec(
            hidden=m("hidden", _int_tuple, default=(16, 16, 16)),
            input_dim=m("input_dim", int, default=2),
            n_classes=m("classes", int, default=2),
            data_noise=m("data_noise", float, default=0.15),
            layer_set=m("layer_set", _layer_set, default=None),
            align_sweeps=m("align_sweeps", int, default=10),
        )

    try:
        return MarketConfig(
            seed=market("seed", int, required=True),
            rounds=market("rounds", int, required=True),
            gain_kind=gain_kind,
            agents=tuple(agents),
            broker=broker,
            trade_every=market("trade_every", int, default=1),
            trade_start=market("trade_start", int, default=1),
            pricing=market("pricing", _bool, default=False),
            seller_pricing=market("seller_pricing", str, default="myerson"),
            loss_spec=loss,
            init=market("init", str, default="zeros"),
            convergence_epsilon=market("convergence_epsilon", float, default=None),
            model=model,
            mlp=mlp_spec,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("market", "-", str(exc)) from exc


def _reader_empty():
    def get(key, cast, default=None, required=False):
        if required:
            raise ConfigError("mlp", key, "required key is missing")
        return default

    return get


def load_config(path: str) -> MarketConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


_SWEEP_AXES = ("distance", "endowment", "frequency", "start", "layers")


def parse_sweep(text: str) -> SweepSpec:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    if not parser.has_section("sweep"):
        raise ConfigError("sweep", "-", "missing [sweep] section")
    s = _reader(parser, "sweep")
    axis = s("axis", str, required=True)
    if axis not in _SWEEP_AXES:
        raise ConfigError("sweep", "axis", f"expected one of {_SWEEP_AXES}, got {axis!r}")
    raw_values = s("values", str, required=True)
    cells = tuple(v.strip() for v in raw_values.split("|") if v.strip() != "")
    if not cells:
        raise ConfigError("sweep", "values", "no cells given (separate cells with '|')")
    if axis == "layers":
        values = tuple(_layer_set(c) for c in cells)
    elif axis in ("frequency", "start"):
        values = tuple(int(c) for c in cells)
    else:
        values = tuple(float(c) for c in cells)
    seeds = s("seeds", int, default=5)
    if seeds < 1:
        raise ConfigError("sweep", "seeds", f"need at least one seed, got {seeds}")
    return SweepSpec(axis=axis, values=values, seeds=seeds, base=parse_config(text))


def load_sweep(path: str) -> SweepSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_sweep(fh.read())
