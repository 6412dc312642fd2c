"""JSON run configuration with sections arch, prune, tfm, planner, scenario, bench.

Every key is optional; unknown sections or keys are errors that name the
field and its line in the file.
"""

import json
import re
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError
from ..ilsa import PruneConfig
from ..model import ArchSpec
from ..planner import PlannerConfig
from .scenario import ScenarioParams

STRATEGIES = ("ilsa", "random", "per_view_average", "positional", "global_top")


@dataclass(frozen=True)
class ModelInit:
    init_std: float = 0.02
    # W_Q = W_K = qk_gain * I, so raw query/key products follow hidden-state similarity
    qk_gain: float = 1.0


@dataclass(frozen=True)
class TfmSection:
    num_heads: int = 2
    num_layers: int = 1
    init_std: float = 0.02
    identity_adapter: bool = True


@dataclass(frozen=True)
class BenchSection:
    seeds: int = 100
    first_seed: int = 0
    weight_seed: int = 0
    workers: int = 1
    strategies: tuple = STRATEGIES
    mask_seed: int = None  # render masks for this seed, if set

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        unknown = set(self.strategies) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}")
        if self.seeds < 0 or self.workers < 1:
            raise ValueError("seeds must be >= 0 and workers >= 1")

    @property
    def seed_list(self):
        return list(range(self.first_seed, self.first_seed + self.seeds))


@dataclass(frozen=True)
class RunConfig:
    arch: ArchSpec = field(default_factory=ArchSpec)
    init: ModelInit = field(default_factory=ModelInit)
    prune: PruneConfig = field(default_factory=PruneConfig)
    tfm: TfmSection = field(default_factory=TfmSection)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    bench: BenchSection = field(default_factory=BenchSection)

    def as_dict(self):
        arch = asdict(self.arch)
        arch.pop("vocabless")
        arch.update(asdict(self.init))
        return {
            "arch": arch,
            "prune": asdict(self.prune),
            "tfm": asdict(self.tfm),
            "planner": asdict(self.planner),
            "scenario": asdict(self.scenario),
            "bench": asdict(self.bench),
        }


_TUPLE_KEYS = {"sparse_layers", "lambdas", "strategies", "pruning_rate"}


def _line_of(text, key, after=0):
    m = re.compile(r'"%s"\s*:' % re.escape(key)).search(text, after)
    return (text.count("\n", 0, m.start()) + 1, m.start()) if m else (None, after)


def _names(cls):
    return [f.name for f in fields(cls)]


def parse_config(text, source="<config>"):
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}: invalid JSON: {e.msg}", line=e.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object", line=1)

    allowed = {
        "arch": [n for n in _names(ArchSpec) if n != "vocabless"] + _names(ModelInit),
        "prune": _names(PruneConfig),
        "tfm": _names(TfmSection),
        "planner": _names(PlannerConfig),
        "scenario": _names(ScenarioParams),
        "bench": _names(BenchSection),
    }
    built = {}
    for section, body in raw.items():
        line, start = _line_of(text, section)
        if section not in allowed:
            raise ConfigError(f"unknown section (expected one of {sorted(allowed)})", field=section, line=line)
        if not isinstance(body, dict):
            raise ConfigError("section must be an object", field=section, line=line)
        for key, value in body.items():
            if key not in allowed[section]:
                kline, _ = _line_of(text, key, start)
                raise ConfigError(f"unknown key (allowed: {', '.join(allowed[section])})",
                                  field=f"{section}.{key}", line=kline)
        built[section] = {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v
                          for k, v in body.items()}

    def make(section, cls, values):
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            key = next(iter(values), None)
            line, start = _line_of(text, section)
            if key is not None:
                for k in values:
                    if k in str(e):
                        key = k
                        break
                line, _ = _line_of(text, key, start)
            name = f"{section}.{key}" if key else section
            raise ConfigError(str(e), field=name, line=line) from None

    arch_vals = dict(built.get("arch", {}))
    init_vals = {k: arch_vals.pop(k) for k in _names(ModelInit) if k in arch_vals}
    arch = make("arch", ArchSpec, arch_vals)
    prune_vals = dict(built.get("prune", {}))
    if "sparse_layers" in prune_vals and tuple(prune_vals["sparse_layers"]) != arch.sparse_layers:
        line, _ = _line_of(text, "sparse_layers", _line_of(text, "prune")[1])
        raise ConfigError(f"prune.sparse_layers {prune_vals['sparse_layers']} differs from "
                          f"arch.sparse_layers {list(arch.sparse_layers)}", field="prune.sparse_layers", line=line)
    prune_vals["sparse_layers"] = arch.sparse_layers
    cfg = RunConfig(
        arch=arch,
        init=make("arch", ModelInit, init_vals),
        prune=make("prune", PruneConfig, prune_vals),
        tfm=make("tfm", TfmSection, built.get("tfm", {})),
        planner=make("planner", PlannerConfig, built.get("planner", {})),
        scenario=make("scenario", ScenarioParams, built.get("scenario", {})),
        bench=make("bench", BenchSection, built.get("bench", {})),
    )
    if cfg.scenario.dim != cfg.arch.d_model:
        # text embeddings are generated directly in decoder space
        line, _ = _line_of(text, "dim", _line_of(text, "scenario")[1])
        raise ConfigError(f"scenario.dim must equal arch.d_model ({cfg.scenario.dim} != {cfg.arch.d_model})",
                          field="scenario.dim", line=line)
    return cfg


def load_config(path):
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_config(fh.read(), str(path))
