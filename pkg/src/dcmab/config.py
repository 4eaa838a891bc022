"""Run configuration: one INI-style file of flat ``key = value`` pairs.

Sections and keys::

    [data]        train_log, test_log (paths; generated when missing), train_seed, test_seed
    [generator]   every GeneratorConfig field
    [market]      n_merchant_clusters, n_consumer_clusters
    [agent]       every AgentConfig field
    [episode]     every EpisodeConfig field
    [experiment]  name (manual|bandit|a2c|ddpg|dcmab|coord|coord1|coord2...), seeds, out

Relative paths are resolved against the directory holding the config file.
Values are Python literals (``1e-3``, ``300, 300``, ``true``); anything that
does not parse as a literal is kept as a string.
"""
from __future__ import annotations

import ast
import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields
from typing import List, Optional

from .agents import AgentConfig
from .dataio import GeneratorConfig
from .simulator import EpisodeConfig

_BOOLS = {"true": True, "false": False, "yes": True, "no": False, "on": True, "off": False}


def _literal(text: str):
    t = text.strip()
    if t.lower() in _BOOLS:
        return _BOOLS[t.lower()]
    try:
        return ast.literal_eval(t)
    except (ValueError, SyntaxError):
        return t


def _coerce(cls, section: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in known:
            raise ValueError(f"[{where}] unknown key {key!r}")
        val = _literal(raw)
        default = known[key].default
        if isinstance(default, bool):
            val = bool(val)
        elif isinstance(default, float) and isinstance(val, int):
            val = float(val)
        elif isinstance(default, tuple) and not isinstance(val, tuple):
            val = (val,)
        out[key] = val
    return out


@dataclass
class RunConfig:
    train_log: str = "train.log"
    test_log: str = "test.log"
    train_seed: int = 1
    test_seed: int = 2
    n_merchant_clusters: int = 3
    n_consumer_clusters: int = 3
    experiment: str = "dcmab"
    seeds: List[int] = field(default_factory=lambda: [0])
    out: str = "runs"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    base_dir: str = "."

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def to_ini(self) -> str:
        """Serialise back to the file format (every field written out)."""
        def section(obj):
            return {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}
        cp = configparser.ConfigParser()
        cp["data"] = {"train_log": self.train_log, "test_log": self.test_log,
                      "train_seed": str(self.train_seed), "test_seed": str(self.test_seed)}
        cp["generator"] = section(self.generator)
        cp["market"] = {"n_merchant_clusters": str(self.n_merchant_clusters),
                        "n_consumer_clusters": str(self.n_consumer_clusters)}
        cp["agent"] = section(self.agent)
        cp["episode"] = section(self.episode)
        cp["experiment"] = {"name": self.experiment, "seeds": ", ".join(map(str, self.seeds)) + ",",
                            "out": self.out}
        import io
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _fmt(v) -> str:
    if hasattr(v, "value"):
        return str(v.value)
    if isinstance(v, tuple):
        return ", ".join(map(str, v)) + ("," if len(v) == 1 else "")
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    allowed = {"data", "generator", "market", "agent", "episode", "experiment"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    kw = {"base_dir": base_dir}
    data = dict(cp["data"]) if cp.has_section("data") else {}
    for key in ("train_log", "test_log"):
        if key in data:
            kw[key] = data.pop(key)
    for key in ("train_seed", "test_seed"):
        if key in data:
            kw[key] = int(data.pop(key))
    if data:
        raise ValueError(f"[data] unknown keys {sorted(data)}")
    market = dict(cp["market"]) if cp.has_section("market") else {}
    for key in ("n_merchant_clusters", "n_consumer_clusters"):
        if key in market:
            kw[key] = int(market.pop(key))
    if market:
        raise ValueError(f"[market] unknown keys {sorted(market)}")
    exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    if "name" in exp:
        kw["experiment"] = exp.pop("name").strip()
    if "seeds" in exp:
        s = _literal(exp.pop("seeds"))
        kw["seeds"] = [int(x) for x in (s if isinstance(s, (tuple, list)) else [s])]
    if "out" in exp:
        kw["out"] = exp.pop("out").strip()
    if exp:
        raise ValueError(f"[experiment] unknown keys {sorted(exp)}")
    for name, cls in (("generator", GeneratorConfig), ("agent", AgentConfig), ("episode", EpisodeConfig)):
        if cp.has_section(name):
            kw[name] = cls(**_coerce(cls, dict(cp[name]), name))
    return RunConfig(**kw)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), os.path.dirname(os.path.abspath(path)))


def with_overrides(cfg: RunConfig, seed: Optional[int] = None, workers: Optional[int] = None,
                   out: Optional[str] = None) -> RunConfig:
    cfg = dataclasses.replace(cfg)
    if seed is not None:
        cfg.seeds = [seed]
    if workers is not None:
        cfg.episode = dataclasses.replace(cfg.episode, worker_count=workers)
    if out is not None:
        cfg.out = os.path.abspath(out)
    return cfg
