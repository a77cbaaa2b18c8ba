"""Scenario files: named, seeded link + analysis + schedule bundles.

Scenarios are human-editable YAML with nesting and comments; parsing is
strict (unknown or mistyped fields are reported by their dotted path) and
parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .errors import ConfigError
from .keyrate import SkrParams
from .linksim import ChannelParams, LinkConfig, ScheduleEntry, SourceParams
from .phase import PhaseNoiseParams, PllParams


@dataclass
class Scenario:
    """One reproducible simulation/analysis configuration."""

    name: str
    seed: int
    link: LinkConfig
    analysis: SkrParams
    schedule: list
    description: str = ""
    expected: dict = field(default_factory=dict)


def _require_mapping(node, path: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(node).__name__}")
    return node


def _build(cls, node, path: str, fields: dict):
    """Construct a dataclass from a YAML mapping with typed, strict fields."""
    node = _require_mapping(node, path)
    unknown = set(node) - set(fields)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name, typ in fields.items():
        if name not in node:
            continue
        value = node[name]
        if typ is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{name}: expected a number, got {value!r}")
            kwargs[name] = float(value)
        elif typ is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}.{name}: expected an integer, got {value!r}")
            kwargs[name] = int(value)
        elif typ is str:
            if not isinstance(value, str):
                raise ConfigError(f"{path}.{name}: expected a string, got {value!r}")
            kwargs[name] = value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_SOURCE_FIELDS = {"rep_rate_hz": float, "pair_prob_per_pulse": float,
                  "multi_pair_fraction": float, "spiral_imbalance": float}
_CHANNEL_FIELDS = {"length_km": float, "atten_db_per_km": float,
                   "coupling_loss_db_per_facet": float, "n_facets_signal": int,
                   "n_facets_idler": int, "insertion_loss_db": float,
                   "detector_efficiency": float, "dark_count_rate_hz": float,
                   "coincidence_window_s": float}
_NOISE_FIELDS = {"process": str, "bandwidth_hz": float, "std_rad": float,
                 "jump_rate_hz": float, "jump_magnitude_rad": float}
_PLL_FIELDS = {"loop_rate_hz": float, "kp": float, "ki": float, "kd": float,
               "setpoint_fraction": float, "unlock_threshold": float,
               "relock_strategy": str, "fringe_visibility": float}
_ANALYSIS_FIELDS = {"f": float, "sift_ratio": float, "raw_rate_hz": float,
                    "alpha": float, "eta": float, "eps_sec": float, "eps_cor": float}


def link_config_from_dict(node, path: str = "link") -> LinkConfig:
    node = _require_mapping(node, path)
    unknown = set(node) - {"source", "channel", "phase_noise", "pll",
                           "noise_floor", "y_basis_phase_rad"}
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    source = _build(SourceParams, node.get("source", {}), f"{path}.source", _SOURCE_FIELDS)
    channel = _build(ChannelParams, node.get("channel", {}), f"{path}.channel", _CHANNEL_FIELDS)
    noise = _build(PhaseNoiseParams, node.get("phase_noise", {}),
                   f"{path}.phase_noise", _NOISE_FIELDS)
    pll = _build(PllParams, node.get("pll", {}), f"{path}.pll", _PLL_FIELDS)
    extra = {}
    for name in ("noise_floor", "y_basis_phase_rad"):
        if name in node:
            value = node[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{name}: expected a number, got {value!r}")
            extra[name] = float(value)
    try:
        return LinkConfig(source=source, channel=channel, phase_noise=noise,
                          pll=pll, **extra)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def scenario_from_dict(doc: dict, default_name: str = "scenario") -> Scenario:
    doc = _require_mapping(doc, "scenario")
    unknown = set(doc) - {"name", "seed", "description", "link", "analysis",
                          "schedule", "expected"}
    if unknown:
        raise ConfigError(f"scenario.{sorted(unknown)[0]}: unknown field")
    name = doc.get("name", default_name)
    if not isinstance(name, str) or not name:
        raise ConfigError("scenario.name: expected a non-empty string")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"scenario.seed: expected an integer, got {seed!r}")
    link = link_config_from_dict(doc.get("link", {}), "scenario.link")
    analysis = _build(SkrParams, doc.get("analysis", {}), "scenario.analysis",
                      _ANALYSIS_FIELDS)
    schedule_node = doc.get("schedule", [])
    if not isinstance(schedule_node, list) or not schedule_node:
        raise ConfigError("scenario.schedule: expected a non-empty list")
    schedule = []
    for idx, item in enumerate(schedule_node):
        item = _require_mapping(item, f"scenario.schedule[{idx}]")
        unknown = set(item) - {"basis_alice", "basis_bob", "integration_s"}
        if unknown:
            raise ConfigError(f"scenario.schedule[{idx}].{sorted(unknown)[0]}: unknown field")
        try:
            schedule.append(ScheduleEntry(
                basis_alice=item.get("basis_alice", ""),
                basis_bob=item.get("basis_bob", ""),
                integration_s=float(item.get("integration_s", 0.0)),
            ))
        except (ConfigError, TypeError, ValueError) as exc:
            raise ConfigError(f"scenario.schedule[{idx}]: {exc}") from exc
    expected = doc.get("expected", {}) or {}
    if not isinstance(expected, dict):
        raise ConfigError("scenario.expected: expected a mapping")
    description = doc.get("description", "")
    if not isinstance(description, str):
        raise ConfigError("scenario.description: expected a string")
    return Scenario(name=name, seed=int(seed), link=link, analysis=analysis,
                    schedule=schedule, description=description, expected=dict(expected))


def scenario_to_dict(scn: Scenario) -> dict:
    link = scn.link
    doc = {
        "name": scn.name,
        "seed": int(scn.seed),
        "description": scn.description,
        "link": {
            "source": {
                "rep_rate_hz": link.source.rep_rate_hz,
                "pair_prob_per_pulse": link.source.pair_prob_per_pulse,
                "multi_pair_fraction": link.source.multi_pair_fraction,
                "spiral_imbalance": link.source.spiral_imbalance,
            },
            "channel": {
                "length_km": link.channel.length_km,
                "atten_db_per_km": link.channel.atten_db_per_km,
                "coupling_loss_db_per_facet": link.channel.coupling_loss_db_per_facet,
                "n_facets_signal": link.channel.n_facets_signal,
                "n_facets_idler": link.channel.n_facets_idler,
                "insertion_loss_db": link.channel.insertion_loss_db,
                "detector_efficiency": link.channel.detector_efficiency,
                "dark_count_rate_hz": link.channel.dark_count_rate_hz,
                "coincidence_window_s": link.channel.coincidence_window_s,
            },
            "phase_noise": {
                "process": link.phase_noise.process,
                "bandwidth_hz": link.phase_noise.bandwidth_hz,
                "std_rad": link.phase_noise.std_rad,
                "jump_rate_hz": link.phase_noise.jump_rate_hz,
                "jump_magnitude_rad": link.phase_noise.jump_magnitude_rad,
            },
            "pll": {
                "loop_rate_hz": link.pll.loop_rate_hz,
                "kp": link.pll.kp,
                "ki": link.pll.ki,
                "kd": link.pll.kd,
                "setpoint_fraction": link.pll.setpoint_fraction,
                "unlock_threshold": link.pll.unlock_threshold,
                "relock_strategy": link.pll.relock_strategy,
                "fringe_visibility": link.pll.fringe_visibility,
            },
            "noise_floor": link.noise_floor,
            "y_basis_phase_rad": link.y_basis_phase_rad,
        },
        "analysis": {
            "f": scn.analysis.f,
            "sift_ratio": scn.analysis.sift_ratio,
            "raw_rate_hz": scn.analysis.raw_rate_hz,
            "alpha": scn.analysis.alpha,
            "eta": scn.analysis.eta,
            "eps_sec": scn.analysis.eps_sec,
            "eps_cor": scn.analysis.eps_cor,
        },
        "schedule": [
            {"basis_alice": e.basis_alice, "basis_bob": e.basis_bob,
             "integration_s": e.integration_s}
            for e in scn.schedule
        ],
    }
    if scn.expected:
        doc["expected"] = dict(scn.expected)
    return doc


def dump_scenario(scn: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(scn), sort_keys=False, default_flow_style=False)


def save_scenario(path, scn: Scenario):
    with open(path, "w") as fh:
        fh.write(dump_scenario(scn))


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if doc is None:
        raise ConfigError(f"{path}: empty scenario file")
    return scenario_from_dict(doc)


def scenario_digest(scn: Scenario) -> str:
    """Stable content digest of a scenario (seed and schedule included)."""
    canonical = yaml.safe_dump(scenario_to_dict(scn), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def bundled_scenario_names() -> list[str]:
    root = resources.files("pathqkd") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_bundled_scenario(name: str) -> Scenario:
    root = resources.files("pathqkd") / "scenarios"
    path = root / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(
            f"unknown bundled scenario {name!r}; available: {bundled_scenario_names()}"
        )
    doc = yaml.safe_load(path.read_text())
    return scenario_from_dict(doc, default_name=name)


def bundled_dataset_path(name: str):
    """Path to a bundled counts dataset (JSON)."""
    root = resources.files("pathqkd") / "data"
    path = root / f"{name}.json"
    if not path.is_file():
        available = sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))
        raise ConfigError(f"unknown bundled dataset {name!r}; available: {available}")
    return path
