"""
Configuration module v1.0
Wasserstein DRMDP certification toolkit
YAML experiment configuration: parsing, line-anchored validation and defaults
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from ambiguity import GroundNorm
from errors import ConfigError, WdrmdpError
from linear_approx import FeatureMatrix
from mdp_core import Policy, TabularMdp, TransitionModel

# Logging setup
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

EXPERIMENT_KINDS = ("sandwich", "approx", "oos", "robust-vi")

DEFAULTS = {
    "solver": {"tol": 1e-8, "oracle_step": 0.05, "max_sweeps": 100, "lambda_grid": None},
    "ambiguity": {"norm": "l1", "aggregate": "sum"},
    "schedule": {"c0": 2.0, "c1": 2.0, "c2": 0.5, "epsilon": 0.1},
    "oos": {"n_episodes": 10, "episode_len": 100, "trials": 100, "radius_scale": 1.0, "radius_override": None},
    "robust": {"radius": 0.2},
}


@dataclass
class ExperimentConfig:
    """Validated experiment configuration"""

    experiment: str
    seed: int
    mdp: TabularMdp
    output: str = "results.jsonl"
    models: List[TransitionModel] = field(default_factory=list)
    weights: Optional[np.ndarray] = None
    episodes_csv: Optional[str] = None
    policy: Optional[Policy] = None
    states: List[int] = field(default_factory=list)
    norm: GroundNorm = GroundNorm.L1_PRODUCT
    radii: Optional[np.ndarray] = None
    alpha_grid: List[float] = field(default_factory=list)
    aggregate: str = "sum"
    tol: float = 1e-8
    lambda_grid: Optional[List[float]] = None
    oracle_step: float = 0.05
    max_sweeps: int = 100
    features: Optional[FeatureMatrix] = None
    schedule: Dict[str, float] = field(default_factory=lambda: dict(DEFAULTS["schedule"]))
    oos: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS["oos"]))
    robust_radius: float = 0.2
    threads: int = 1
    source_path: Optional[str] = None
    digest: str = ""


class LineIndex:
    """Maps dotted field paths to 1-based line numbers in the YAML source"""

    def __init__(self, text: str):
        self.lines: Dict[str, int] = {}
        try:
            root = yaml.compose(text)
        except yaml.YAMLError:
            root = None
        if root is not None:
            self._walk(root, "")

    def _walk(self, node, path: str) -> None:
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                child = f"{path}.{key_node.value}" if path else str(key_node.value)
                self.lines[child] = key_node.start_mark.line + 1
                self._walk(value_node, child)
                self.lines[child] = key_node.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                self._walk(item, f"{path}[{i}]")

    def line(self, path: str) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return None


class ConfigValidator:
    """Field-level checks that raise ConfigError anchored at the offending line"""

    def __init__(self, index: LineIndex):
        self.index = index

    def fail(self, path: str, message: str):
        raise ConfigError(message, field=path, line=self.index.line(path))

    def section(self, data: Dict, key: str) -> Dict:
        value = data.get(key) or {}
        if not isinstance(value, dict):
            self.fail(key, f"'{key}' must be a mapping")
        merged = dict(DEFAULTS.get(key, {}))
        merged.update(value)
        return merged

    def number(self, value, path: str, low: Optional[float] = None, high: Optional[float] = None,
               low_open: bool = False, high_open: bool = False) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        value = float(value)
        if low is not None and (value < low or (low_open and value == low)):
            self.fail(path, f"value {value} must be {'>' if low_open else '>='} {low}")
        if high is not None and (value > high or (high_open and value == high)):
            self.fail(path, f"value {value} must be {'<' if high_open else '<='} {high}")
        return value

    def integer(self, value, path: str, low: Optional[int] = None) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if low is not None and value < low:
            self.fail(path, f"value {value} must be >= {low}")
        return int(value)

    def number_list(self, value, path: str, low: Optional[float] = None) -> List[float]:
        if not isinstance(value, list):
            self.fail(path, f"expected a list, got {value!r}")
        return [self.number(x, f"{path}[{i}]", low=low) for i, x in enumerate(value)]

    def array(self, value, path: str, ndim: int) -> np.ndarray:
        try:
            array = np.array(value, dtype=float)
        except (TypeError, ValueError):
            self.fail(path, "expected a rectangular numeric array")
        if array.ndim != ndim:
            self.fail(path, f"expected a {ndim}-dimensional array, got shape {array.shape}")
        return array


def _digest(data: Dict) -> str:
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_config(text: str, source_path: Optional[str] = None, overrides: Optional[Dict] = None) -> ExperimentConfig:
    """
    Parse and validate a YAML experiment configuration

    Args:
        text: YAML source
        source_path: file the text came from, used to resolve relative paths
        overrides: CLI overrides (seed, output, threads)

    Returns:
        ExperimentConfig
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML parse error: {getattr(e, 'problem', None) or e}",
                          line=mark.line + 1 if mark is not None else None)
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a YAML mapping", line=1)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    check = ConfigValidator(LineIndex(text))

    experiment = data.get("experiment")
    if experiment not in EXPERIMENT_KINDS:
        check.fail("experiment", f"experiment must be one of {', '.join(EXPERIMENT_KINDS)}, got {experiment!r}")
    if "seed" not in data and "seed" not in overrides:
        check.fail("seed", "seed is mandatory")
    seed = check.integer(overrides.get("seed", data.get("seed")), "seed", low=0)

    mdp_data = data.get("mdp")
    if not isinstance(mdp_data, dict):
        check.fail("mdp", "'mdp' section with reward and discount is required")
    reward = check.array(mdp_data.get("reward"), "mdp.reward", 2)
    discount = check.number(mdp_data.get("discount"), "mdp.discount", low=0.0, high=1.0, high_open=True)
    r_max = mdp_data.get("r_max")
    if r_max is not None:
        r_max = check.number(r_max, "mdp.r_max", low=0.0, low_open=True)
    for key, axis in (("num_states", 0), ("num_actions", 1)):
        if key in mdp_data and check.integer(mdp_data[key], f"mdp.{key}", low=1) != reward.shape[axis]:
            check.fail(f"mdp.{key}", f"{key}={mdp_data[key]} but reward has shape {reward.shape}")
    try:
        mdp = TabularMdp.from_rewards(reward, discount, r_max)
    except WdrmdpError as e:
        check.fail("mdp.reward", str(e))
    n_s, n_a = mdp.num_states, mdp.num_actions

    models, weights = [], None
    raw_models = data.get("models") or []
    if not isinstance(raw_models, list):
        check.fail("models", "'models' must be a list")
    if raw_models:
        weight_list = []
        for j, item in enumerate(raw_models):
            if not isinstance(item, dict) or "probs" not in item:
                check.fail(f"models[{j}]", "each model needs a 'probs' entry")
            probs = check.array(item["probs"], f"models[{j}].probs", 3)
            if probs.shape != (n_s, n_a, n_s):
                check.fail(f"models[{j}].probs", f"shape {probs.shape} does not match ({n_s}, {n_a}, {n_s})")
            try:
                models.append(TransitionModel(probs))
            except WdrmdpError as e:
                check.fail(f"models[{j}].probs", str(e))
            weight_list.append(check.number(item.get("weight", 1.0 / len(raw_models)), f"models[{j}].weight", low=0.0))
        weights = np.array(weight_list)
        if abs(weights.sum() - 1.0) > 1e-9:
            check.fail("models", f"model weights sum to {weights.sum()}, expected 1")
        weights = weights / weights.sum()

    episodes_csv = data.get("episodes_csv")
    if not models and not episodes_csv:
        check.fail("models", "either 'models' or 'episodes_csv' is required")
    if experiment == "oos" and not models:
        check.fail("models", "the oos experiment needs generating 'models'")

    policy = None
    if data.get("policy") is not None:
        actions = data["policy"]
        if not isinstance(actions, list) or len(actions) != n_s:
            check.fail("policy", f"policy must list one action per state ({n_s})")
        for s, a in enumerate(actions):
            check.integer(a, f"policy[{s}]", low=0)
            if a >= n_a:
                check.fail(f"policy[{s}]", f"action {a} outside [0, {n_a})")
        policy = Policy(np.array(actions, dtype=int))

    states = data.get("states", list(range(n_s)))
    if not isinstance(states, list):
        check.fail("states", "states must be a list")
    for k, s in enumerate(states):
        check.integer(s, f"states[{k}]", low=0)
        if s >= n_s:
            check.fail(f"states[{k}]", f"state {s} outside [0, {n_s})")

    ambiguity = check.section(data, "ambiguity")
    try:
        norm = GroundNorm.parse(ambiguity["norm"])
    except WdrmdpError as e:
        check.fail("ambiguity.norm", str(e))
    radii = None
    if ambiguity.get("radii") is not None:
        radii = np.array(check.number_list(ambiguity["radii"], "ambiguity.radii", low=0.0))
        if radii.size != n_s:
            check.fail("ambiguity.radii", f"{radii.size} radii for {n_s} states")
    alpha_grid = check.number_list(ambiguity.get("alpha_grid") or [], "ambiguity.alpha_grid", low=0.0)
    aggregate = ambiguity["aggregate"]
    if aggregate not in ("sum", "explicit"):
        check.fail("ambiguity.aggregate", f"aggregate must be 'sum' or 'explicit', got {aggregate!r}")
    if experiment in ("sandwich", "approx") and radii is None and not alpha_grid:
        check.fail("ambiguity", "give 'radii' or 'alpha_grid'")
    if radii is not None and alpha_grid and aggregate == "sum":
        check.fail("ambiguity.radii", "radii next to an alpha_grid need aggregate 'explicit', "
                                      "otherwise the grid would replace them")
    if experiment in ("sandwich", "approx") and aggregate == "explicit" and not alpha_grid:
        check.fail("ambiguity.aggregate", "aggregate 'explicit' needs an alpha_grid")

    solver = check.section(data, "solver")
    tol = check.number(solver["tol"], "solver.tol", low=0.0, low_open=True)
    oracle_step = check.number(solver["oracle_step"], "solver.oracle_step", low=0.0, high=1.0, low_open=True)
    max_sweeps = check.integer(solver["max_sweeps"], "solver.max_sweeps", low=1)
    lambda_grid = None
    if solver.get("lambda_grid") is not None:
        lambda_grid = check.number_list(solver["lambda_grid"], "solver.lambda_grid", low=0.0)
        if not lambda_grid:
            check.fail("solver.lambda_grid", "lambda grid must not be empty")

    features = None
    if experiment == "approx":
        if data.get("features") is None:
            check.fail("features", "the approx experiment needs a 'features' matrix")
        phi = check.array(data["features"], "features", 2)
        if phi.shape[0] != n_s:
            check.fail("features", f"features have {phi.shape[0]} rows, MDP has {n_s} states")
        try:
            features = FeatureMatrix(phi)
        except WdrmdpError as e:
            check.fail("features", str(e))

    schedule = check.section(data, "schedule")
    for key in ("c0", "c1", "c2"):
        schedule[key] = check.number(schedule[key], f"schedule.{key}", low=0.0, low_open=True)
    schedule["epsilon"] = check.number(schedule["epsilon"], "schedule.epsilon", low=0.0, high=1.0,
                                       low_open=True, high_open=True)

    oos = check.section(data, "oos")
    for key in ("n_episodes", "episode_len", "trials"):
        oos[key] = check.integer(oos[key], f"oos.{key}", low=1)
    oos["radius_scale"] = check.number(oos["radius_scale"], "oos.radius_scale", low=0.0)
    if oos.get("radius_override") is not None:
        override = oos["radius_override"]
        oos["radius_override"] = (check.number_list(override, "oos.radius_override", low=0.0)
                                  if isinstance(override, list)
                                  else check.number(override, "oos.radius_override", low=0.0))

    robust = check.section(data, "robust")
    robust_radius = check.number(robust["radius"], "robust.radius", low=0.0)

    output = overrides.get("output", data.get("output", "results.jsonl"))
    if not isinstance(output, str) or not output:
        check.fail("output", "output must be a file path")
    threads = check.integer(overrides.get("threads", data.get("threads", 1)), "threads", low=1)

    return ExperimentConfig(
        experiment=experiment, seed=seed, mdp=mdp, output=output, models=models, weights=weights,
        episodes_csv=episodes_csv, policy=policy, states=[int(s) for s in states], norm=norm, radii=radii,
        alpha_grid=alpha_grid, aggregate=aggregate, tol=tol, lambda_grid=lambda_grid, oracle_step=oracle_step,
        max_sweeps=max_sweeps, features=features, schedule=schedule, oos=oos, robust_radius=robust_radius,
        threads=threads, source_path=source_path, digest=_digest({**data, "seed": seed}),
    )


def load_config(path: str, overrides: Optional[Dict] = None) -> ExperimentConfig:
    """Read and validate a configuration file"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as e:
        raise ConfigError(f"cannot read configuration: {e}")
    config = parse_config(text, source_path=path, overrides=overrides)
    if config.episodes_csv and not os.path.isabs(config.episodes_csv):
        config.episodes_csv = os.path.join(os.path.dirname(path), config.episodes_csv)
    logger.info(f"loaded {config.experiment} configuration from {path} (digest {config.digest[:12]})")
    return config


def dump_mdp(mdp: TabularMdp) -> str:
    """YAML for an `mdp` section; parse_config reads it back to an equal MDP"""
    section = {"mdp": {"num_states": mdp.num_states, "num_actions": mdp.num_actions,
                       "discount": mdp.discount, "r_max": mdp.r_max, "reward": mdp.reward.tolist()}}
    return yaml.safe_dump(section, default_flow_style=None, sort_keys=False)
