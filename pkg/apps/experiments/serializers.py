# apps/experiments/serializers.py
"""
Experiment configuration: defaults from settings.CROWDCHARGE, then an optional
JSON file, then explicit flags, then the CROWDCHARGE_SEED environment variable.
"""
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

from django.conf import settings
from rest_framework import serializers

from apps.balancing.strategies import STRATEGY_TAGS
from apps.crowd.state import ParameterError, SimParams

SEED_ENV = "CROWDCHARGE_SEED"

# SimParams field -> setting name, where they differ.
SETTING_NAMES = {"m": "users", "n": "locations"}


class ConfigError(Exception):
    """Invalid configuration value; `field` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass(frozen=True)
class RunPlan:
    method: str
    params: SimParams


@dataclass
class ExperimentSpec:
    plans: List[RunPlan]
    reps: int = 50
    output: Path = Path("results/crowdcharge.csv")
    jobs: int = 1
    label: str = "experiment"
    social_graph: Optional[str] = None
    trace: Optional[str] = None
    record: bool = True
    resolved: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.plans:
            raise ConfigError("methods", "at least one strategy is required")
        if self.reps < 1:
            raise ConfigError("reps", "must be >= 1")

    @property
    def params(self) -> SimParams:
        return self.plans[0].params

    def with_overrides(self, label: str, output: Path, methods=None, **overrides) -> "ExperimentSpec":
        """Copy with SimParams overrides applied to every plan (or to `methods`)."""
        methods = methods or [p.method for p in self.plans]
        params = replace(self.params, **overrides)
        resolved = dict(self.resolved, methods=list(methods), output=str(output))
        resolved.update({SETTING_NAMES.get(k, k): v for k, v in overrides.items()})
        return replace(
            self,
            plans=[RunPlan(m, params) for m in methods],
            output=Path(output),
            label=label,
            resolved=resolved,
        )


class ExperimentSpecSerializer(serializers.Serializer):
    users = serializers.IntegerField(min_value=0)
    locations = serializers.IntegerField(min_value=1)
    beta = serializers.FloatField(min_value=0.0)
    alpha = serializers.FloatField()
    delta_t = serializers.FloatField()
    iterations = serializers.IntegerField(min_value=1)
    reps = serializers.IntegerField(min_value=1)
    e_max = serializers.FloatField()
    w_l = serializers.FloatField(min_value=0.0, max_value=1.0)
    w_s = serializers.FloatField(min_value=0.0, max_value=1.0)
    w_e = serializers.FloatField(min_value=0.0, max_value=1.0)
    k = serializers.IntegerField(min_value=1)
    t_min = serializers.FloatField()
    eps_balance = serializers.FloatField(min_value=0.0)
    social_p = serializers.FloatField(min_value=0.0, max_value=1.0)
    seed = serializers.IntegerField()
    methods = serializers.ListField(
        child=serializers.ChoiceField(choices=STRATEGY_TAGS), allow_empty=False
    )
    output = serializers.CharField()
    jobs = serializers.IntegerField(min_value=1)
    social_graph = serializers.CharField(required=False, allow_null=True, allow_blank=True)
    trace = serializers.CharField(required=False, allow_null=True, allow_blank=True)

    def validate_beta(self, value):
        if value >= 1.0:
            raise serializers.ValidationError("Loss factor must be < 1.")
        return value

    def _positive(self, value):
        if value <= 0:
            raise serializers.ValidationError("Must be positive.")
        return value

    validate_alpha = _positive
    validate_delta_t = _positive
    validate_e_max = _positive
    validate_t_min = _positive

    def validate_methods(self, value):
        # Keep first occurrence order, drop repeats.
        return list(dict.fromkeys(value))

    def to_params(self) -> SimParams:
        data = self.validated_data
        return SimParams(
            m=data["users"],
            n=data["locations"],
            beta=data["beta"],
            alpha=data["alpha"],
            delta_t=data["delta_t"],
            iterations=data["iterations"],
            e_max=data["e_max"],
            w_l=data["w_l"],
            w_s=data["w_s"],
            w_e=data["w_e"],
            k=data["k"],
            t_min=data["t_min"],
            eps_balance=data["eps_balance"],
            social_p=data["social_p"],
            seed=data["seed"],
        )


def _first_error(errors) -> tuple:
    name, detail = next(iter(errors.items()))
    while isinstance(detail, dict):
        detail = next(iter(detail.values()))
    if isinstance(detail, list):
        detail = detail[0] if detail else "invalid"
    return name, str(detail)


def _load_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON ({exc.msg}, line {exc.lineno}).")
    if not isinstance(data, dict):
        raise ConfigError("config", f"{path} must hold a JSON object.")
    if isinstance(data.get("methods"), str):
        data["methods"] = [data["methods"]]
    unknown = sorted(set(data) - set(ExperimentSpecSerializer().fields))
    if unknown:
        raise ConfigError(unknown[0], "unknown setting")
    return data


def parse_config(path=None, flags: Optional[dict] = None, record: bool = True) -> ExperimentSpec:
    """Resolve defaults, file, flags and environment into a validated ExperimentSpec."""
    values = dict(settings.CROWDCHARGE)
    values.pop("suite_dir", None)
    if path:
        values.update(_load_file(path))
    values.update({k: v for k, v in (flags or {}).items() if v is not None})
    env_seed = os.getenv(SEED_ENV, "").strip()
    if env_seed:
        values["seed"] = env_seed

    serializer = ExperimentSpecSerializer(data=values)
    if not serializer.is_valid():
        raise ConfigError(*_first_error(serializer.errors))
    try:
        params = serializer.to_params()
    except ParameterError as exc:
        raise ConfigError(SETTING_NAMES.get(exc.field, exc.field), exc.message)

    data = serializer.validated_data
    resolved = dict(data)
    output = Path(data["output"])
    return ExperimentSpec(
        plans=[RunPlan(method, params) for method in data["methods"]],
        reps=data["reps"],
        output=output,
        jobs=data["jobs"],
        label=output.stem,
        social_graph=data.get("social_graph") or None,
        trace=data.get("trace") or None,
        record=record,
        resolved=resolved,
    )
