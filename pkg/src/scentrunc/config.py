"""Run configuration: schema, YAML loading and the embedded demo setup."""
from __future__ import annotations

import hashlib
import json
import warnings
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .optimization import ConstraintSpec, CostSpec
from .scenarios import SamplerSpec
from .system import LinearSystem

Matrix = List[List[float]]


class ConfigError(ValueError):
    """Invalid run configuration; the message lists offending field paths."""


class _FieldError(ValueError):
    """Validator error attributed to a sub-field (dotted path relative to the model)."""

    def __init__(self, field, msg):
        self.field = field
        super().__init__(msg)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _shape(M, name):
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2 or 0 in arr.shape:
        raise ValueError(f"{name} must be a non-empty rectangular matrix")
    return arr.shape


class SystemConfig(_Strict):
    A: Matrix
    Bu: Matrix
    Bw: Matrix
    horizon: int = Field(ge=1)

    @model_validator(mode="after")
    def _dims(self):
        n, m = _shape(self.A, "A")
        if n != m:
            raise ValueError("A must be square")
        if _shape(self.Bu, "Bu")[0] != n or _shape(self.Bw, "Bw")[0] != n:
            raise ValueError("Bu and Bw must have as many rows as A")
        return self


class ConstraintConfig(_Strict):
    fx: Matrix
    fu: Matrix


class SamplerConfig(_Strict):
    kind: Literal["gaussian-diagonal", "gaussian-full", "uniform-box", "user-file"]
    variance: Optional[List[float]] = None
    covariance: Optional[Matrix] = None
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    path: Optional[str] = None

    @model_validator(mode="after")
    def _params(self):
        self.to_spec()
        return self

    def to_spec(self):
        def tup(v):
            if v is None:
                return None
            return tuple(tuple(r) if isinstance(r, list) else r for r in v)
        return SamplerSpec(self.kind, tup(self.variance), tup(self.covariance), tup(self.lower),
                           tup(self.upper), self.path)


class SamplesConfig(_Strict):
    delta: Optional[float] = Field(default=None, gt=0, lt=1)
    beta: Optional[float] = Field(default=None, gt=0, lt=1)
    n_samples: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _source(self):
        if self.n_samples is None:
            for k in ("delta", "beta"):
                if getattr(self, k) is None:
                    raise _FieldError(k, "required when n_samples is not given")
        return self


class TruncationConfig(_Strict):
    nhat: Optional[int] = Field(default=None, ge=1)
    target_eps: Optional[float] = Field(default=None, ge=0)
    prune: bool = True
    # "certified" replaces the coordinate-wise buffers by the exact hull distance
    buffers: Literal["coordinate", "certified"] = "coordinate"

    @model_validator(mode="after")
    def _one_stop(self):
        if (self.nhat is None) == (self.target_eps is None):
            raise ValueError("give exactly one of nhat or target_eps")
        return self


class CostConfig(_Strict):
    Q: Matrix
    R: Matrix
    reference: Optional[List[float]] = None
    expectation_mode: Literal["nominal", "scenario-mean", "design-mean"] = "nominal"


class SeedConfig(_Strict):
    scenario: int = Field(default=0, ge=0)
    validation_offset: int = Field(default=1_000_003, ge=1)

    @property
    def validation(self):
        return self.scenario + self.validation_offset


class ValidationConfig(_Strict):
    mc_samples: int = Field(default=10000, ge=1)
    tol: float = Field(default=1e-6, ge=0)


class OutputConfig(_Strict):
    directory: str = "runs/out"
    plot_coords: List[int] = Field(default_factory=lambda: [0, 2], min_length=2, max_length=2)


class RunConfig(_Strict):
    system: SystemConfig
    constraints: ConstraintConfig
    sampler: SamplerConfig
    samples: SamplesConfig
    truncation: TruncationConfig
    cost: CostConfig
    x0: List[float]
    seeds: SeedConfig = SeedConfig()
    norm: Literal["one", "two"] = "one"
    validation: ValidationConfig = ValidationConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _consistent(self):
        n = len(self.system.A)
        nu, nw = len(self.system.Bu[0]), len(self.system.Bw[0])
        if len(self.x0) != n:
            raise _FieldError("x0", f"has length {len(self.x0)}, expected {n}")
        if any(len(r) != n for r in self.constraints.fx):
            raise _FieldError("constraints.fx", f"rows must have length {n}")
        if any(len(r) != nu for r in self.constraints.fu):
            raise _FieldError("constraints.fu", f"rows must have length {nu}")
        if len(self.cost.Q) != n:
            raise _FieldError("cost.Q", f"must be {n}x{n}")
        if len(self.cost.R) != nu:
            raise _FieldError("cost.R", f"must be {nu}x{nu}")
        spec_nw = self.sampler.to_spec().n_w()
        p = self.system.horizon
        if spec_nw is not None and spec_nw not in (nw, p * nw):
            raise _FieldError("sampler", f"describes {spec_nw}-dimensional disturbances, "
                                         f"system has n_w={nw}")
        nhat, N = self.truncation.nhat, self.samples.n_samples
        if nhat is not None and N is not None and nhat > N:
            raise _FieldError("truncation.nhat", f"{nhat} exceeds samples.n_samples={N}")
        if max(self.output.plot_coords) >= n or min(self.output.plot_coords) < 0:
            raise _FieldError("output.plot_coords", f"must index states 0..{n - 1}")
        return self

    # builders -----------------------------------------------------------
    def linear_system(self):
        s = self.system
        return LinearSystem(np.array(s.A, dtype=float), np.array(s.Bu, dtype=float),
                            np.array(s.Bw, dtype=float), s.horizon)

    def constraint_spec(self):
        return ConstraintSpec(np.array(self.constraints.fx, dtype=float),
                              np.array(self.constraints.fu, dtype=float))

    def cost_spec(self):
        c = self.cost
        ref = None if c.reference is None else np.array(c.reference, dtype=float)
        return CostSpec(np.array(c.Q, dtype=float), np.array(c.R, dtype=float), ref,
                        c.expectation_mode)

    def sampler_spec(self):
        return self.sampler.to_spec()

    def x0_array(self):
        return np.array(self.x0, dtype=float)

    def config_hash(self):
        """sha256 of the canonical config with the output directory left out."""
        data = self.model_dump(mode="json")
        data["output"].pop("directory", None)
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **changes):
        """Copy with dotted-path overrides, e.g. ``{"truncation.nhat": 6}``; re-validated."""
        data = self.model_dump(mode="python")
        for key, value in changes.items():
            node = data
            *head, last = key.split(".")
            for part in head:
                node = node[part]
            node[last] = value
        return validate_config(data)


def _format_errors(err: ValidationError):
    lines = []
    for e in err.errors():
        loc = [str(x) for x in e["loc"]]
        msg = e["msg"]
        cause = e.get("ctx", {}).get("error")
        if isinstance(cause, _FieldError):
            loc.append(cause.field)
            msg = str(cause)
        lines.append(f"  {'.'.join(loc) or '<root>'}: {msg}")
    return "invalid configuration:\n" + "\n".join(lines)


def validate_config(data) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: not valid YAML: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return validate_config(data)


def demo_config() -> RunConfig:
    text = resources.files("scentrunc").joinpath("data/demo.yaml").read_text()
    return validate_config(yaml.safe_load(text))


def resolve_sample_count(cfg: RunConfig, problem="truncated"):
    """``(N, n_theta, from_formula)``; warns when an explicit N bypasses the bound."""
    from .scenarios import count_decision_vars, required_sample_count
    from .system import Dims

    s = cfg.system
    dims = Dims(len(s.A), len(s.Bu[0]), len(s.Bw[0]), s.horizon)
    n_theta = count_decision_vars(dims, problem=problem)
    smp = cfg.samples
    formula = None
    if smp.delta is not None and smp.beta is not None:
        formula = required_sample_count(smp.delta, smp.beta, n_theta)
    if smp.n_samples is not None:
        note = "" if formula is None else f" (the bound gives {formula})"
        warnings.warn(f"explicit n_samples={smp.n_samples} overrides the sample-count bound{note}",
                      stacklevel=2)
        return smp.n_samples, n_theta, False
    return formula, n_theta, True
