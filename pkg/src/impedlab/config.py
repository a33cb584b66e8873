"""Experiment configuration: one JSON document, schema version 1, unknown keys rejected."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigInvalid

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WaveSpec(_Strict):
    k: float = Field(gt=0)
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)

    @field_validator("direction")
    @classmethod
    def _nonzero(cls, v):
        if math.hypot(*v) == 0.0:
            raise ValueError("direction must be nonzero")
        return v


class SphereSpec(_Strict):
    kind: Literal["sphere"]
    radius: float = Field(gt=0)
    patch_scale: float = Field(0.5, gt=0)


class HarmonicSpec(_Strict):
    kind: Literal["harmonic"]
    base: float = Field(gt=0)
    coeffs: list[tuple[int, int, float]] = []
    diam_bound: float = math.inf
    lipschitz_M: float = math.inf
    patch_scale: float = Field(0.5, gt=0)


class PartitionSpec(_Strict):
    kind: Literal["fully_impedance", "polar_cap"] = "fully_impedance"
    cap_angle: float = 0.0


class ImpedanceSpec(_Strict):
    model: Literal["constant", "harmonic_expansion", "bump"] = "constant"
    value: Optional[float] = None
    base: float = 0.0
    coeffs: list[tuple[int, int, float]] = []
    height: Optional[float] = None
    width: Optional[float] = None
    theta0: Optional[float] = None
    phi0: Optional[float] = None
    lambda0: float = 0.0
    Lambda: float = math.inf

    @model_validator(mode="after")
    def _params(self):
        if self.model == "constant" and self.value is None:
            raise ValueError("constant impedance needs 'value'")
        if self.model == "bump" and None in (self.height, self.width, self.theta0, self.phi0):
            raise ValueError("bump impedance needs height, width, theta0, phi0")
        return self


class MeshSpec(_Strict):
    n_theta: int = Field(24, ge=8)
    n_phi: int = Field(48, ge=16)
    grading: float = Field(1.0, ge=1.0)
    method: Literal["auto", "galerkin", "nystrom"] = "auto"


class InverseSpec(_Strict):
    R1: float = Field(3.0, gt=0)
    rho: float = Field(0.0, ge=0)
    gamma_in: float = Field(0.7, gt=0, lt=1)
    n_sources: int = Field(400, ge=16)
    tau: Optional[float] = Field(None, gt=0)
    truncation: Union[Literal["sqrt"], int] = "sqrt"
    noise: float = Field(0.0, ge=0)
    far_grid: tuple[int, int] = (32, 64)
    data: Literal["series", "bie"] = "series"
    tolerance: float = Field(1e-2, gt=0)


class SweepSpec(_Strict):
    eps: list[float] = [1e-1, 1e-2, 1e-3, 1e-4]
    seeds: int = Field(16, ge=1)

    @field_validator("eps")
    @classmethod
    def _levels(cls, v):
        if any(not 0.0 < e < 1.0 for e in v):
            raise ValueError("noise levels must lie in (0, 1)")
        if len(set(v)) != len(v):
            raise ValueError("noise levels must be distinct")
        return v


class ChecksSpec(_Strict):
    centers: list[tuple[float, float, float]] = [(0.0, 0.0, 1.0)]
    rho: list[float] = [0.05, 0.1]
    beta: list[float] = [1.5, 2.0, 3.0]
    surface_r: list[float] = [0.05, 0.1, 0.2]
    ap_r: list[float] = [0.1]
    p: list[float] = [1.5, 2.0, 3.0]
    radii: list[float] = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]
    sphere_samples: int = Field(512, ge=8)
    three_spheres_centers: list[tuple[float, float, float]] = [(0.0, 0.0, 2.0)]
    three_spheres_rho: float = Field(0.2, gt=0)
    beta1: float = 2.0
    beta2: float = 4.0
    second_impedance: float = 1.1
    n_volume: int = Field(8192, ge=64)
    psi0_cases: list[tuple[float, float]] = [(1.0, 2.0), (2.0, 1.0), (1.0, 1.0)]
    psi0_points: int = Field(1000, ge=1)
    psi0_tol: float = 1e-12
    psi0_fd_tol: float = 1e-6


class ExperimentConfig(_Strict):
    schema_version: Literal[1]
    name: str = "experiment"
    seed: int = 0
    wave: WaveSpec
    surface: Union[SphereSpec, HarmonicSpec] = Field(discriminator="kind")
    partition: PartitionSpec = PartitionSpec()
    impedance: ImpedanceSpec
    mesh: MeshSpec = MeshSpec()
    inverse: InverseSpec = InverseSpec()
    sweep: SweepSpec = SweepSpec()
    checks: ChecksSpec = ChecksSpec()


def _location(err):
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_config(data):
    """Validate a mapping; errors name the offending key path."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        details = "; ".join(f"{_location(e)}: {e['msg']}" for e in exc.errors())
        raise ConfigInvalid(details) from None


def load_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return parse_config(data)


def canonical_config(name):
    """One of the shipped configs by file stem (e.g. ``"sphere_full_coat"``)."""
    path = Path(__file__).with_name("configs") / f"{name}.json"
    return load_config(path)
