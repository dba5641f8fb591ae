"""Declarative pipeline configuration (YAML file + CLI overrides)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .fields import GridSpec
from .fitting import LOSS_NAMES, FitConfig
from .ingest import PROFILES, TrajectorySchema
from .models import MODEL_NAMES, FdParams
from .validation import SyntheticScenario

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


@dataclass
class PipelineConfig:
    """Everything one `run` needs: input, grid, sampling, fits, outputs."""

    input_path: Optional[Path] = None
    schema: TrajectorySchema = field(default_factory=lambda: PROFILES["generic"])
    grid: GridSpec = field(default_factory=GridSpec)
    zero_tol: float = 1e-9
    min_samples: int = 100
    provenance: bool = False
    gap_threshold: float = 60.0
    backward_tolerance: float = 0.01
    models: tuple = ("smulders",)
    losses: tuple = ("ece",)
    fit: FitConfig = field(default_factory=FitConfig)
    scenario: Optional[SyntheticScenario] = None
    out_dir: Path = Path("out")
    figures: bool = True

    def validate(self) -> None:
        if not self.models:
            raise ConfigError("model list must not be empty")
        for name in self.models:
            if name not in MODEL_NAMES:
                raise ConfigError(f"unknown model {name!r} (choices: {MODEL_NAMES})")
        for name in self.losses:
            if name not in LOSS_NAMES:
                raise ConfigError(f"unknown loss {name!r} (choices: {LOSS_NAMES})")
        if self.input_path is None and self.scenario is None:
            raise ConfigError("either input.path or a scenario section is required")
        if self.input_path is not None and not Path(self.input_path).exists():
            raise ConfigError(f"input path {self.input_path} does not exist")


def load_config(path) -> PipelineConfig:
    """Read a YAML config file into a validated PipelineConfig."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    known = {"input", "grid", "sampling", "segmentation", "fit", "scenario", "output"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    inp = raw.get("input", {}) or {}
    if "path" in inp:
        cfg.input_path = Path(inp["path"])
    cfg.schema = _schema_from(inp)

    try:
        grid = raw.get("grid", {}) or {}
        cfg.grid = GridSpec(**{k: float(v) for k, v in grid.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid section: {exc}") from exc

    sampling = raw.get("sampling", {}) or {}
    cfg.zero_tol = float(sampling.get("zero_tol", cfg.zero_tol))
    cfg.min_samples = int(sampling.get("min_samples", cfg.min_samples))
    cfg.provenance = bool(sampling.get("provenance", cfg.provenance))

    seg = raw.get("segmentation", {}) or {}
    cfg.gap_threshold = float(seg.get("gap_threshold", cfg.gap_threshold))
    cfg.backward_tolerance = float(seg.get("backward_tolerance", cfg.backward_tolerance))

    fit = raw.get("fit", {}) or {}
    cfg.models = tuple(fit.get("models", cfg.models))
    cfg.losses = tuple(fit.get("losses", cfg.losses))
    try:
        cfg.fit = FitConfig(
            loss=cfg.losses[0] if cfg.losses else "ece",
            multistart=int(fit.get("multistart", 16)),
            max_iter=int(fit.get("max_iter", 1000)),
            fatol=float(fit.get("fatol", 1e-12)),
            xatol=float(fit.get("xatol", 1e-8)),
            seed=int(fit.get("seed", 0)),
            bounds={k: tuple(v) for k, v in (fit.get("bounds") or {}).items()},
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad fit section: {exc}") from exc

    if "scenario" in raw and raw["scenario"]:
        cfg.scenario = _scenario_from(raw["scenario"])

    out = raw.get("output", {}) or {}
    cfg.out_dir = Path(out.get("dir", "out"))
    cfg.figures = bool(out.get("figures", True))

    cfg.validate()
    return cfg


def _schema_from(inp: dict) -> TrajectorySchema:
    if "schema" in inp and inp["schema"]:
        s = inp["schema"]
        try:
            return TrajectorySchema(
                vehicle_col=s["vehicle_col"], time_col=s["time_col"],
                position_col=s["position_col"],
                time_unit=s.get("time_unit", "seconds"),
                position_unit=s.get("position_unit", "meters"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad input.schema: {exc}") from exc
    profile = inp.get("profile", "generic")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r} (choices: {sorted(PROFILES)})")
    return PROFILES[profile]


def _scenario_from(raw: dict) -> SyntheticScenario:
    try:
        truth = FdParams(model=raw["model"],
                         **{k: float(v) for k, v in raw["params"].items()})
        return SyntheticScenario(
            truth=truth,
            density_profile=[float(k) for k in raw["density_profile"]],
            block_s=float(raw.get("block_s", 420.0)),
            road_m=float(raw.get("road_m", 1500.0)),
            ramp_s=float(raw.get("ramp_s", 30.0)),
            sample_dt=float(raw.get("sample_dt", 1.0)),
            sim_dt=float(raw.get("sim_dt", 0.25)),
            spacing_jitter=float(raw.get("spacing_jitter", 0.0)),
            label_noise=bool(raw.get("label_noise", False)),
            seed=int(raw.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario section: {exc}") from exc
