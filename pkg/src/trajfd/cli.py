"""Command-line pipeline: ingest/synth -> fields -> samples -> fit -> compare.

Each stage writes file artifacts into the output directory and later stages
read them back, so stages can be re-run individually. Exit codes: 0 success,
2 configuration error, 3 data error, 4 fit degeneracy, 5 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import report
from .config import ConfigError, PipelineConfig, load_config
from .fitting import DegenerateSampleError, FitConfig, FitResult, fit_fd
from .ingest import (
    PROFILES,
    IngestError,
    parse_trajectories,
    read_canonical_csv,
    validate_set,
    write_canonical_csv,
)
from .pipeline import collect_samples, segment_fields
from .validation import (
    center_speed_probabilities,
    empirical_decel_probabilities,
    noisy_sign_field,
    synthesize_stationary_trajectories,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DEGENERATE = 4
EXIT_INTERNAL = 5


class DataError(ValueError):
    """A stage is missing its input artifact or the data is unusable."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajfd",
        description="Estimate macroscopic fields from vehicle trajectories and "
                    "fit speed-density fundamental diagrams.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=True, help="YAML config file")
        p.add_argument("--out", type=Path, default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None,
                       help="override fit and scenario seeds")
        p.add_argument("--models", type=str, default=None,
                       help="comma-separated model list override")
        p.add_argument("--loss", choices=("ece", "nll", "lse"), default=None,
                       help="restrict fitting to one loss")
        p.add_argument("--profile", choices=sorted(PROFILES), default=None,
                       help="input schema profile override")
        p.add_argument("--verbose", action="store_true", help="debug logging")
        return p

    add("ingest", "parse and validate a trajectory file into the canonical CSV")
    add("synth", "generate synthetic trajectories from the scenario section")
    add("fields", "estimate speed/density/acceleration fields per segment")
    add("samples", "assemble NLKV and LKV sample tables")
    add("fit", "fit the configured models and losses on the sample tables")
    add("compare", "fit everything and write the comparison table")
    add("diagnose", "empirical deceleration-probability diagnostics")
    add("run", "full pipeline: input -> fields -> samples -> fits -> comparison")
    return parser


def _configure(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.models is not None:
        cfg.models = tuple(m.strip() for m in args.models.split(",") if m.strip())
    if args.loss is not None:
        cfg.losses = (args.loss,)
    if args.profile is not None:
        cfg.schema = PROFILES[args.profile]
    if args.seed is not None:
        cfg.fit = dataclasses.replace(cfg.fit, seed=args.seed)
        if cfg.scenario is not None:
            cfg.scenario = dataclasses.replace(cfg.scenario, seed=args.seed)
    cfg.validate()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _trajectory_path(cfg: PipelineConfig) -> Path:
    return cfg.out_dir / "trajectories.csv"


def stage_ingest(cfg: PipelineConfig) -> Path:
    if cfg.input_path is None:
        raise ConfigError("ingest requires input.path (use `synth` for scenarios)")
    tset = parse_trajectories(cfg.input_path, cfg.schema)
    tset, rejections = validate_set(tset, cfg.backward_tolerance)
    path = _trajectory_path(cfg)
    write_canonical_csv(tset, path)
    logger.info("ingested %d vehicles (%d dropped, %d rejected) -> %s",
                len(tset.trajectories), tset.units_declared.get("dropped_vehicles", 0),
                len(rejections), path)
    return path


def stage_synth(cfg: PipelineConfig) -> Path:
    if cfg.scenario is None:
        raise ConfigError("synth requires a scenario section in the config")
    tset = synthesize_stationary_trajectories(cfg.scenario)
    path = _trajectory_path(cfg)
    write_canonical_csv(tset, path)
    logger.info("synthesized %d vehicles, %d points -> %s",
                len(tset.trajectories), tset.n_points, path)
    return path


def _load_trajectories(cfg: PipelineConfig):
    path = _trajectory_path(cfg)
    if not path.exists():
        raise DataError(f"missing artifact {path}; run `ingest` or `synth` first")
    return read_canonical_csv(path)


def _segments(cfg: PipelineConfig):
    tset = _load_trajectories(cfg)
    parts = segment_fields(tset, cfg.grid, cfg.zero_tol, cfg.gap_threshold)
    if cfg.scenario is not None and cfg.scenario.label_noise:
        for part in parts:
            part.signs = noisy_sign_field(part.A, part.V, part.K_a,
                                          cfg.scenario.truth, seed=cfg.scenario.seed)
    return parts


def _write_field_artifacts(cfg: PipelineConfig, parts) -> list[Path]:
    out = cfg.out_dir / "fields"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for idx, part in enumerate(parts):
        for name, fieldd in (("V", part.V), ("K", part.K), ("A", part.A)):
            path = out / f"seg{idx:03d}_{name}.csv"
            report.write_field_csv(fieldd, path)
            written.append(path)
        meta = out / f"seg{idx:03d}_meta.json"
        report.write_grid_meta(cfg.grid, part.V, meta)
        written.append(meta)
    logger.info("wrote %d field artifacts to %s", len(written), out)
    return written


def _write_samples(cfg: PipelineConfig, parts):
    nlkv, lkv = collect_samples(parts, cfg.min_samples)
    report.write_nlkv_csv(nlkv, cfg.out_dir / "nlkv.csv", provenance=cfg.provenance)
    report.write_lkv_csv(lkv, cfg.out_dir / "lkv.csv", provenance=cfg.provenance)
    logger.info("wrote %d NLKV and %d LKV samples", len(nlkv), len(lkv))
    return nlkv, lkv


def stage_fields(cfg: PipelineConfig) -> list[Path]:
    return _write_field_artifacts(cfg, _segments(cfg))


def stage_samples(cfg: PipelineConfig) -> tuple[Path, Path]:
    _write_samples(cfg, _segments(cfg))
    return cfg.out_dir / "nlkv.csv", cfg.out_dir / "lkv.csv"


def _load_samples(cfg: PipelineConfig):
    nlkv_path = cfg.out_dir / "nlkv.csv"
    lkv_path = cfg.out_dir / "lkv.csv"
    if not nlkv_path.exists() or not lkv_path.exists():
        raise DataError(f"missing sample tables in {cfg.out_dir}; run `samples` first")
    return report.read_nlkv_csv(nlkv_path), report.read_lkv_csv(lkv_path)


def stage_fit(cfg: PipelineConfig) -> list[FitResult]:
    nlkv, lkv = _load_samples(cfg)
    fits_dir = cfg.out_dir / "fits"
    fits_dir.mkdir(parents=True, exist_ok=True)
    fits = []
    for model in cfg.models:
        for loss in cfg.losses:
            fit_cfg = dataclasses.replace(cfg.fit, loss=loss)
            samples = lkv if loss == "lse" else nlkv
            if not samples:
                raise DataError(f"no samples available for loss {loss!r}")
            result = fit_fd(model, samples, fit_cfg)
            fits.append(result)
            path = fits_dir / f"fit_{model}_{loss}.json"
            report.write_json(result.to_dict(), path)
            logger.info("fit %s/%s: loss=%.6g params=%s", model, loss,
                        result.loss_value, result.params.as_dict()["params"])
    return fits


def stage_compare(cfg: PipelineConfig) -> list[FitResult]:
    fits = stage_fit(cfg)
    report.write_comparison(fits, cfg.out_dir / "comparison.json",
                            cfg.out_dir / "comparison.csv")
    logger.info("comparison table: %d rows", len(fits))
    return fits


def stage_diagnose(cfg: PipelineConfig) -> None:
    nlkv, _ = _load_samples(cfg)
    if not nlkv:
        raise DataError("no NLKV samples to diagnose")
    surface = empirical_decel_probabilities(nlkv)
    curves = center_speed_probabilities(surface)
    report.write_decel_surface_csv(surface, cfg.out_dir / "decel_probability.csv")
    report.write_centered_curves_csv(curves, cfg.out_dir / "decel_probability_centered.csv")
    if cfg.figures:
        report.render_diagnostics_figures(cfg.out_dir / "figures", surface, curves)
    logger.info("diagnostics: %d populated bins, %d centered curves",
                int((surface.n > 0).sum()), len(curves))


def stage_run(cfg: PipelineConfig) -> None:
    if cfg.input_path is not None:
        stage_ingest(cfg)
    else:
        stage_synth(cfg)
    parts = _segments(cfg)
    _write_field_artifacts(cfg, parts)
    nlkv, lkv = _write_samples(cfg, parts)
    fits = stage_compare(cfg)
    report.emit_plot_data(cfg.out_dir / "plots", parts, nlkv, lkv, fits)
    if cfg.figures:
        fig_dir = cfg.out_dir / "figures"
        report.render_field_figures(fig_dir, parts)
        report.render_sample_figures(fig_dir, nlkv, lkv, fits)
    logger.info("pipeline complete: artifacts in %s", cfg.out_dir)


STAGES = {
    "ingest": stage_ingest,
    "synth": stage_synth,
    "fields": stage_fields,
    "samples": stage_samples,
    "fit": stage_fit,
    "compare": stage_compare,
    "diagnose": stage_diagnose,
    "run": stage_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _configure(args)
        STAGES[args.command](cfg)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DegenerateSampleError as exc:
        logger.error("fit degeneracy in stage %r: %s", args.command, exc)
        return EXIT_DEGENERATE
    except (IngestError, DataError) as exc:
        logger.error("data error in stage %r: %s", args.command, exc)
        return EXIT_DATA
    except ValueError as exc:
        logger.error("data error in stage %r: %s", args.command, exc)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("internal error in stage %r: %s", args.command, exc)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
