"""Stage orchestration shared by the CLI and the validation harness."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

from .anticipation import (
    LkvSample,
    NlkvSample,
    anticipated_density_field,
    assemble_lkv,
    assemble_nlkv,
    attach_accelerations,
)
from .fields import (
    GridSpec,
    MacroField,
    SignField,
    estimate_acceleration_field,
    estimate_vk_fields,
    label_signs,
)
from .ingest import TrajectorySet, segment_contiguous

logger = logging.getLogger(__name__)

DEFAULT_ZERO_TOL = 1e-9
DEFAULT_GAP_THRESHOLD = 60.0


@dataclass
class SegmentFields:
    """All macroscopic fields estimated on one contiguous segment."""

    V: MacroField
    K: MacroField
    A: MacroField
    signs: SignField
    K_a: MacroField


def fields_for_set(tset: TrajectorySet, spec: GridSpec, zero_tol: float = DEFAULT_ZERO_TOL,
                   x0: Optional[float] = None, X: Optional[float] = None) -> SegmentFields:
    """Estimate speed, density, acceleration, sign, and anticipated-density
    fields for one contiguous trajectory set."""
    V, K = estimate_vk_fields(tset, spec, x0=x0, X=X)
    A = estimate_acceleration_field(V, spec)
    signs = label_signs(A, zero_tol)
    K_a = anticipated_density_field(K, V, spec)
    return SegmentFields(V=V, K=K, A=A, signs=signs, K_a=K_a)


def segment_fields(tset: TrajectorySet, spec: GridSpec,
                   zero_tol: float = DEFAULT_ZERO_TOL,
                   gap_threshold: Optional[float] = DEFAULT_GAP_THRESHOLD,
                   ) -> list[SegmentFields]:
    """Split on time gaps, estimate fields per segment on one shared spatial
    grid, and return the per-segment fields in time order."""
    segments = segment_contiguous(tset, gap_threshold) if gap_threshold else [tset]
    x0 = tset.x_min
    X = tset.x_max - x0
    out = []
    for idx, seg in enumerate(segments):
        if seg.T < spec.dt:
            logger.warning("segment %d spans only %.1f s (< dt=%.1f s); skipped",
                           idx, seg.T, spec.dt)
            continue
        out.append(fields_for_set(seg, spec, zero_tol, x0=x0, X=X))
    if not out:
        raise ValueError("no segment is long enough for the grid")
    return out


def collect_samples(parts: list[SegmentFields], min_samples: int = 100,
                    ) -> tuple[list[NlkvSample], list[LkvSample]]:
    """Assemble and concatenate NLKV and LKV samples across segments."""
    nlkv: list[NlkvSample] = []
    lkv: list[LkvSample] = []
    for part in parts:
        seg_nlkv = assemble_nlkv(part.K_a, part.V, part.signs, min_samples=0)
        nlkv.extend(attach_accelerations(seg_nlkv, part.A))
        lkv.extend(assemble_lkv(part.K, part.V, min_samples=0))
    if len(nlkv) < min_samples:
        logger.warning("only %d NLKV samples across all segments (minimum %d expected)",
                       len(nlkv), min_samples)
    return nlkv, lkv
