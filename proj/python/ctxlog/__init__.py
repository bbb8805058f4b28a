"""Python access to the ctxlog core."""

import json
from os import PathLike

from ._ctxlog import (
    BpeVocab,
    CalibrationStats,
    CtxlogError,
    fit_bpe,
    fit_calibration,
    lower_median,
    nearest_rank,
    point_scores,
    stage_names,
    symmetric_info_nce,
    synthesize,
)
from ._ctxlog import run_stage as _run_stage

__all__ = [
    "BpeVocab",
    "CalibrationStats",
    "CtxlogError",
    "fit_bpe",
    "fit_calibration",
    "lower_median",
    "nearest_rank",
    "point_scores",
    "run_stage",
    "stage_names",
    "symmetric_info_nce",
    "synthesize",
]


def run_stage(name: str, config: str | PathLike | None = None, overrides: dict | None = None) -> dict:
    """Run one pipeline stage and return its summary.

    `overrides` maps dotted keys to values, e.g. {"train.max_epochs": 1}.
    """
    sets = [f"{k}={json.dumps(v)}" for k, v in (overrides or {}).items()]
    return json.loads(_run_stage(name, str(config) if config else "", sets))
