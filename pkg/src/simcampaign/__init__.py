"""Simulation campaign toolchain: scenario generation, launching, result parsing and analysis."""

from .config import CampaignDef, load_campaign, materialize, parse_factors, parse_params
from .factors import (
    FactorDef,
    FactorSpace,
    RunPoint,
    count,
    expand,
    legacy_id,
    parse_predicate,
    run_key,
    select,
)

__version__ = "0.1.0"

__all__ = [
    "CampaignDef",
    "FactorDef",
    "FactorSpace",
    "RunPoint",
    "count",
    "expand",
    "legacy_id",
    "load_campaign",
    "materialize",
    "parse_factors",
    "parse_params",
    "parse_predicate",
    "run_key",
    "select",
]
