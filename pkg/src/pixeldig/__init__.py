"""Toolchain for reconstructing, parsing, and analyzing historical Meta
Pixel configurations from web-archive snapshots."""

from .archive import ArchiveClient, FetchPolicy, SnapshotRecord, select_semiannual
from .behavior import (
    BehaviorDelta,
    Button,
    EventPayload,
    PageContext,
    apply_protected_mode,
    apply_unwanted_data,
    diff_payloads,
    find_circumvented_payloads,
    hash_match_value,
    patch_out,
    simulate,
)
from .configscript import (
    EstRule,
    PixelConfiguration,
    UnwantedDataRules,
    config_feature_vector,
    parse_config_script,
)
from .cracker import CrackResult, build_dictionary, crack
from .pixels import extract_pixel_ids, strip_archive_rewrites
from .stats import (
    CohortYearStat,
    SiteYearFeatures,
    adoption_stats,
    cohens_h,
    key_overlap_cdf,
    stable_cohort,
    two_proportion_z,
)
from .store import SiteYearObservation, SnapshotStore, attribute_configs

__version__ = "0.1.0"

__all__ = [
    "ArchiveClient",
    "BehaviorDelta",
    "Button",
    "CohortYearStat",
    "CrackResult",
    "EstRule",
    "EventPayload",
    "FetchPolicy",
    "PageContext",
    "PixelConfiguration",
    "SiteYearFeatures",
    "SiteYearObservation",
    "SnapshotRecord",
    "SnapshotStore",
    "UnwantedDataRules",
    "adoption_stats",
    "apply_protected_mode",
    "apply_unwanted_data",
    "attribute_configs",
    "build_dictionary",
    "cohens_h",
    "config_feature_vector",
    "crack",
    "diff_payloads",
    "extract_pixel_ids",
    "find_circumvented_payloads",
    "hash_match_value",
    "key_overlap_cdf",
    "parse_config_script",
    "patch_out",
    "select_semiannual",
    "simulate",
    "stable_cohort",
    "strip_archive_rewrites",
    "two_proportion_z",
    "__version__",
]
