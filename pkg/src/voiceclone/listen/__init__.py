from .plan import (
    DEFAULT_COUNTS,
    PlanError,
    PlanItem,
    SCENARIO_NAMES,
    SCENARIO_OVERVIEWS,
    SCENARIO_TABLE,
    TestPlan,
    content_hash,
    create_plan_from_table3,
    load_plan,
    save_plan,
)
from .service import (
    DuplicateSubmitError,
    InvalidRatingError,
    ListenService,
    UnknownSessionError,
    WrongItemError,
)

__all__ = [
    "DEFAULT_COUNTS",
    "PlanError",
    "PlanItem",
    "SCENARIO_NAMES",
    "SCENARIO_OVERVIEWS",
    "SCENARIO_TABLE",
    "TestPlan",
    "content_hash",
    "create_plan_from_table3",
    "load_plan",
    "save_plan",
    "DuplicateSubmitError",
    "InvalidRatingError",
    "ListenService",
    "UnknownSessionError",
    "WrongItemError",
]
