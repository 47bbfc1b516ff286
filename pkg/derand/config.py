import dataclasses as dc
import logging
import math
from enum import Enum
from typing import Any, Self

from dataclasses_json import dataclass_json

from derand.error import InvalidArgument

logger = logging.getLogger(__name__)

class ConstantProfile (str, Enum):
    """
    Named sets of constants for the walk engine and its wrappers
    """
    PAPER: str = "paper"
    PRACTICAL: str = "practical"

PROFILE_DEFAULTS: dict[ConstantProfile, dict[str, Any]] = {
    ConstantProfile.PAPER: {
        "lambda_divisor": 1e8,
        "bucket_lambda_divisor": 1e6,
        "psi_weight_divisor": 1e30,
        "horizon": 100.0,
        "deviation_fraction": 1 / 1000,
        "recursion_shrink": 0.997,
        "failure_constant": 10.0,
        "small_k_exponent": 3,
        "inflate_granularity": True,
        "partition_min_factor": 200.0,
    },
    ConstantProfile.PRACTICAL: {
        "lambda_divisor": 8.0,
        "bucket_lambda_divisor": 4.0,
        "psi_weight_divisor": 30.0,
        "horizon": 4.0,
        "deviation_fraction": 1.0,
        "recursion_shrink": 1.0,
        "failure_constant": 4.0,
        "small_k_exponent": 1,
        "inflate_granularity": False,
        "partition_min_factor": 20.0,
    },
}

@dataclass_json
@dc.dataclass
class FixingConfig:
    """
    Constants and execution options shared by every rounding routine.
    Defaults are the ``paper`` profile; use :meth:`for_profile` for the others.
    """
    profile: ConstantProfile = dc.field(default=ConstantProfile.PAPER)
    "Profile the constants were taken from"
    lambda_divisor: float = dc.field(default=1e8)
    "Divisor in the row multiplier lambda_i"
    bucket_lambda_divisor: float = dc.field(default=1e6)
    "Divisor in the bucket multiplier lambda'_beta"
    psi_weight_divisor: float = dc.field(default=1e30)
    "Divisor in the bucket weight exp(-min(|B|, k) / divisor)"
    horizon: float = dc.field(default=100.0)
    "Walk length factor, T = horizon * k^2"
    deviation_fraction: float = dc.field(default=1 / 1000)
    "Allowed partial-fix deviation as a fraction of Delta_i"
    recursion_shrink: float = dc.field(default=0.997)
    "Budget factor applied at every level of the integral recursion"
    failure_constant: float = dc.field(default=10.0)
    "The global constant c of the failure bounds"
    small_k_exponent: int = dc.field(default=3)
    "Granularity used by a subsampling level, k_small = k ** exponent"
    inflate_granularity: bool = dc.field(default=True)
    "Use k' = ceil(c^2 log(2nm)) k in the concentration wrappers"
    partition_min_factor: float = dc.field(default=200.0)
    "Minimum partition set size as a multiple of ln(n)"
    threads: int = dc.field(default=1)
    "Worker threads for the seed search"
    early_exit: bool = dc.field(default=False)
    "Stop the walk as soon as no column is moving"

    def __post_init__ (self):
        self.profile = ConstantProfile(self.profile)

        positive = (
            "lambda_divisor", "bucket_lambda_divisor", "psi_weight_divisor", "horizon",
            "deviation_fraction", "recursion_shrink", "failure_constant"
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive, got {getattr(self, name)}")

        if self.small_k_exponent < 1:
            raise InvalidArgument("small_k_exponent must be at least 1")

        if self.threads < 1:
            raise InvalidArgument("threads must be at least 1")

        if self.recursion_shrink > 1:
            logger.warning("recursion_shrink above 1 lets budgets grow between levels.")

        if self.failure_constant < 1:
            logger.warning("failure_constant below 1 makes every failure bound vacuous.")

    @classmethod
    def for_profile (cls, profile: ConstantProfile | str, **overrides: Any) -> Self:
        """
        Builds a config from a named profile.

        :param profile: Profile name or member
        :param overrides: Fields replacing the profile values
        :return: Validated config
        """
        try:
            profile = ConstantProfile(profile)

        except ValueError:
            raise InvalidArgument(f"Unknown constant profile {profile!r}") from None

        values = { **PROFILE_DEFAULTS[profile], **overrides }

        return cls(profile=profile, **values)

    def steps (self, k: int) -> int:
        """
        Walk length T for granularity k.
        """
        return max(1, math.ceil(self.horizon * k * k))
