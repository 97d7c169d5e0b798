from .register import (
    Matches,
    RegistrationResult,
    associate,
    condition_number,
    register,
    translation_condition,
)
from .surfels import SurfelLevel, SurfelMap, build_surfel_map

__all__ = [
    "Matches",
    "RegistrationResult",
    "associate",
    "condition_number",
    "register",
    "translation_condition",
    "SurfelLevel",
    "SurfelMap",
    "build_surfel_map",
]
