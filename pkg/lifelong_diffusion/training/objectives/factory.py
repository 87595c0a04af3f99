"""
Factory for creating training objectives
"""
import logging
from typing import Dict, List, Type

from ...config import LossWeights, TrainConfig
from ...diffusion.schedule import NoiseSchedule
from ...errors import ConfigError
from .base import TrainingObjective
from .l2dm import LifelongObjective
from .pdm import PriorPreservationObjective

_LOGGER = logging.getLogger(__name__)


class ObjectiveFactory:
    """Factory for creating training objectives."""

    _objectives: Dict[str, Type[TrainingObjective]] = {
        "pdm": PriorPreservationObjective,
        "l2dm": LifelongObjective,
    }

    @classmethod
    def register_objective(
        cls, name: str, objective_class: Type[TrainingObjective]
    ) -> None:
        """Register a new objective."""
        cls._objectives[name] = objective_class

    @classmethod
    def create_objective(
        cls,
        objective_name: str,
        weights: LossWeights,
        schedule: NoiseSchedule,
        **kwargs,
    ) -> TrainingObjective:
        """Create an objective instance."""
        if objective_name not in cls._objectives:
            available = ", ".join(cls._objectives.keys())
            raise ConfigError(
                "train.objective",
                f"Unknown objective '{objective_name}'. Available: {available}",
            )

        objective_class = cls._objectives[objective_name]
        return objective_class(weights, schedule, **kwargs)

    @classmethod
    def get_available_objectives(cls) -> List[str]:
        """Get list of available objective names."""
        return list(cls._objectives.keys())


def select_objective(
    task_index: int, train: TrainConfig, weights: LossWeights, schedule: NoiseSchedule
) -> TrainingObjective:
    """Prior preservation for the first task, the lifelong objective afterwards."""
    if task_index == 1:
        return ObjectiveFactory.create_objective("pdm", weights, schedule)
    return ObjectiveFactory.create_objective(
        "l2dm", weights, schedule, use_tame=train.use_tame, use_ecd=train.use_ecd
    )
