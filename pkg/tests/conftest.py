import numpy as np
import pytest

from pegelab.estimator import TruncationSpec
from pegelab.model import ParamBox, example_cost, example_theta
from pegelab.pege import PegeConfig, PegeSchedule
from pegelab.policies import ExplorationSpec
from pegelab.sde import TimeGrid

EXAMPLE_BOX = ParamBox(np.array([[-0.5, 0.5, 0.5]]), np.array([[0.5, 1.5, 1.5]]))


def example_config(**kw):
    base = dict(theta=example_theta(), cost=example_cost(), grid=TimeGrid(1.0, 200),
                theta0_hat=np.zeros((1, 3)), V0=np.eye(3),
                truncation=TruncationSpec.around(EXAMPLE_BOX, 0.5),
                exploration=ExplorationSpec(np.eye(2), [0.0, 0.5, 1.0]),
                schedule=PegeSchedule("power", 1.0), n_episodes=20, box=EXAMPLE_BOX)
    base.update(kw)
    return PegeConfig(**base)


@pytest.fixture
def ex_config():
    return example_config
