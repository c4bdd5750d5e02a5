import numpy as np
import pytest

import setvalued_id as sv


@pytest.fixture(scope="session")
def paper_system() -> sv.SystemModel:
    return sv.SystemModel(theta=[3.0, -1.0], thresholds=[1.0],
                          noise=sv.NoiseModel.gaussian(25.0))


def paper_plan(length: int, dither: float = 0.1, seed: int = 20230) -> sv.InputPlan:
    return sv.InputPlan(kind="cyclic_dither", base_pattern=[-1.0, 2.0, 0.0],
                        dither_halfwidth=dither, length=length, seed=seed)


def paper_policy() -> sv.StepPolicy:
    return sv.StepPolicy(kind="harmonic", beta=20.0, k0=20)


PAPER_INIT = np.array([1.0, 1.0])
