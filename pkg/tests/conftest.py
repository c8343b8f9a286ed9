import pytest
import torch

from segparse.synth import default_rules, generate

torch.set_num_threads(1)

@pytest.fixture(scope="session")
def rules():
    return default_rules()


@pytest.fixture(scope="session")
def synth_small(rules):
    return generate(rules, 300, 3, seed=11)
