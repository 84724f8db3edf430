import numpy as np
import pytest

from photonlat.evolution import propagate
from photonlat.lattice import (CouplingModel, LatticeSpec, build_lattice,
                               default_heater_bank)


def make_device(seed=7, power_seed=11, n_steps=512):
    """Standard 32-mode device with random heater powers."""
    layout = build_lattice(LatticeSpec(seed=seed))
    model = CouplingModel()
    powers = np.random.default_rng(power_seed).uniform(0.0, 500.0, 16)
    bank = default_heater_bank(layout, powers)
    unitary = propagate(layout, model, bank, n_steps=n_steps)
    return layout, model, bank, unitary


@pytest.fixture(scope="session")
def device():
    return make_device()


@pytest.fixture(scope="session")
def device_unitary(device):
    return device[3].entries
