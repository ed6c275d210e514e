"""Shared fixtures: the simulated-vehicle parameter set and its envelopes."""

import numpy as np
import pytest

from gcmpc.tires import TireParams, TireUncertaintySet, force_envelope
from gcmpc.vehicle import VehicleParams


def make_vehicle(stiff_unc=0.20, ratio_unc=0.10, mu_unc=0.10):
    """The benchmark vehicle: 1231 kg compact car, stiffer rear axle."""
    m, a, b, g = 1231.0, 1.07, 1.40, 9.81
    fzf = m * g * b / (a + b)
    fzr = m * g * a / (a + b)
    bounds = (stiff_unc, ratio_unc, mu_unc)
    front = TireUncertaintySet(TireParams(100000.0, 0.8, 1.0, fzf), bounds)
    rear = TireUncertaintySet(TireParams(130000.0, 0.8, 1.0, fzr), bounds)
    return VehicleParams(
        mass=m, yaw_inertia=2034.5, dist_front=a, dist_rear=b,
        front_tires=front, rear_tires=rear, gravity=g,
    )


@pytest.fixture(scope="session")
def vehicle():
    return make_vehicle()


@pytest.fixture(scope="session")
def vehicle_certain():
    return make_vehicle(0.0, 0.0, 0.0)


@pytest.fixture(scope="session")
def envelopes(vehicle):
    return (force_envelope(vehicle.front_tires), force_envelope(vehicle.rear_tires))


@pytest.fixture(scope="session")
def envelopes_certain(vehicle_certain):
    return (force_envelope(vehicle_certain.front_tires),
            force_envelope(vehicle_certain.rear_tires))
