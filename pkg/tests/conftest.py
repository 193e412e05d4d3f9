import numpy as np
import pytest

from fourwire import fixtures


@pytest.fixture
def f1():
    return fixtures.f1()


@pytest.fixture
def f1_grounded():
    return fixtures.f1(ground_all=True)


@pytest.fixture
def f1_dg():
    return fixtures.f1(with_dg=True)


@pytest.fixture
def f2():
    return fixtures.f2()


@pytest.fixture
def f3():
    return fixtures.f3()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def max_voltage_dev(sys_a, x_a, sys_b, x_b, skip_labels=()):
    """Largest per-unit voltage phasor difference over shared terminals."""
    vm_a = sys_a.meta["varmap"]
    vm_b = sys_b.meta["varmap"]
    dev = 0.0
    for key in vm_a.c:
        if key[0] != "U" or key[2] in skip_labels:
            continue
        if vm_b.has(key):
            dev = max(dev, abs(vm_a.c[key].value(x_a) - vm_b.c[key].value(x_b)))
    return dev
