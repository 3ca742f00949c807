import numpy as np
import pytest

from genfl.core import Budget, ClientSelection, DeviceProfile, DevicePool


@pytest.fixture
def small_pool():
    return DevicePool(tuple(
        DeviceProfile(id=i, comm_latency_s=1.0 + i, comp_latency_s_per_epoch=0.5 + 0.25 * i,
                      comm_energy_j=2.0 + i, comp_energy_j_per_epoch=1.0 + 0.5 * i,
                      availability=(1.0, 1.2, 1.1))
        for i in range(6)))


@pytest.fixture
def budget():
    return Budget(latency_budget_s=10.0, energy_budget_j=60.0)


def random_pool(gen: np.random.Generator, n: int) -> DevicePool:
    return DevicePool(tuple(
        DeviceProfile(id=i,
                      comm_latency_s=float(gen.uniform(0.1, 5.0)),
                      comp_latency_s_per_epoch=float(gen.uniform(0.1, 3.0)),
                      comm_energy_j=float(gen.uniform(0.5, 10.0)),
                      comp_energy_j_per_epoch=float(gen.uniform(0.5, 6.0)),
                      availability=tuple(gen.uniform(0.5, 2.0, size=4)))
        for i in range(n)))


def random_selection(gen: np.random.Generator, pool_size: int, size: int | None = None) -> ClientSelection:
    if size is None:
        size = int(gen.integers(1, pool_size + 1))
    return ClientSelection(tuple(int(i) for i in gen.choice(pool_size, size=size, replace=False)))
