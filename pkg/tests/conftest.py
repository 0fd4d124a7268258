import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "hdcal",
    max_examples=200,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("hdcal")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=["cython", "python"])
def kernels(request):
    """Both coordinate-descent backends, so every kernel test runs twice."""
    if request.param == "cython":
        cd = pytest.importorskip("hdcal._cd")
    else:
        from hdcal import _cd_py as cd
    return cd


def random_spd(rng, q, cond=50.0):
    a = rng.standard_normal((q, q))
    u, _ = np.linalg.qr(a)
    ev = np.geomspace(1.0, 1.0 / cond, q)
    return (u * ev) @ u.T
