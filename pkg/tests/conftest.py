import numpy as np
import pytest

from geotagger.sfm.geometry import exp_so3
from geotagger.synth import SynthConfig, make_scene

K_DEFAULT = np.array([[320.0, 0.0, 320.0], [0.0, 320.0, 320.0], [0.0, 0.0, 1.0]])


def rot_y(deg):
    """Rotation about the camera y (down) axis, i.e. a yaw of the view."""
    return exp_so3(np.array([0.0, np.radians(deg), 0.0]))


def two_view_pixels(R, t, n=20, seed=0, K=K_DEFAULT):
    """Random points in front of camera a, imaged by a = [I|0] and b = [R|t]."""
    rng = np.random.default_rng(seed)
    out_a, out_b = [], []
    while len(out_a) < n:
        X = np.array([rng.uniform(-4, 4), rng.uniform(-3, 3), rng.uniform(4, 14)])
        Xb = R @ X + t
        if Xb[2] < 1.0:
            continue
        pa = K @ (X / X[2])
        pb = K @ (Xb / Xb[2])
        out_a.append(pa[:2])
        out_b.append(pb[:2])
    return np.hstack([np.array(out_a), np.array(out_b)])


@pytest.fixture(scope="session")
def clean_scene():
    return make_scene(SynthConfig())


@pytest.fixture(scope="session")
def noisy_scene():
    return make_scene(SynthConfig(n_cameras=12, gps_noise=2.0, heading_noise=5.0, seed=0))


# -- acceptance reporting --------------------------------------------------------

_criteria: dict[int, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _criteria.setdefault(mark.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok = all(_criteria[n])
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}")
