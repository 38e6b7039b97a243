import numpy as np
import pytest

from bgrppg.stmap import VideoClip, mock_landmarks, region_partition


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def landmarks():
    return mock_landmarks((64.0, 64.0), 40.0)


@pytest.fixture(scope="session")
def partition(landmarks):
    return region_partition(landmarks, (128, 128))


def uniform_clip(rgb, n=4, h=128, w=128, fps=25.0):
    frames = np.empty((n, h, w, 3), dtype=np.uint8)
    frames[...] = np.asarray(rgb, dtype=np.uint8)
    return VideoClip(frames, fps)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get(
        "tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
