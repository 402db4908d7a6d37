from pathlib import Path

import pytest

from pixeldig.mock_archive import MockArchive

FIXTURES = Path(__file__).parent / "fixtures"


class FakeClock:
    """Deterministic monotonic clock whose sleep() advances time."""

    def __init__(self, start: float = 1000.0):
        self.now = start
        self.sleeps: list[float] = []

    def monotonic(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self.now += seconds


@pytest.fixture
def mock_archive():
    archive = MockArchive()
    archive.start()
    yield archive
    archive.stop()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
