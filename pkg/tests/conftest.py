import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tsbench.tsf import make_dataset, serialize_tsf  # noqa: E402


def hospital_like_text(seed: int = 0) -> str:
    """767 monthly count series of length 84, written as a .tsf document."""
    rng = np.random.default_rng(seed)
    level = rng.gamma(2.0, 40.0, size=(767, 1))
    season = 1 + 0.2 * np.sin(2 * np.pi * np.arange(84) / 12 + rng.uniform(0, 2 * np.pi, (767, 1)))
    counts = rng.poisson(level * season)
    lines = [
        "# hospital-shaped synthetic fixture",
        "@relation hospital",
        "@attribute series_name string",
        "@attribute start_timestamp date",
        "@frequency monthly",
        "@horizon 12",
        "@missing false",
        "@equallength true",
        "@data",
    ]
    for i, row in enumerate(counts):
        lines.append(f"T{i + 1}:2000-01-01 00-00-00:" + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def hospital_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "hospital.tsf"
    path.write_text(hospital_like_text())
    return path


def linear_dataset(n_series=5, length=100, horizon=4):
    return make_dataset(
        [np.arange(length, dtype=float) * (1 + 0.25 * i) + 10 * i for i in range(n_series)],
        frequency="yearly",
        horizon=horizon,
        name="line",
    )


def seasonal_dataset(n_series=20, length=240, period=7, noise=0.1, seed=0):
    """Daily-period sine plus Gaussian noise; the period fits inside C=7."""
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    vals = [
        5 + np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi)) + rng.normal(0, noise, length)
        for _ in range(n_series)
    ]
    return make_dataset(vals, frequency="daily", horizon=period, name="sine")


@pytest.fixture
def toy_tsf(tmp_path):
    rng = np.random.default_rng(1)
    ds = make_dataset(
        [np.arange(40) * 0.5 + rng.normal(0, 0.1, 40) + i for i in range(3)], "yearly", horizon=3, name="toy"
    )
    path = tmp_path / "toy.tsf"
    path.write_text(serialize_tsf(ds))
    return path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
