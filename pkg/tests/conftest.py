import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "amdn", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("amdn")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def textured(shape, seed=0, sigma=3.0):
    """Smooth periodic random texture in roughly [0, 255]."""
    g = np.random.default_rng(seed)
    h, w = shape
    noise = g.standard_normal(shape)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    k = np.exp(-2.0 * (np.pi * sigma) ** 2 * (fx**2 + fy**2))
    f = np.real(np.fft.ifft2(np.fft.fft2(noise) * k))
    f = (f - f.min()) / (f.max() - f.min())
    return 255.0 * f


_criteria = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or report.when not in ("setup", "call"):
        return
    n, title = marker
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "seconds": 0.0})
    entry["seconds"] += report.duration
    if not report.passed:
        entry["ok"] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {e['title']} ({e['seconds']:.1f} s)")
