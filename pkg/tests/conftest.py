import sys

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """2 subjects x 4 instances x 6 samples on the ROI layout."""
    from fkpfusion.dataset import SyntheticConfig, generate_synthetic

    out = tmp_path_factory.mktemp("synth_small")
    return generate_synthetic(SyntheticConfig(num_subjects=2, samples_per_class=6, seed=42), out)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
