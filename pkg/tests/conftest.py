import pytest

TINY_TOML = """
[run]
seed = 3
coverage_samples = 2000

[data]
n_train = 500
n_test = 100

[gan]
n_epochs = 2
batches_per_epoch = 10
saves_per_epoch = 5
generator_hidden = [8]
critic_hidden = [8]
generator_offset = 2.0

[detector]
steps = 30
hidden = [8]
"""


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    if module is None or not module.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.REPORT, key=lambda s: int(s.split()[2])):
        terminalreporter.write_line(line)
