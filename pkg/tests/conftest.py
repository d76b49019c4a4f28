import pytest

from credrank.synth import SynthConfig, generate

SMALL_WORLD = SynthConfig(seed=3, n_topics=5, vocab_size=120, n_docs=400, doc_length=30,
                          n_companies=40, n_rated=15, n_raters=10, max_investigations=6,
                          stray_investigations=3)


@pytest.fixture(scope="session")
def small_world():
    return generate(SMALL_WORLD)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
