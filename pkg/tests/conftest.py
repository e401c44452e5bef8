import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run the training reproductions"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long stochastic training runs")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# Every size with at most this many cells is covered by the exhaustive oracles.
EXHAUSTIVE_CELLS = 12


@pytest.fixture(scope="session")
def bs_bruteforce_values():
    """Brute-force value of the Bars & Stripes automaton on every small binary picture."""
    from gwm_pictures.languages import all_pictures
    from gwm_pictures.wpa import bars_stripes_automaton, evaluate_bruteforce

    automaton = bars_stripes_automaton()
    return {
        picture: evaluate_bruteforce(automaton, picture)
        for m in range(1, 5)
        for n in range(1, 5)
        if m * n <= EXHAUSTIVE_CELLS
        for picture in all_pictures(m, n)
    }
