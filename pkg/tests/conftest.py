import pytest

from clustervote.protocol import BallotPool, ClusterConfig, VBallotId

N, R = 0, 1
CASE1_ROWS = [
    ["N2", "N1", "N6", "R3"],
    ["R1", "R8", "R4", "N5"],
    ["N8", "N3", "R2", "R7"],
]

ACCEPTANCE_LINES: list[str] = []


def bid(label: str) -> VBallotId:
    """``N4`` -> VBallotId(0, 4), ``R4`` -> VBallotId(1, 104); readable worked-example ids."""
    if label[0] == "N":
        return VBallotId(N, int(label[1:]))
    return VBallotId(R, 100 + int(label[1:]))


def case1_pool() -> BallotPool:
    return BallotPool.from_ids({N: [bid(f"N{i}") for i in range(1, 9)],
                                R: [bid(f"R{i}") for i in range(1, 9)]})


def case1_script(rows=CASE1_ROWS) -> dict:
    return {(r, p): bid(label) for r, row in enumerate(rows) for p, label in enumerate(row)}


@pytest.fixture
def case1_config():
    return ClusterConfig(sc=4, ao=2, k=1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
