from pathlib import Path

import numpy as np
import pytest

from tdpaf import Cohort, Event, PatientRecord, TimeGrid

GOLDEN = Path(__file__).parent / "golden"

D, R = Event.DEATH, Event.DISCHARGE


def toy_records():
    """Six patients, horizon 6; C and E infected without recorded follow-up."""
    return [
        PatientRecord("A", None, 1, D),
        PatientRecord("B", None, 6, D),
        PatientRecord("C", 2),
        PatientRecord("D", None, 3, D),
        PatientRecord("E", 4),
        PatientRecord("F", at_risk_beyond_horizon=True),
    ]


def toy_cohort():
    return Cohort.from_records(toy_records(), TimeGrid(6))


def random_records(rng, n, J, full_followup=False, p_infect=0.35, p_beyond=0.15):
    """Random patients on ``0..J``; day-0 events and ties are allowed."""
    recs = []
    for i in range(n):
        pid = f"p{i}"
        infected = rng.random() < p_infect
        C = int(rng.integers(0, J + 1)) if infected else None
        if rng.random() < p_beyond:
            # still hospitalized after J (an infected patient stays infected)
            recs.append(PatientRecord(pid, C, at_risk_beyond_horizon=True))
            continue
        if infected and not full_followup and rng.random() < 0.5:
            recs.append(PatientRecord(pid, C))
            continue
        lo = 0 if C is None else C
        T = int(rng.integers(lo, J + 1))
        recs.append(PatientRecord(pid, C, T, D if rng.random() < 0.4 else R))
    return recs


def random_cohort(rng, n_max=12, J_max=8, full_followup=False):
    n = int(rng.integers(1, n_max + 1))
    J = int(rng.integers(1, J_max + 1))
    return Cohort.from_records(random_records(rng, n, J, full_followup), TimeGrid(J))


def write_patients_csv(path, rows, header="patient_id,infection_day,terminal_day,terminal_type"):
    path = Path(path)
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def toy():
    return toy_cohort()


@pytest.fixture
def toy_csv():
    return GOLDEN / "toy_patients.csv"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
