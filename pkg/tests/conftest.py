import csv
from pathlib import Path

import pytest

from dqdquapi.bath import BathSpec, Family, SpectralDensityModel

PUBLISHED_T_MK = 30.0
PUBLISHED_OMEGA_D = 0.02
G_PZ = 0.035
G_DF = 0.029


def reference_bath(family, omega_l=0.5, g=None, temperature_mK=PUBLISHED_T_MK):
    if g is None:
        g = G_PZ if family is Family.PIEZOELECTRIC else G_DF
    model = SpectralDensityModel(family, g, PUBLISHED_OMEGA_D, omega_l)
    return BathSpec.from_temperature(model, temperature_mK)


@pytest.fixture(scope="session")
def pz_bath():
    return reference_bath(Family.PIEZOELECTRIC)


@pytest.fixture(scope="session")
def df_bath():
    return reference_bath(Family.DEFORMATION)


@pytest.fixture(scope="session")
def null_bath():
    return reference_bath(Family.PIEZOELECTRIC, g=0.0)


# acceptance bookkeeping: checks[criterion] -> [(label, ok, detail)]
ACCEPTANCE = {}
DISCREPANCIES = []
REPORT_DIR = Path(__file__).resolve().parent.parent / "reports"


def record(criterion, title, label, ok, detail):
    ACCEPTANCE.setdefault((criterion, title), []).append((label, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} criterion {criterion} [{label}]: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    lines = []
    for (criterion, title), checks in sorted(ACCEPTANCE.items()):
        ok = all(c[1] for c in checks)
        failed = [c[0] for c in checks if not c[1]]
        tail = f" (failing: {', '.join(failed)})" if failed else ""
        lines.append(f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {title}"
                     f" [{len(checks) - len(failed)}/{len(checks)} checks]{tail}")
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
    REPORT_DIR.mkdir(exist_ok=True)
    (REPORT_DIR / "acceptance.txt").write_text("\n".join(lines) + "\n")
    if DISCREPANCIES:
        with open(REPORT_DIR / "discrepancies.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("quantity", "reference_ps", "computed_ps", "relative_deviation",
                        "note"))
            w.writerows(DISCREPANCIES)
        terminalreporter.section("discrepancy table")
        for row in DISCREPANCIES:
            terminalreporter.write_line(" | ".join(str(x) for x in row))
