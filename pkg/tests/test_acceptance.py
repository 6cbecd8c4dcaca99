"""Acceptance criteria at full scale, one test per criterion.

Each test prints a ``[PASS]`` or ``[FAIL]`` line with the per-check detail.
The sweep artifacts of criterion 9 are kept in ``artifacts/`` at the
repository root.  Tolerances live in :mod:`immunebranch.validation` and are
not adjusted here.
"""

from pathlib import Path

import pytest

from immunebranch.validation import CRITERIA, ValidationConfig, run_criterion

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    cfg = ValidationConfig(seed=0, out_dir=ARTIFACTS)
    result = run_criterion(number, cfg)
    with capsys.disabled():
        print()
        print(result.line())
        for c in result.checks:
            print(f"    {'ok ' if c.passed else 'BAD'} {c.name}: {c.detail}")
    failed = [f"{c.name}: {c.detail}" for c in result.checks if not c.passed]
    assert result.passed, "; ".join(failed)
