"""One test per acceptance criterion; each prints its PASS/FAIL line."""
import pytest

from ldforge import verify


@pytest.mark.parametrize("criterion", sorted(verify.CHECKS))
def test_criterion(criterion, capsys):
    result = verify.run_check(criterion)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
