from photonfilter.validate import CHECKS, check_duality


def test_every_check_passes():
    for check in CHECKS:
        result = check()
        assert result.passed, result.line()


def test_report_line_format():
    line = check_duality().line()
    assert line.startswith("PASS  duality:")
