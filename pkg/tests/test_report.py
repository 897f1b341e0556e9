import json
import math

import pytest

from kactransport.report import Entry, RateReport, RateRow, StatReport, skipped


def test_verdicts():
    assert Entry("a", 1.0, 1.1, 0.2, "abs", 1, 0).verdict == "pass"
    assert Entry("a", 1.0, 1.3, 0.2, "abs", 1, 0).verdict == "fail"
    assert Entry("b", 1.0, 0.9, 0.05, "le", 1, 0).verdict == "fail"
    assert Entry("c", 1.0, 1.05, 0.05, "ge", 1, 0).verdict == "pass"
    assert Entry("d", 0.0, None, 0.01, "p_ge", 1, 0, p_value=0.5).verdict == "pass"
    assert Entry("e", 0.0, None, 0.01, "p_lt", 1, 0, p_value=0.5).verdict == "fail"
    assert Entry("f", float("nan"), 0.0, 1.0, "abs", 1, 0).verdict == "fail"
    assert Entry("g", 0.0, None, None, "true", 1, 0).verdict == "fail"
    with pytest.raises(ValueError):
        Entry("h", 0.0, 0.0, 0.0, "approx", 1, 0)


def test_verdict_cannot_be_forced():
    assert Entry("a", 2.0, 1.0, 0.1, "abs", 1, 0, verdict="pass").verdict == "fail"


def test_json_roundtrip_and_no_nan():
    r = StatReport([Entry("a", float("inf"), 0.0, 1.0, "abs", 3, 1), skipped("b", "degenerate")], {"seed": 1})
    text = r.to_json()
    data = json.loads(text)
    assert data["entries"][0]["estimate"] is None
    back = StatReport.from_dict(data)
    assert back.to_json() == text
    assert not r.ok and len(r.failed) == 1
    assert "2 checks, 1 failed" in r.table()


def test_rate_rows_must_decrease():
    row = lambda e: RateRow(e, 100, {}, {}, {})
    RateReport([row(0.2), row(0.1)], "pass", 0.1, 1)
    with pytest.raises(ValueError):
        RateReport([row(0.1), row(0.2)], "pass", 0.1, 1)
