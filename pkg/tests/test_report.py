import json

import pytest

import reportcheck
from module.report import RunReport, all_passed, render, write_report


def _report(passed=True, outputs=None):
    report = RunReport("verify", ["verify", "marginals"], {"trials": 1000}, 7)
    return report.finish(outputs if outputs is not None else {"passed": passed}, passed)


# --- all_passed -------------------------------------------------------------


@pytest.mark.parametrize(
    "payload, expected",
    [
        ({}, True),
        ({"passed": True}, True),
        ({"passed": False}, False),
        ({"passed": None}, True),
        ({"outputs": {"points": [{"passed": True}, {"passed": None}]}}, True),
        ({"outputs": {"points": [{"passed": True}, {"passed": False}]}}, False),
        ({"passed": "yes"}, False),
        ([{"passed": True}, [{"passed": False}]], False),
    ],
    ids=["empty", "true", "false", "informational", "nested", "nested-failure", "not-a-bool", "lists"],
)
def test_all_passed_looks_at_every_flag(payload, expected):
    assert all_passed(payload) is expected


# --- Rendering and writing --------------------------------------------------


def test_a_report_echoes_what_is_needed_to_repeat_it():
    payload = _report().to_json()
    assert payload["format"] == 1
    assert payload["seed"] == 7
    assert payload["argv"] == ["verify", "marginals"]
    assert payload["params"] == {"trials": 1000}
    assert payload["wall_time"] >= 0


def test_rendering_is_stable_for_the_same_content():
    first, second = _report(), _report()
    second.wall_time = first.wall_time
    assert render(first) == render(second)
    assert render(first).endswith("}\n")


def test_a_report_without_a_verdict_has_no_passed_key():
    assert "passed" not in _report(passed=None, outputs={"terms": 3}).to_json()


def test_non_finite_numbers_are_refused():
    with pytest.raises(ValueError):
        render(_report(outputs={"value": float("inf")}))


def test_writing_replaces_the_file_whole(tmp_path):
    path = tmp_path / "report.json"
    path.write_text("stale", encoding="utf-8")
    write_report(_report(), str(path))
    assert json.loads(path.read_text(encoding="utf-8"))["command"] == "verify"
    assert not (tmp_path / "report.json.tmp").exists()


def test_without_a_path_the_report_goes_to_stdout(capsys):
    write_report(_report(), None)
    assert json.loads(capsys.readouterr().out)["seed"] == 7


# --- reportcheck ------------------------------------------------------------


def test_reportcheck_accepts_a_passing_report(tmp_path):
    path = tmp_path / "ok.json"
    write_report(_report(), str(path))
    assert reportcheck.check(str(path)) == 0


def test_reportcheck_rejects_a_failing_report(tmp_path):
    path = tmp_path / "failed.json"
    write_report(_report(passed=False), str(path))
    assert reportcheck.check(str(path)) == 1


@pytest.mark.parametrize("content", ["", "not json", "[1, 2]"], ids=["empty", "garbage", "array"])
def test_reportcheck_rejects_what_it_cannot_read(tmp_path, content):
    path = tmp_path / "broken.json"
    path.write_text(content, encoding="utf-8")
    assert reportcheck.check(str(path)) == 1


def test_reportcheck_rejects_a_missing_file(tmp_path):
    assert reportcheck.check(str(tmp_path / "absent.json")) == 1
