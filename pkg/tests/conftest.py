import pytest

# key -> (label, passed, detail), filled in by tests marked ``acceptance(key, label)``
_VERDICTS: dict = {}


def _mark(item):
    m = item.get_closest_marker("acceptance")
    return (m.args[0], m.args[1]) if m is not None and len(m.args) >= 2 else None


@pytest.fixture
def verdict(request):
    """Record the outcome of the acceptance check run by the calling test."""
    key, label = _mark(request.node)

    def record(passed: bool, detail: str = ""):
        _VERDICTS[key] = (label, bool(passed), detail)
        return bool(passed)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mk = _mark(item)
    if mk is None or rep.when != "call":
        return
    key, label = mk
    if rep.failed and key not in _VERDICTS:
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed"
        _VERDICTS[key] = (label, False, f"error: {msg[:120]}")
    elif rep.failed and _VERDICTS[key][1]:
        _VERDICTS[key] = (label, False, _VERDICTS[key][2] + " (a later assertion failed)")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance summary")
    for key in sorted(_VERDICTS):
        label, ok, detail = _VERDICTS[key]
        terminalreporter.write_line(f"[{key}] {'PASS' if ok else 'FAIL'}  {label}  {detail}".rstrip())
    n_ok = sum(v[1] for v in _VERDICTS.values())
    terminalreporter.write_line(f"{n_ok}/{len(_VERDICTS)} acceptance checks passed")
