import pytest

from errors import ContinuationLostError, ValidationError
from log import LogManager, log_to
from retry_handler import create_continuation_retry_handler
from settings import SolverSettings


def test_defaults_and_clamping(isolated_settings):
    settings = SolverSettings()
    assert settings.file_name() == str(isolated_settings)
    assert settings.get_spectrum_points() == 2000
    settings.set_spectrum_points(1)
    assert settings.get_spectrum_points() == 2
    settings.set_max_halvings(99)
    assert settings.get_max_halvings() == 30


def test_values_persist_and_reset(isolated_settings):
    settings = SolverSettings()
    settings.set_newton_tolerance(1e-11)
    settings.sync()
    assert SolverSettings(str(isolated_settings)).get_newton_tolerance() == pytest.approx(1e-11)
    settings.reset_to_defaults()
    assert SolverSettings().get_spectrum_points() == 2000


def test_run_history_round_trip(tmp_path):
    history = tmp_path / "history.json"
    log = LogManager(history_file=str(history), max_history_entries=2)
    for i in range(3):
        log.start_run_session("ptrs", f"s{i}.json")
        log.complete_run_session(i != 1, None if i != 1 else "boom")
    again = LogManager(history_file=str(history))
    runs = again.get_run_history()
    assert [r["input"] for r in runs] == ["s1.json", "s2.json"]
    assert runs[0]["status"] == "failed" and runs[0]["error"] == "boom"


def test_log_levels_and_signal():
    log = LogManager()
    seen = []
    log.log_updated.connect(lambda message, level: seen.append(level))
    log.log("LOUD", "unknown level")
    log_to(log, "WARNING", "careful")
    log_to(None, "WARNING", "dropped")
    assert seen == ["INFO", "WARNING"]
    assert [e["message"] for e in log.get_realtime_logs()] == ["unknown level", "careful"]


def test_retry_handler_halves_the_step():
    log = LogManager()
    handler = create_continuation_retry_handler(3, log)
    steps = []

    def step(h):
        steps.append(h)
        if h > 0.2:
            raise ContinuationLostError(h)
        return h

    assert handler.execute_with_retry(step, 1.0) == 0.125
    assert steps == [1.0, 0.5, 0.25, 0.125]
    assert sum(1 for e in log.get_realtime_logs() if e["level"] == "WARNING") == 3


def test_retry_handler_gives_up_and_passes_other_errors():
    handler = create_continuation_retry_handler(2)

    def always_lost(h):
        raise ContinuationLostError(h)

    with pytest.raises(ContinuationLostError):
        handler.execute_with_retry(always_lost, 1.0)

    def invalid(h):
        raise ValidationError("bad")

    with pytest.raises(ValidationError):
        handler.execute_with_retry(invalid, 1.0)

    handler.cancel()
    with pytest.raises(ContinuationLostError):
        handler.execute_with_retry(lambda h: h, 1.0)
