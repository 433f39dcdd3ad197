from typing import Callable, Any

from PyQt6.QtCore import QObject, pyqtSignal

from errors import ContinuationLostError, NonConvergenceError


class StepRetryHandler(QObject):
    """
    Retries a continuation step with a halved step size
    """
    retry_attempt = pyqtSignal(int, int, str)  # current_attempt, max_attempts, error_msg
    retry_success = pyqtSignal(str)  # success message
    retry_failed = pyqtSignal(str)  # final failure message

    RETRYABLE = (ContinuationLostError, NonConvergenceError)

    def __init__(self, max_retries=8):
        super().__init__()
        self.max_retries = max_retries
        self._is_cancelled = False

    def execute_with_retry(self, func: Callable, step: float, *args, **kwargs) -> Any:
        """
        Call func(step, ...) and halve the step after every retryable failure

        Args:
            func: Step function; takes the step size as first argument
            step: Initial step size

        Returns:
            Result of the first successful call

        Raises:
            The last retryable error once max_retries halvings are exhausted,
            or any non-retryable error immediately
        """
        last_exception = None

        for attempt in range(self.max_retries + 1):  # +1 for the initial attempt
            if self._is_cancelled:
                raise ContinuationLostError(0.0, "continuation cancelled")

            try:
                if attempt > 0:
                    step = 0.5 * step
                    self.retry_attempt.emit(attempt, self.max_retries, str(last_exception))

                result = func(step, *args, **kwargs)

                if attempt > 0:
                    self.retry_success.emit(f"step succeeded after {attempt} halvings (step = {step:.3g})")

                return result

            except Exception as e:
                last_exception = e

                if not self._is_retryable_error(e):
                    raise

                if attempt == self.max_retries:
                    self.retry_failed.emit(f"step failed after {self.max_retries} halvings: {e}")
                    raise

        raise last_exception

    def _is_retryable_error(self, exception: Exception) -> bool:
        return isinstance(exception, self.RETRYABLE)

    def cancel(self):
        self._is_cancelled = True


def create_continuation_retry_handler(max_retries=8, log_manager=None) -> StepRetryHandler:
    """
    Create a retry handler wired to an optional LogManager

    Args:
        max_retries: Maximum number of step halvings
        log_manager: Receives one WARNING per halving and the final outcome

    Returns:
        Configured StepRetryHandler instance
    """
    handler = StepRetryHandler(max_retries)
    if log_manager is not None:
        handler.retry_attempt.connect(
            lambda attempt, total, msg: log_manager.log("WARNING", f"halving step ({attempt}/{total}): {msg}"))
        handler.retry_success.connect(lambda msg: log_manager.log("INFO", msg))
        handler.retry_failed.connect(lambda msg: log_manager.log("ERROR", msg))
    return handler
