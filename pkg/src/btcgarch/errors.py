"""Exception hierarchy shared by the pipeline, diagnostics and estimation code."""


class BtcGarchError(Exception):
    """Base class for all errors raised by this package."""


# --- series / resampling ---------------------------------------------------

class EmptyInput(BtcGarchError):
    pass


class NonPositivePrice(BtcGarchError):
    def __init__(self, index: int, value: float | None = None):
        self.index = index
        self.value = value
        super().__init__(f"non-positive price at index {index}"
                         + (f" (value {value!r})" if value is not None else ""))


class LagTooLarge(BtcGarchError):
    pass


class GridMismatch(BtcGarchError):
    pass


# --- ingestion --------------------------------------------------------------

class BadHeader(BtcGarchError):
    pass


class NoValidRows(BtcGarchError):
    pass


class MissingAnchor(BtcGarchError):
    def __init__(self, day: str):
        self.day = day
        super().__init__(f"no total-stock anchor available for day {day}")


class NonPositiveBlockTime(BtcGarchError):
    pass


class NonPositiveStock(BtcGarchError):
    pass


class NoAnchorBeforeWindow(BtcGarchError):
    pass


class WindowUncovered(BtcGarchError):
    pass


# --- diagnostics ------------------------------------------------------------

class TooShort(BtcGarchError):
    pass


class SingularRegression(BtcGarchError):
    pass


class ZeroVariance(BtcGarchError):
    pass


# --- estimation -------------------------------------------------------------

class InsufficientData(BtcGarchError):
    pass


class UnknownColumn(BtcGarchError):
    pass


class NonPositiveInit(BtcGarchError):
    pass


class NonPositiveVariance(BtcGarchError):
    pass


class InvariantViolation(BtcGarchError):
    pass


class BadCounts(BtcGarchError):
    pass


class DegenerateRegressor(BtcGarchError):
    pass


# --- simulation -------------------------------------------------------------

class AllReplicationsFailed(BtcGarchError):
    pass


# --- reporting --------------------------------------------------------------

class IoFailure(BtcGarchError):
    pass
