"""Process-wide switches.

strict_forecasts: when enabled (test suites, --strict runs), every forecast
constructed anywhere is validated for non-negativity and unit sum and a
violation raises instead of propagating silently.
"""

strict_forecasts = False


def set_strict_forecasts(enabled: bool) -> None:
    global strict_forecasts
    strict_forecasts = bool(enabled)
