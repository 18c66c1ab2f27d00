"""Exception types mapped to command-line exit codes."""


class ConfigError(ValueError):
    exit_code = 2


class DataError(ValueError):
    exit_code = 3


class NumericalError(RuntimeError):
    exit_code = 4
