"""Exception hierarchy shared across the toolkit.

Two broad branches matter for the CLI exit codes: ConfigError (bad input,
exit 1) and NumericalError (a well-posed computation failed, exit 2).
"""


class ToolkitError(Exception):
    pass


class ConfigError(ToolkitError):
    pass


class NumericalError(ToolkitError):
    pass
