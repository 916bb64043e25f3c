"""Package-wide exception carrying a stable, machine-readable error code."""


class FplocError(Exception):
    """Raised when an operation's input contract is violated.

    ``code`` is a stable identifier (e.g. ``"empty-rfm"``, ``"bad-m"``,
    ``"corrupt-bundle"``) that callers and the CLI can branch on without
    parsing the human-readable message.
    """

    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code

    def __repr__(self) -> str:
        return f"FplocError({self.code!r}, {self.args[0]!r})"
