"""Exception hierarchy shared across the package.

Every failure path that a caller is expected to branch on gets its own
exception class carrying a stable ``code`` string, so tests and the CLI can
distinguish outcomes without parsing messages.
"""


class EhrChainError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __str__(self) -> str:
        base = super().__str__()
        return f"[{self.code}] {base}" if base else f"[{self.code}]"
