"""Exception types shared across the package."""


class DomainError(ValueError):
    """An input violates a mathematical precondition of an operation."""


class InputError(DomainError):
    """A data file or configuration could not be parsed or is inconsistent.

    ``line`` is the 1-based line number in the offending file when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
