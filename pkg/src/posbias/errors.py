"""Exception types shared across the package."""


class ParseError(ValueError):
    """A malformed input file or record."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class ValidationError(ValueError):
    """Inputs parsed fine but are inconsistent with each other."""
