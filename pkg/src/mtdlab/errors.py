"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a documented format or contract."""


class ParseError(DataError):
    """Malformed profiler output; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
