class DerandError (Exception):
    message: str

    def __init__(self, message: str):
        super().__init__(message)

        self.message = message

class InvalidArgument (DerandError):
    ...

class ShapeMismatch (InvalidArgument):
    ...

class RegimeError (DerandError):
    ...

class ReportError (DerandError):
    ...

class ParseError (DerandError):
    line: int
    column: int

    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")

        self.line = line
        self.column = column
