"""Exception types shared across the package."""


class SceneError(Exception):
    """Base class for all scene-toolkit errors."""


class ParseError(SceneError):
    """Text-format error; carries the 1-based source line number."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnknownCommand(ParseError):
    def __init__(self, name, line):
        super().__init__(f"unknown command '{name}'", line)
        self.name = name


class MissingParameter(ParseError):
    def __init__(self, key, line):
        super().__init__(f"missing parameter '{key}'", line)
        self.key = key


class DuplicateParameter(ParseError):
    def __init__(self, key, line):
        super().__init__(f"duplicate parameter '{key}'", line)
        self.key = key


class UnknownParameter(ParseError):
    def __init__(self, key, line):
        super().__init__(f"unknown parameter '{key}'", line)
        self.key = key


class MalformedNumber(ParseError):
    def __init__(self, token, line):
        super().__init__(f"malformed number '{token}'", line)
        self.token = token


class DanglingReference(SceneError):
    """A command refers to an id that does not exist."""

    def __init__(self, ref_id, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"reference to missing id {ref_id}{where}")
        self.ref_id = ref_id
        self.line = line


class InvalidProgram(SceneError):
    def __init__(self, violations):
        super().__init__(
            "invalid program: " + "; ".join(str(v) for v in violations)
        )
        self.violations = violations


# geometry
class DegenerateWall(SceneError):
    pass


class OutsideWallFace(SceneError):
    pass


class DegenerateCurve(SceneError):
    pass


class UnknownPrimitiveClass(SceneError):
    pass


class EmptyGeometry(SceneError):
    pass


# tokens
class ValueOutOfRange(SceneError):
    def __init__(self, field, value):
        super().__init__(f"field '{field}' quantizes to {value}, outside [0, 2031]")
        self.field = field
        self.value = value


class SequenceTooLong(SceneError):
    pass


class MalformedSequence(SceneError):
    def __init__(self, position, expected, got=None):
        detail = f"position {position}: expected {expected}"
        if got is not None:
            detail += f", got {got}"
        super().__init__(detail)
        self.position = position
        self.expected = expected


class UnreachablePrefix(SceneError):
    pass


# generation
class GenerationFailed(SceneError):
    pass


class EmptyCloud(SceneError):
    pass


class NonFiniteLoss(SceneError):
    pass


class ClassMismatch(SceneError):
    pass
