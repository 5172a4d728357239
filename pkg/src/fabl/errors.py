"""Exception hierarchy shared by every fabl module."""


class FABLError(Exception):
    """Base class for all errors raised by fabl."""


class ValidationError(FABLError, ValueError):
    pass


class JointCountMismatch(ValidationError):
    def __init__(self, frame, found, expected):
        self.frame, self.found, self.expected = frame, found, expected
        super().__init__(f"frame {frame} has {found} joints, body model expects {expected}")


class NonFiniteCoordinate(ValidationError):
    def __init__(self, frame, joint):
        self.frame, self.joint = frame, joint
        super().__init__(f"non-finite coordinate at frame {frame}, joint {joint}")


class TooShort(ValidationError):
    def __init__(self, n_frames):
        self.n_frames = n_frames
        super().__init__(f"sequence has {n_frames} frame(s); at least 2 are required")


class ModelMismatch(ValidationError):
    pass


class MissingMapping(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class EmptyRange(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LayoutMismatch(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


class EmptyTestSet(ValidationError):
    pass


class OutOfRangeLabel(ValidationError):
    pass


class MissingSubjectIds(ValidationError):
    pass


class SingleSubject(ValidationError):
    pass


class SingularSystem(FABLError, ArithmeticError):
    pass


class NonFiniteObjective(FABLError, ArithmeticError):
    pass


class ParseError(FABLError, ValueError):
    def __init__(self, message, path=None, line=None, column=None):
        self.path, self.line, self.column = path, line, column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class HeaderMismatch(ParseError):
    pass


class FrameSizeError(ParseError):
    pass
