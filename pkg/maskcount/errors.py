class MaskCountError(Exception):
    """
    Base error for the pipeline. The command line exits with `exit_code`.
    """

    exit_code = 1


class ConfigError(MaskCountError):
    exit_code = 2


class MissingArtifactError(MaskCountError):
    """
    A command needs something an earlier command writes.
    """

    exit_code = 3

    def __init__(self, artifact, producer):
        self.artifact = str(artifact)
        self.producer = producer
        super().__init__(
            f"Missing {self.artifact}, run 'maskcount {producer}' first to create it."
        )


class SceneFormatError(MaskCountError):
    """
    A bundle or artifact file could not be parsed.
    """

    exit_code = 3

    def __init__(self, path, field, offset=None, reason=""):
        self.path = str(path)
        self.field = field
        self.offset = offset
        where = f" at offset {offset}" if offset is not None else ""
        detail = f": {reason}" if reason else ""
        super().__init__(f"Cannot parse {self.path}, field '{field}'{where}{detail}")


class NumericError(MaskCountError):
    exit_code = 4

    def __init__(self, message, **diagnostics):
        self.diagnostics = diagnostics
        if diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class PlacementError(MaskCountError):
    exit_code = 4

    def __init__(self, requested, placed, attempts, shape, radius):
        self.requested = requested
        self.placed = placed
        self.attempts = attempts
        super().__init__(
            f"Placed {placed} of {requested} {shape} instances (radius {radius}px) "
            f"after {attempts} attempts, canvas is too crowded."
        )


class ShapeError(ValueError):
    """
    Two arrays (or vectors) that must agree in shape do not.
    """

    def __init__(self, what, left, right):
        super().__init__(f"{what}: shape {tuple(left)} does not match {tuple(right)}")


class SynthesisError(MaskCountError):
    exit_code = 4
