"""Exception and warning types shared across the package."""


class CarelessError(Exception):
    """Base class for all package errors."""


class ValidationError(CarelessError):
    """Input data or configuration failed validation."""


class MissingColumn(ValidationError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, row_no, message):
        super().__init__(f"row {row_no}: {message}")
        self.row_no = row_no


class EmptyDataset(ValidationError):
    pass


class MultiSkillUnsupported(ValidationError):
    """An operation restricted to single-skill items met a multi-skill event."""


class InvalidConfig(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class ManifestMismatch(ValidationError):
    """Feature columns do not match the ordering a model was fitted with."""


class MissingParams(ValidationError):
    pass


class UnknownSkill(ValidationError):
    pass


class NoData(ValidationError):
    pass


class EmptyTrainingSet(ValidationError):
    pass


class TooFewStudents(ValidationError):
    pass


class ConstantInput(ValidationError):
    pass


class RankDeficient(ValidationError):
    pass


class ZeroVariance(ValidationError):
    pass


class MissingArtifact(ValidationError):
    pass


class NonConvergence(CarelessError):
    def __init__(self, grad_norm, n_iter):
        super().__init__(
            f"no convergence after {n_iter} iterations (gradient norm {grad_norm:.3g})"
        )
        self.grad_norm = grad_norm
        self.n_iter = n_iter


class DegenerateUpdate(CarelessError):
    """Bayes update with a zero denominator."""


class InsufficientLookahead(CarelessError):
    pass


class OrderingViolation(UserWarning):
    """Duplicate start times within a student; file order was kept."""


class SeparationWarning(UserWarning):
    pass


class CollinearityWarning(UserWarning):
    pass
