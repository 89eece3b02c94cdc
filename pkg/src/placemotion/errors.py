"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: ``DataError`` subclasses exit 2 and
``StudyError`` subclasses exit 3.
"""


class PlacemotionError(Exception):
    pass


class DataError(PlacemotionError):
    """Input data failed validation."""


class StudyError(PlacemotionError):
    """A computation could not produce a result from valid inputs."""


class SchemaError(DataError):
    pass


class VocabularyError(SchemaError):
    """A categorical value outside its fixed vocabulary; never a per-row reject."""


class IngestAborted(DataError):
    pass


class ScoringAborted(DataError):
    pass


class DegenerateGeometry(StudyError):
    pass


class EmptyPlace(StudyError):
    pass


class NoFaces(StudyError):
    pass


class NoData(StudyError):
    pass


class InsufficientData(StudyError):
    pass


class UndefinedCorrelation(StudyError):
    pass


class SingularDesign(StudyError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class StudyFailed(StudyError):
    pass
