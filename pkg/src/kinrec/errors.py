"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses (3 = invalid arguments or
configuration, 4 = data-contract violation).
"""


class KinrecError(ValueError):
    exit_code = 4


class ConfigError(KinrecError):
    exit_code = 3


class ZeroVector(KinrecError):
    pass


class NonFinite(KinrecError):
    pass


class DimensionMismatch(KinrecError):
    pass


class LengthMismatch(KinrecError):
    pass


class MalformedRecord(KinrecError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# clustering
class InvalidK(ConfigError):
    pass


class EmptyDataset(KinrecError):
    pass


# dataset construction
class UnknownRelationshipType(KinrecError):
    pass


class InsufficientCandidates(KinrecError):
    pass


class InvalidFoldCount(ConfigError):
    pass


class EmptyMatrix(KinrecError):
    pass


class EmptyTrack(KinrecError):
    pass


class EmptyScores(KinrecError):
    pass


# evaluation
class EmptySet(KinrecError):
    pass


class DegenerateLabels(KinrecError):
    pass


class MissingType(KinrecError):
    pass


class MissingSubgroup(KinrecError):
    pass


class UnreachableTarget(KinrecError):
    pass


class ZeroReported(KinrecError):
    pass


class NoRelevant(KinrecError):
    pass


# templates / svm
class EmptyTemplate(KinrecError):
    pass


class EmptyClass(KinrecError):
    pass


class EmptyNegatives(KinrecError):
    pass


class SingletonGallery(ConfigError):
    pass


class InvalidHyperparameters(ConfigError):
    pass
