"""Exception and warning types shared across the toolkit."""


class LidarTrustError(Exception):
    """Base class for all toolkit errors."""


class UnmappedRawLabel(LidarTrustError):
    """A raw dataset label has no entry in the merge map."""

    def __init__(self, raw_value: int, index: int):
        super().__init__(
            f"raw label {raw_value} (first seen at index {index}) is not covered by the merge map"
        )
        self.raw_value = raw_value
        self.index = index


class DegenerateCount(LidarTrustError):
    """A class weight was requested for a class with zero points."""


class TruncatedFile(LidarTrustError):
    def __init__(self, path, detail: str):
        super().__init__(f"{path}: {detail}")
        self.path = path


class NonFiniteValue(LidarTrustError):
    def __init__(self, index: int):
        super().__init__(f"non-finite coordinate at point index {index}")
        self.index = index


class LengthMismatch(LidarTrustError):
    def __init__(self, n_found: int, n_expected: int):
        super().__init__(f"expected {n_expected} records, found {n_found}")
        self.n_found = n_found
        self.n_expected = n_expected


class BadMagic(LidarTrustError):
    """File does not start with the expected magic bytes."""


class HeaderInconsistent(LidarTrustError):
    """Header fields disagree with each other or with the file length."""


class ProbabilityNotNormalized(LidarTrustError):
    def __init__(self, index: int, total: float):
        super().__init__(
            f"probability vector at point {index} sums to {total:.6f}, beyond repairable tolerance"
        )
        self.index = index
        self.total = total


class LogitsAbsent(LidarTrustError):
    """The prediction container carries no logits but a logit-based score was requested."""


class FeaturesAbsent(LidarTrustError):
    """The prediction container carries no feature vectors."""


class SingularCovariance(LidarTrustError):
    """Pooled covariance is not positive-definite even after shrinkage."""


class InsufficientSamples(LidarTrustError):
    """No class retained enough samples to fit a feature-space model."""


class DegenerateInstance(LidarTrustError):
    """Instance center is too close to the sensor origin to define a beam direction."""


class NoOcclusion(LidarTrustError):
    """A transplant replaced zero frame points; the caller should retry another pose."""


class EmptyBank(LidarTrustError):
    """The instance bank holds no instance of a requested class."""


class BadEdges(LidarTrustError):
    """Bin edges are not a monotone [0, 1] partition."""


class ExhaustedTrials(UserWarning):
    """All pose trials for a frame failed; the frame passes through unaugmented."""
