"""Exception and warning types shared across the package."""


class ParMACError(Exception):
    pass


class MalformedRecord(ParMACError):
    """A vecs record is truncated or has a negative dimension."""


class InconsistentDim(ParMACError):
    """Records in one vecs stream disagree on dimension."""


class EmptyShard(ParMACError):
    pass


class LTooLarge(ParMACError):
    pass


class NotDivisible(ParMACError):
    pass


class KExceedsBase(ParMACError):
    pass


class LastMachine(ParMACError):
    pass


class UnrecoverableLoss(ParMACError):
    pass


class DeadWorker(ParMACError):
    pass


class MembershipError(ParMACError):
    pass


class CheckpointError(ParMACError):
    pass


class WireFormatError(ParMACError):
    pass


class DegenerateCovariance(UserWarning):
    """Fewer nonzero principal directions than requested bits; zero bits padded."""


class SingularNormalMatrix(UserWarning):
    """Normal equations were singular; a small ridge was added."""


class DecoderSmallerThanEncoder(UserWarning):
    pass
