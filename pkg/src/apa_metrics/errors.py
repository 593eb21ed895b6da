"""Exception and warning types shared across the package.

Two broad families matter for the CLI exit-code mapping: ``DataError``
(bad inputs, bad files, protocol trouble) and ``NumericalError``
(computations that cannot produce a trustworthy number).
"""


class ApaError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ApaError):
    """Invalid or unusable input data (CLI exit code 2)."""


class NumericalError(ApaError):
    """A numerical computation failed or is degenerate (CLI exit code 3)."""


# --- audio decoding / windowing ---------------------------------------------

class UnsupportedFormat(DataError):
    """File is not a WAV we decode (codec, bit depth, or channel count)."""


class CorruptFile(DataError):
    """WAV header or payload is inconsistent with the file contents."""


class OutOfRange(DataError):
    """A span, shift, or parameter lies outside its allowed range."""


# --- dynamics ----------------------------------------------------------------

class SilentAudio(DataError):
    """Digital silence (or nothing above the loudness gate) where a level is required."""


class TooShort(DataError):
    """Input is shorter than the minimum the operation needs."""


class SilentPart(DataError):
    """One side of a context/stem pair cannot be normalized."""

    def __init__(self, side: str, message: str | None = None):
        self.side = side
        super().__init__(message or f"silent {side}: cannot apply level normalization")


# --- perturbations -----------------------------------------------------------

class TooFewPairs(DataError):
    """Stem substitution needs at least two pairs."""


class InfeasibleDerangement(DataError):
    """No cross-song stem permutation exists for the given pairs."""


class CommandFailed(DataError):
    """An external transform command exited nonzero or emitted garbage."""


class LengthMismatch(DataError):
    """An external transform returned audio of the wrong length or rate."""


# --- embedding / caches / bridge ---------------------------------------------

class BridgeError(DataError):
    """External embedder process misbehaved (protocol, crash, or timeout)."""


class DimensionMismatch(DataError):
    """An embedding or projection has the wrong dimensionality."""


class BadMagic(DataError):
    """File does not start with the expected magic bytes."""


class VersionUnsupported(DataError):
    """File format version is newer than this implementation understands."""


class TruncatedFile(DataError):
    """File ends before its declared payload does."""


# --- statistics ---------------------------------------------------------------

class TooFewSamples(DataError):
    """Not enough rows to fit the requested statistic."""


class EmptyInput(DataError):
    """An operation received an empty collection."""


class NumericalFailure(NumericalError):
    """Eigendecomposition did not converge even after regularization."""


class DegenerateAnchor(NumericalError):
    """Reference and mismatched reference are indistinguishable; the score is undefined."""


# --- pipeline -----------------------------------------------------------------

class ManifestError(DataError):
    """Pair manifest is malformed or references missing files."""


class SongTooShort(DataError):
    """No song in the manifest is long enough for the requested window."""


# --- warnings ------------------------------------------------------------------

class GateFallbackWarning(UserWarning):
    """Loudness gating left no blocks; an ungated mean-square reading was used."""


class RankDeficientWarning(UserWarning):
    """Requested more principal components than the data's numerical rank."""


class SongExcludedWarning(UserWarning):
    """A song was skipped during window sampling (too short)."""
