"""Exception hierarchy.

Every concrete error carries a distinct ``exit_code`` which the CLI returns,
so scripts can branch on the failure class without parsing messages.
"""


class LobForgeError(Exception):
    exit_code = 1


# -- input validation --------------------------------------------------------

class MalformedRecord(LobForgeError):
    exit_code = 10


class CrossedBook(LobForgeError):
    exit_code = 11


class NegativeValue(LobForgeError):
    exit_code = 12


class ConfigError(LobForgeError):
    exit_code = 13


# -- data availability -------------------------------------------------------

class EmptySeries(LobForgeError):
    exit_code = 20


class SeriesTooShort(LobForgeError):
    exit_code = 21


class SpecMismatch(LobForgeError):
    exit_code = 22


class AlignmentGap(LobForgeError):
    exit_code = 23


class InsufficientOverlap(LobForgeError):
    exit_code = 24


class EmptySet(LobForgeError):
    exit_code = 25


# -- numerics ----------------------------------------------------------------

class DegenerateLadder(LobForgeError):
    exit_code = 30


class MissingStats(LobForgeError):
    exit_code = 31


class ZeroVariance(LobForgeError):
    exit_code = 32


class OutOfRange(LobForgeError):
    exit_code = 33


class DegenerateFit(LobForgeError):
    exit_code = 34


class LengthMismatch(LobForgeError):
    exit_code = 35


class NonPositiveActual(LobForgeError):
    exit_code = 36


# -- shapes / architectures --------------------------------------------------

class ShapeMismatch(LobForgeError):
    exit_code = 40


class RepresentationMismatch(ShapeMismatch):
    """Stacked input given to a merged-only model, or the reverse."""

    exit_code = 41


class InvalidArch(LobForgeError):
    exit_code = 42


# -- containers --------------------------------------------------------------

class FormatError(LobForgeError):
    exit_code = 50


class VersionMismatch(FormatError):
    exit_code = 51


class CorruptChecksum(FormatError):
    exit_code = 52
