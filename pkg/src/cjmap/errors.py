"""Structured errors shared by all cjmap modules.

Every error carries a stable ``name`` used by the CLI as the machine-readable
diagnostic on stderr, so scripts can match on it without parsing prose.
"""


class CjmapError(Exception):
    """Base class; ``name`` identifies the violated contract."""

    name = "CjmapError"

    def __str__(self):
        msg = super().__str__()
        return f"{self.name}: {msg}" if msg else self.name


# -- model -------------------------------------------------------------------

class NegativeValue(CjmapError):
    name = "NegativeValue"


class DuplicateCoinId(CjmapError):
    name = "DuplicateCoinId"


class OutputsExceedInputs(CjmapError):
    name = "OutputsExceedInputs"


class EmptySide(CjmapError):
    name = "EmptySide"


class SignatureMismatch(CjmapError):
    name = "SignatureMismatch"


# -- preprocess ----------------------------------------------------------------

class UnknownDesign(CjmapError):
    name = "UnknownDesign"


class MissingFeerate(CjmapError):
    name = "MissingFeerate"


class ValueUnderflow(CjmapError):
    name = "ValueUnderflow"


class OverlappingGroups(CjmapError):
    name = "OverlappingGroups"


class DanglingId(CjmapError):
    name = "DanglingId"


# -- enumeration ---------------------------------------------------------------

class SubmappingExplosion(CjmapError):
    name = "SubmappingExplosion"


class InstanceTooLarge(CjmapError):
    name = "InstanceTooLarge"


# -- metrics -------------------------------------------------------------------

class ZeroMass(CjmapError):
    name = "ZeroMass"


class UnknownId(CjmapError):
    name = "UnknownId"


class UnknownSignature(CjmapError):
    name = "UnknownSignature"


# -- anonloss ------------------------------------------------------------------

class UnknownOutput(CjmapError):
    name = "UnknownOutput"


class UnknownTx(CjmapError):
    name = "UnknownTx"


# -- multicj -------------------------------------------------------------------

class DanglingLink(CjmapError):
    name = "DanglingLink"


class ValueMismatch(CjmapError):
    name = "ValueMismatch"


# -- generator / trend -----------------------------------------------------------

class InfeasibleParams(CjmapError):
    name = "InfeasibleParams"


class DegenerateData(CjmapError):
    name = "DegenerateData"
