"""Exception hierarchy.

Every error carries a stable ``code`` string so that CLI exit codes, attack
reports and wire-level ERROR frames can refer to failures uniformly.
"""

from __future__ import annotations


class EnclaveFMError(Exception):
    code = "ERROR"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details

    def __str__(self) -> str:
        msg = super().__str__()
        return msg if msg == self.code else f"{self.code}: {msg}"


# -- crypto -----------------------------------------------------------------

class CryptoError(EnclaveFMError):
    code = "CRYPTO_ERROR"


class RejectedPublicKey(CryptoError):
    code = "REJECTED_PUBLIC_KEY"


class DecryptFail(CryptoError):
    code = "DECRYPT_FAIL"


# -- manifest ---------------------------------------------------------------

class ManifestError(EnclaveFMError):
    code = "MANIFEST_ERROR"


class ManifestSyntaxError(ManifestError):
    code = "SYNTAX_ERROR"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}", line=line)
        self.line = line


class DuplicateKey(ManifestError):
    code = "DUPLICATE_KEY"

    def __init__(self, key: str, line: int):
        super().__init__(f"line {line}: duplicate key {key!r}", key=key, line=line)
        self.key = key
        self.line = line


class InvariantViolation(ManifestError):
    code = "INVARIANT_VIOLATION"


class ValidationFailed(EnclaveFMError):
    code = "VALIDATION_FAILED"


# -- enclave ----------------------------------------------------------------

class EnclaveError(EnclaveFMError):
    code = "ENCLAVE_ERROR"


class EnclaveCrashed(EnclaveError):
    code = "ENCLAVE_CRASHED"


class IntegrityFault(EnclaveError):
    code = "INTEGRITY_FAULT"


class NotOwner(EnclaveError):
    code = "NOT_OWNER"


class SealMismatch(EnclaveError):
    code = "SEAL_MISMATCH"


# -- attestation / channel --------------------------------------------------

class AttestationFailed(EnclaveFMError):
    code = "ATTESTATION_FAILED"

    def __init__(self, reasons, message: str = ""):
        reasons = tuple(sorted(set(reasons)))
        super().__init__(message or ",".join(reasons), reasons=reasons)
        self.reasons = reasons


class KeyBindingMismatch(EnclaveFMError):
    code = "KEY_BINDING_MISMATCH"


class HandshakeMalformed(EnclaveFMError):
    code = "HANDSHAKE_MALFORMED"


class ReplayDetected(EnclaveFMError):
    code = "REPLAY_DETECTED"


class CounterExhausted(EnclaveFMError):
    code = "COUNTER_EXHAUSTED"


class ProtocolError(EnclaveFMError):
    code = "PROTOCOL_ERROR"


class BindFailed(EnclaveFMError):
    code = "BIND_FAILED"


class ConnectionClosed(EnclaveFMError):
    code = "CONNECTION_CLOSED"


# -- model store / inference ------------------------------------------------

class KeyNotProvisioned(EnclaveFMError):
    code = "KEY_NOT_PROVISIONED"


class DigestMismatch(EnclaveFMError):
    code = "DIGEST_MISMATCH"


class NoModelLoaded(EnclaveFMError):
    code = "NO_MODEL_LOADED"


class EmptyContext(EnclaveFMError):
    code = "EMPTY_CONTEXT"


class BatchSizeMismatch(EnclaveFMError):
    code = "BATCH_SIZE_MISMATCH"


class EmptyDataset(EnclaveFMError):
    code = "EMPTY_DATASET"


# -- orchestration ----------------------------------------------------------

class DeploymentAborted(EnclaveFMError):
    """Provider flow stopped at ``step`` (1-7) because of ``reason``."""

    code = "ABORT_AT_STEP"

    def __init__(self, step: int, reason: str, message: str = ""):
        text = f"ABORT_AT_STEP({step}, {reason})"
        if message:
            text += f" {message}"
        super().__init__(text, step=step, reason=reason)
        self.step = step
        self.reason = reason

    def __str__(self) -> str:
        return self.args[0]


class ServiceCrashed(EnclaveFMError):
    code = "SERVICE_CRASHED"


class ChannelError(EnclaveFMError):
    code = "CHANNEL_ERROR"


class FixtureUnhealthy(EnclaveFMError):
    code = "FIXTURE_UNHEALTHY"


# -- bench ------------------------------------------------------------------

class TargetFailed(EnclaveFMError):
    code = "TARGET_FAILED"


class TooFewSamples(EnclaveFMError):
    code = "TOO_FEW_SAMPLES"


class EmptyInput(EnclaveFMError):
    code = "EMPTY_INPUT"


class ConfigMismatch(EnclaveFMError):
    code = "CONFIG_MISMATCH"


_BY_CODE = {}


def _register(cls):
    for sub in cls.__subclasses__():
        _BY_CODE.setdefault(sub.code, sub)
        _register(sub)


_register(EnclaveFMError)


def error_for_code(code: str, message: str = "") -> EnclaveFMError:
    """Rebuild an exception received as an ERROR frame from a peer."""
    prefix = f"{code}: "
    if message.startswith(prefix):
        message = message[len(prefix):]
    elif message == code:
        message = ""
    cls = _BY_CODE.get(code)
    if cls is AttestationFailed:
        return AttestationFailed([r for r in message.split(",") if r])
    if cls is None or cls in (ManifestSyntaxError, DuplicateKey, DeploymentAborted):
        err = EnclaveFMError(message)
        err.code = code
        return err
    return cls(message)
