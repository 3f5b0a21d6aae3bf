"""Switches for the individual defenses.

Everything defaults to on. Turning one off exists only so the adversary
harness can run negative controls; the CLI never constructs anything but
:data:`ALL_ON`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Defenses:
    channel_encryption: bool = True
    memory_encryption: bool = True
    memory_integrity: bool = True
    package_authentication: bool = True
    model_digest_check: bool = True
    measurement_check: bool = True

    def without(self, name: str) -> "Defenses":
        if name not in self.__dataclass_fields__:
            raise KeyError(name)
        return replace(self, **{name: False})


ALL_ON = Defenses()
