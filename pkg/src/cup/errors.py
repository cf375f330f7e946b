"""Exception hierarchy shared by all modules.

Every domain error carries the name of the module that raised it so the CLI
can report ``[module] Variant: message`` without guessing.
"""

from __future__ import annotations


class CupError(Exception):
    module = "cup"

    @property
    def variant(self) -> str:
        return type(self).__name__


class ConfigError(CupError):
    module = "orchestrator"
