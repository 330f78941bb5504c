"""Python face of the moltkv engine.

The compiled extension must be importable (built tree or installed wheel).
"""

from _moltkv import (  # noqa: F401
    CommandError,
    DocumentError,
    Engine,
    MigrationStats,
)

__all__ = ["Engine", "CommandError", "DocumentError", "MigrationStats"]
