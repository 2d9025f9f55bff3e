"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid user data: bad files, mismatched shapes, out-of-range parameters."""


class StructureError(InputError):
    """Structurally invalid hierarchy or graph (cycles, missing roots)."""
