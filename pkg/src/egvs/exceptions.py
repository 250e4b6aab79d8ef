class InputError(ValueError):
    """Invalid user input: bad parameters, malformed files, mismatched grids."""


class InvariantError(RuntimeError):
    """An internal consistency check failed."""
