"""Float formatting shared by the CSV writers."""


def fmt(x) -> str:
    """Shortest round-tripping text for a float, numpy scalars included."""
    return repr(float(x))
