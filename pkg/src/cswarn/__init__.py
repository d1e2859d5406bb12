"""cswarn: multi-sensor convective-system detection, tracking, and flood warning."""

__version__ = "0.1.0"
