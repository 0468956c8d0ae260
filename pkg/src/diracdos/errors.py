"""Error taxonomy shared by the library and the CLI.

Exit-code mapping used by the command line runner:
  2  configuration problems (bad or missing fields, unknown keys)
  3  compute failures (solver breakdown, exhausted quadrature budget)
  4  geometry and precondition violations
"""


class DiracDosError(Exception):
    exit_code = 3


class ConfigError(DiracDosError):
    exit_code = 2


class PreconditionError(DiracDosError):
    exit_code = 4


class GeometryError(PreconditionError):
    """Boxes, grids or supports that do not fit together."""


class ComputeError(DiracDosError):
    exit_code = 3


class QuadratureBudgetError(ComputeError):
    """Quadrature budget exhausted before the requested tolerance."""
