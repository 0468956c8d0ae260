"""Registry of canonical gapped models.

Each entry bundles a symbol, a unit-periodic background, a certified
spectral gap of the clean operator, and default disorder parameters. The
default coupling law is uniform on [0, 1] with single-site amplitude 6.0,
which spreads impurity levels almost uniformly across the whole gap, so
counting windows anywhere in (-1, 1) see usable weight at a few hundred
realizations.
"""

import numpy as np

from .disorder import DisorderModel
from .errors import ConfigError
from .operators import PAULI_X, PAULI_Y, PAULI_Z, DiracSymbol, PeriodicBackground


class ModelSpec:
    def __init__(self, name, description, sigmas, gap, background_factory,
                 disorder_defaults):
        self.name = name
        self.description = description
        self._sigmas = sigmas
        self.gap = gap
        self._background_factory = background_factory
        self._disorder_defaults = dict(disorder_defaults)

    @property
    def d(self):
        return len(self._sigmas)

    @property
    def n(self):
        return self._sigmas[0].shape[0]

    def symbol(self):
        return DiracSymbol(self._sigmas)

    def background(self, resolution=8):
        return self._background_factory(resolution)

    def disorder(self, **overrides):
        params = dict(self._disorder_defaults)
        params.update(overrides)
        return DisorderModel(d=self.d, fiber_n=self.n, **params)


def _constant_background(d, resolution):
    return PeriodicBackground.constant(np.eye(2), PAULI_Z, d, resolution)


def _smooth_coeff_background(resolution):
    def coeff(x):
        return (1.0 + 0.25 * np.sin(2.0 * np.pi * x[0])) * np.eye(2)

    def potential(x):
        return PAULI_Z

    return PeriodicBackground.from_functions(coeff, potential, 1, resolution)


_DEFAULT_DISORDER = {
    "law": "uniform",
    "coupling_min": 0.0,
    "coupling_max": 1.0,
    "displacement_radius": 0.25,
    "profile": "cos2",
    "amplitude": 6.0,
}

REGISTRY = {
    "dirac1d": ModelSpec(
        "dirac1d",
        "1d two-component model, constant coefficient, mass 1, gap (-1, 1)",
        (PAULI_X,),
        (-1.0, 1.0),
        lambda r: _constant_background(1, r),
        _DEFAULT_DISORDER,
    ),
    "dirac2d": ModelSpec(
        "dirac2d",
        "2d two-component model, constant coefficient, mass 1, gap (-1, 1)",
        (PAULI_X, PAULI_Y),
        (-1.0, 1.0),
        lambda r: _constant_background(2, r),
        _DEFAULT_DISORDER,
    ),
    "dirac1d_smooth": ModelSpec(
        "dirac1d_smooth",
        "1d model with a smoothly modulated scalar coefficient field, gap (-1, 1)",
        (PAULI_X,),
        (-1.0, 1.0),
        _smooth_coeff_background,
        _DEFAULT_DISORDER,
    ),
}


def get_model(name):
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError("unknown model %r; known: %s"
                          % (name, ", ".join(sorted(REGISTRY)))) from None


def list_models():
    return [REGISTRY[k] for k in sorted(REGISTRY)]
