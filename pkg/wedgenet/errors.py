from __future__ import annotations

from typing import Any


class WedgenetError(Exception):
    pass


class DimensionError(WedgenetError, ValueError):
    pass


class DegenerateFeature(WedgenetError, ValueError):
    """ Generators of a feature are linearly (or affinely) dependent, so the feature has no direction. """


class StateError(WedgenetError, ValueError):
    pass


class VariantError(WedgenetError, ValueError):
    pass


class RankError(WedgenetError, ValueError):
    pass


class SizeError(WedgenetError, ValueError):
    pass


class ProvenanceError(WedgenetError, ValueError):
    pass


class FormatError(WedgenetError, ValueError):
    """ A network, dictionary, config or data file does not have the expected layout. """


class NeuronSkipped(WedgenetError, ValueError):
    def __init__(self, neuron: int, reason: str):
        super().__init__(f'Neuron {neuron} skipped: {reason}')
        self.neuron = neuron
        self.reason = reason


class NumericalError(WedgenetError, RuntimeError):
    pass


class NonConverged(WedgenetError, RuntimeError):
    """ Raised when an iterative method hits its iteration cap.

    The best iterate found so far is kept in ``solution``.
    """

    def __init__(self, message: str, solution: Any = None):
        super().__init__(message)
        self.solution = solution
