# Virtual base class for scenario scorers.
# Provides:
# - score(batch): overload time of the scored target, one value per scenario
# Each scorer has a name and the number of lines scenarios are drawn over.
# target is None for the global indicator or a line index.

import numpy as np


class Scorer():

    def __init__(self, name, n_lines, target=None):
        self.name = name
        self.n_lines = n_lines
        self.target = target

    def score(self, batch) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, batch) -> np.ndarray:
        return np.asarray(self.score(batch), dtype=float)
