# Eigendecompositions of state matrices and their first-order updates.
#
# A perturbed matrix A + aV is approximated from the spectrum of A with
#   U'     = U - a U (P o W)
#   L'     = L + a diag(W)
#   U'^-1  = U^-1 + a (P o W) U^-1
# where W = U^-1 V U, P_ij = 1 / (l_i - l_j) off the diagonal and o is the
# entrywise product. Eigenvalues keep their positions through every update.

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from errors import DegeneracyError, IllConditionedError

logger = logging.getLogger(__name__)

RECONSTRUCTION_TOLERANCE = 1e-6
RELATIVE_GAP = 1e-8
# share of zeroed gap entries above which the update is not trusted
DEGENERACY_LIMIT = 0.10
# largest entry of a (P o W) one refined update may apply
STEP_LIMIT = 0.1
MAX_SUBSTEPS = 5000
UNSTABLE_TOLERANCE = 1e-3
BIORTHOGONALITY_LIMIT = 1.0


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    vectors: np.ndarray
    values: np.ndarray
    inverse: np.ndarray
    steps: int = 0
    degenerate: bool = False
    substeps: int = 0

    @property
    def is_exact(self) -> bool:
        return self.steps == 0

    @property
    def provenance(self) -> str:
        return "exact" if self.is_exact else f"perturbative({self.steps})"

    @property
    def size(self) -> int:
        return len(self.values)

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.inverse

    def biorthogonality_residual(self) -> float:
        product = self.vectors @ self.inverse
        return float(np.linalg.norm(product - np.eye(self.size), ord=np.inf))


class GapMatrix(NamedTuple):
    matrix: np.ndarray
    degenerate: bool
    zeroed: float


def _inf_norm(matrix: np.ndarray) -> float:
    return float(np.linalg.norm(matrix, ord=np.inf))


def eigendecompose(matrix: np.ndarray) -> SpectralDecomposition:
    matrix = np.asarray(matrix)
    values, vectors = linalg.eig(matrix)

    # sorted by (Re, Im) so that identical inputs give identical layouts
    order = np.lexsort((values.imag, values.real))
    values = values[order]
    vectors = vectors[:, order]

    try:
        inverse = linalg.inv(vectors)
    except linalg.LinAlgError as error:
        raise IllConditionedError(f"eigenvector matrix is singular: {error}")

    decomposition = SpectralDecomposition(vectors, values, inverse)
    scale = max(_inf_norm(matrix), np.finfo(float).tiny)
    residual = _inf_norm(matrix - decomposition.reconstruct())
    if not residual <= RECONSTRUCTION_TOLERANCE * scale:
        raise IllConditionedError(
            f"matrix is not diagonalizable to working accuracy (residual {residual:.2e})")
    return decomposition


def default_gap(values: np.ndarray) -> float:
    largest = float(np.max(np.abs(values))) if len(values) else 0.0
    return RELATIVE_GAP * largest if largest > 0 else RELATIVE_GAP


def pi_plus(values: np.ndarray, gap: Optional[float] = None) -> GapMatrix:
    values = np.asarray(values, dtype=complex)
    if gap is None:
        gap = default_gap(values)

    difference = values[:, None] - values[None, :]
    off_diagonal = ~np.eye(len(values), dtype=bool)
    close = off_diagonal & (np.abs(difference) < gap)

    matrix = np.zeros_like(difference)
    np.divide(1.0, difference, out=matrix, where=off_diagonal & ~close)

    pairs = int(off_diagonal.sum())
    zeroed = float(close.sum()) / pairs if pairs else 0.0
    return GapMatrix(matrix, bool(close.any()), zeroed)


class _Support(NamedTuple):
    rows: np.ndarray
    cols: np.ndarray
    block: np.ndarray


def _support(perturbation: np.ndarray) -> _Support:
    # a fault touches two velocity rows and two phase columns of V
    nonzero = perturbation != 0
    rows = np.flatnonzero(nonzero.any(axis=1))
    cols = np.flatnonzero(nonzero.any(axis=0))
    return _Support(rows, cols, perturbation[np.ix_(rows, cols)])


def _coupling(decomposition: SpectralDecomposition, support: _Support) -> np.ndarray:
    """W = U^-1 V U computed from the nonzero block of V only."""
    return decomposition.inverse[:, support.rows] @ (support.block @ decomposition.vectors[support.cols])


def _checked_gaps(values: np.ndarray, gap: Optional[float]) -> GapMatrix:
    gaps = pi_plus(values, gap)
    if gaps.zeroed > DEGENERACY_LIMIT:
        raise DegeneracyError(
            f"{gaps.zeroed:.0%} of eigenvalue gaps are degenerate, fall back to an exact decomposition")
    return gaps


def _apply(base: SpectralDecomposition, coupling: np.ndarray, correction: np.ndarray, scale: float,
           degenerate: bool) -> SpectralDecomposition:
    return SpectralDecomposition(
        vectors=base.vectors - scale * (base.vectors @ correction),
        values=base.values + scale * np.diagonal(coupling),
        inverse=base.inverse + scale * (correction @ base.inverse),
        steps=base.steps + 1,
        degenerate=base.degenerate or degenerate,
        substeps=base.substeps + 1,
    )


def perturb_first_order(base: SpectralDecomposition, perturbation: np.ndarray, scale: float,
                        gap: Optional[float] = None) -> SpectralDecomposition:
    """First-order spectrum of A + scale * V from the spectrum of A."""
    if not 0 < scale <= 1:
        raise ValueError(f"perturbation scale must lie in (0, 1], got {scale}")
    if not np.any(perturbation):
        return base

    gaps = _checked_gaps(base.values, gap)
    coupling = _coupling(base, _support(perturbation))
    return _apply(base, coupling, gaps.matrix * coupling, scale, gaps.degenerate)


def check_perturbed(base: SpectralDecomposition, updated: SpectralDecomposition) -> None:
    """Raise DegeneracyError when an updated spectrum can no longer be trusted.

    Rejects non-finite entries, eigenvalues that moved right of the base
    spectrum's rightmost real part, and eigenvector bases that drifted too far
    from their inverse.
    """
    if not (np.isfinite(updated.values).all() and np.isfinite(updated.vectors).all()
            and np.isfinite(updated.inverse).all()):
        raise DegeneracyError("perturbed spectrum is not finite")

    largest = float(np.abs(updated.values).max())
    ceiling = max(float(base.values.real.max()), 0.0) + UNSTABLE_TOLERANCE * max(largest, 1.0)
    rightmost = float(updated.values.real.max())
    if rightmost > ceiling:
        raise DegeneracyError(f"perturbed spectrum gained an unstable eigenvalue (Re {rightmost:.3g})")

    residual = updated.biorthogonality_residual()
    if not residual <= BIORTHOGONALITY_LIMIT:
        raise DegeneracyError(f"eigenvectors lost biorthogonality (residual {residual:.2e})")


def _refined_path(base: SpectralDecomposition, perturbation: np.ndarray, steps: int,
                  gap: Optional[float]) -> SpectralDecomposition:
    # each nominal 1/steps increment is split wherever one update would move an
    # eigenvector coordinate by more than STEP_LIMIT
    support = _support(perturbation)
    current = base
    for _ in range(steps):
        remaining = 1.0 / steps
        while remaining > 0:
            gaps = _checked_gaps(current.values, gap)
            coupling = _coupling(current, support)
            correction = gaps.matrix * coupling
            largest = float(np.abs(correction).max())
            if not np.isfinite(largest):
                raise DegeneracyError("first-order correction is not finite")
            scale = remaining
            if largest * scale > STEP_LIMIT:
                scale = STEP_LIMIT / largest
            current = _apply(current, coupling, correction, scale, gaps.degenerate)
            remaining = remaining - scale if scale < remaining else 0.0

            if current.substeps - base.substeps > MAX_SUBSTEPS:
                raise DegeneracyError(
                    f"eigenvalues nearly collide along the fault path ({MAX_SUBSTEPS} substeps exhausted)")
    return replace(current, steps=base.steps + steps)


def perturb_multistep(base: SpectralDecomposition, perturbation: np.ndarray, steps: int,
                      gap: Optional[float] = None, refine: bool = True) -> SpectralDecomposition:
    """Spectrum of A + V reached through `steps` first-order updates of size 1/steps.

    With refine=True a step whose correction is too large near a close pair
    of eigenvalues is split into smaller updates. The result keeps the nominal
    step count in `steps`; `substeps` counts the updates actually applied.
    Raises DegeneracyError when the result fails `check_perturbed`.
    """
    if steps < 1:
        raise ValueError(f"step count must be >= 1, got {steps}")
    if not np.any(perturbation):
        return base

    if refine:
        current = _refined_path(base, perturbation, steps, gap)
    else:
        current = base
        for _ in range(steps):
            current = perturb_first_order(current, perturbation, 1.0 / steps, gap)

    check_perturbed(base, current)
    logger.debug(f"multistep m={steps} ({current.substeps - base.substeps} updates): "
                 f"biorthogonality residual {current.biorthogonality_residual():.2e}")
    return current


def spectrum_distance(first: np.ndarray, second: np.ndarray) -> float:
    """Largest eigenvalue mismatch after optimally pairing two spectra."""
    first = np.asarray(first, dtype=complex)
    second = np.asarray(second, dtype=complex)
    cost = np.abs(first[:, None] - second[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max()) if len(rows) else 0.0


def _pairs(array: np.ndarray) -> list:
    return np.stack([array.real, array.imag], axis=-1).tolist()


def _unpairs(pairs) -> np.ndarray:
    array = np.asarray(pairs, dtype=float)
    return array[..., 0] + 1j * array[..., 1]


def dump_decomposition(decomposition: SpectralDecomposition) -> dict:
    # complex entries as [re, im] pairs, for test fixtures
    return {
        "provenance": decomposition.provenance,
        "steps": decomposition.steps,
        "substeps": decomposition.substeps,
        "degenerate": decomposition.degenerate,
        "values": _pairs(decomposition.values),
        "vectors": _pairs(decomposition.vectors),
        "inverse": _pairs(decomposition.inverse),
    }


def load_decomposition(record: dict) -> SpectralDecomposition:
    return SpectralDecomposition(
        vectors=_unpairs(record["vectors"]),
        values=_unpairs(record["values"]),
        inverse=_unpairs(record["inverse"]),
        steps=int(record.get("steps", 0)),
        substeps=int(record.get("substeps", 0)),
        degenerate=bool(record.get("degenerate", False)),
    )
