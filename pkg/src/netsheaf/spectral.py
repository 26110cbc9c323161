"""Bottom-of-spectrum eigenvalues and spectral-stability metrics.

Sheaf Laplacians are densified and handed to a dense symmetric eigensolver
(no iterative solver: the intended scale is n*d up to 10^4). Two
discrepancy metrics compare the bottom-k eigenvalues of an operator against
a reference resolution: a normalized l2 distance and a worst-case error
relative to the reference's k-th eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .sheaf import BlockSheafLaplacian

DENSE_LIMIT = 10_000

# structural kernel eigenvalues come out as round-off noise; anything below
# this fraction of the operator-norm bound is reported as an exact zero
_ZERO_CLAMP = 1e-12


@dataclass(frozen=True)
class SpectralReport:
    """Bottom-k eigenvalues of one operator plus discrepancies to a reference."""

    n: int
    d: int
    k: int
    eigenvalues: np.ndarray
    reference_n: int
    spec_l2: float
    spec_rel_max: float


def bottom_k_eigenvalues(lap: BlockSheafLaplacian, k: int,
                         dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """k smallest eigenvalues, ascending, with clamped structural zeros.

    Each returned pair (eigenvalue, eigenvector) is residual-checked against
    ||L v - lambda v|| <= 1e-7 * bound, where bound is a Gershgorin-style
    upper estimate of the operator norm. Raises when n*d exceeds
    ``dense_limit``; reduce n or raise the limit explicitly.
    """
    nd = lap.n * lap.d
    if k < 1 or k > nd:
        raise ValueError(f"k must lie in [1, {nd}]")
    if nd > dense_limit:
        raise ValueError(
            f"dense eigensolve of size {nd} exceeds the limit {dense_limit}; "
            "reduce n or pass a larger dense_limit")
    dense = lap.to_dense()
    vals, vecs = scipy.linalg.eigh(dense, subset_by_index=[0, k - 1])
    bound = max(lap.operator_norm_bound(), 1e-300)
    residual = np.linalg.norm(dense @ vecs - vecs * vals[None, :], axis=0)
    if residual.max() > 1e-7 * bound:
        raise ArithmeticError("eigenpair residual check failed")
    vals = vals.copy()
    vals[np.abs(vals) < _ZERO_CLAMP * bound] = 0.0
    return vals


def spec_l2(eigs, ref, k: int) -> float:
    """Low-frequency l2 discrepancy (1/k) * sqrt(sum of squared gaps)."""
    eigs = np.asarray(eigs, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if len(eigs) < k or len(ref) < k:
        raise ValueError(f"need at least k={k} eigenvalues on both sides")
    return float(np.sqrt(((eigs[:k] - ref[:k]) ** 2).sum()) / k)


def spec_rel_max(eigs, ref, k: int) -> float:
    """Worst bottom-k eigenvalue error relative to the reference's k-th value."""
    eigs = np.asarray(eigs, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if len(eigs) < k or len(ref) < k:
        raise ValueError(f"need at least k={k} eigenvalues on both sides")
    if ref[k - 1] <= 0.0:
        raise ValueError("degenerate reference: its k-th eigenvalue is not positive")
    return float(np.abs(eigs[:k] - ref[:k]).max() / ref[k - 1])


def spectral_report(lap: BlockSheafLaplacian, k: int, reference=None,
                    reference_n: int | None = None,
                    dense_limit: int = DENSE_LIMIT) -> SpectralReport:
    """Eigenvalues of ``lap`` plus both metrics against a reference spectrum.

    With no reference the operator is compared to itself (both metrics 0).
    """
    eigs = bottom_k_eigenvalues(lap, k, dense_limit=dense_limit)
    if reference is None:
        reference = eigs
        reference_n = lap.n
    return SpectralReport(
        n=lap.n, d=lap.d, k=k, eigenvalues=eigs,
        reference_n=int(reference_n),
        spec_l2=spec_l2(eigs, reference, k),
        spec_rel_max=spec_rel_max(eigs, reference, k))


def write_sweep_csv(path, reports, p: int, seeds, comment: str) -> None:
    """Sweep rows: p, d, n, seed, k, both metrics, then the k eigenvalues."""
    from ._csvio import write_csv

    if len(reports) != len(seeds):
        raise ValueError("need one seed per report")
    k = reports[0].k if reports else 0
    header = ["p", "d", "n", "seed", "k", "spec_l2", "spec_rel_max"]
    header += [f"eig_{i}" for i in range(k)]
    rows = []
    for report, seed in zip(reports, seeds):
        row = [p, report.d, report.n, seed, report.k,
               report.spec_l2, report.spec_rel_max]
        row.extend(report.eigenvalues.tolist())
        rows.append(row)
    write_csv(path, comment=comment, header=header, rows=rows)
