"""Dense Hermitian linear algebra: clustered eigendecompositions, matrix
functions, tensor products and partial traces.

Everything here works on plain ``numpy`` arrays; :class:`HermitianOperator`
and :class:`DensityMatrix` are thin validated wrappers around them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, FaithfulnessError, HermiticityError, ShapeError

HERMITICITY_RTOL = 1e-12
DEFAULT_CLUSTERING_RTOL = 1e-8
DEFAULT_FAITHFULNESS_FLOOR = 1e-13


def as_array(A) -> np.ndarray:
    """Return the underlying complex matrix of an operator-like object."""
    if isinstance(A, HermitianOperator):
        return A.entries
    if isinstance(A, DensityMatrix):
        return A.op.entries
    return np.asarray(A, dtype=complex)


def hermiticity_defect(A: np.ndarray) -> float:
    scale = np.max(np.abs(A)) if A.size else 0.0
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(A - A.conj().T)) / scale)


def check_square(A: np.ndarray) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")


def op_norm(A) -> float:
    """Operator (spectral) norm."""
    A = as_array(A)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def trace_norm(A) -> float:
    A = as_array(A)
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, "nuc"))


def commutator(A, B) -> np.ndarray:
    A, B = as_array(A), as_array(B)
    return A @ B - B @ A


@dataclass(frozen=True)
class HermitianOperator:
    """A dense Hermitian matrix with a free-form label.

    The entries are symmetrized on construction, after checking that the
    input is Hermitian to relative precision ``HERMITICITY_RTOL``.
    """

    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        A = np.array(self.entries, dtype=complex)
        check_square(A)
        defect = hermiticity_defect(A)
        if defect > HERMITICITY_RTOL:
            raise HermiticityError(
                f"operator {self.label!r} is not Hermitian (relative defect {defect:.2e})"
            )
        A = 0.5 * (A + A.conj().T)
        A.setflags(write=False)
        object.__setattr__(self, "entries", A)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __add__(self, other):
        return HermitianOperator(self.entries + as_array(other), self.label)

    def __sub__(self, other):
        return HermitianOperator(self.entries - as_array(other), self.label)

    def __mul__(self, c: float):
        return HermitianOperator(self.entries * float(c), self.label)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues grouped into clusters, with their orthogonal projectors.

    Internally the decomposition keeps the orthonormal eigenvectors and the
    cluster index of every eigenvector; projectors are materialized only on
    request.  ``values`` are the cluster values (means of the merged raw
    eigenvalues), strictly increasing.
    """

    values: np.ndarray
    vectors: np.ndarray
    labels: np.ndarray
    raw_eigenvalues: np.ndarray
    clustering_rtol: float

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    @property
    def n_clusters(self) -> int:
        return len(self.values)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Cluster value attached to every eigenvector."""
        return self.values[self.labels]

    def projector(self, k: int) -> np.ndarray:
        cols = self.vectors[:, self.labels == k]
        return cols @ cols.conj().T

    @property
    def clusters(self) -> list[tuple[float, np.ndarray]]:
        return [(float(v), self.projector(k)) for k, v in enumerate(self.values)]

    def cluster_slices(self) -> list[slice]:
        # labels are sorted because eigh returns ascending eigenvalues
        bounds = np.flatnonzero(np.diff(self.labels)) + 1
        edges = np.concatenate([[0], bounds, [len(self.labels)]])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def apply(self, fvals: np.ndarray) -> np.ndarray:
        """Return ``sum_k f_k P_k`` given one value per eigenvector."""
        U = self.vectors
        return (U * fvals) @ U.conj().T

    def reconstruct(self) -> np.ndarray:
        return self.apply(self.eigenvalues)

    def to_basis(self, X) -> np.ndarray:
        U = self.vectors
        return U.conj().T @ as_array(X) @ U

    def from_basis(self, X) -> np.ndarray:
        U = self.vectors
        return U @ X @ U.conj().T


def cluster_eigenvalues(values: np.ndarray, rtol: float) -> tuple[np.ndarray, np.ndarray]:
    """Merge sorted eigenvalues closer than ``rtol * (max|value| + 1)``.

    Chaining consecutive values gives the transitive closure of pairwise
    closeness.  Returns ``(cluster_values, labels)``.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values, np.zeros(0, dtype=int)
    threshold = rtol * (np.max(np.abs(values)) + 1.0)
    breaks = np.diff(values) > threshold
    labels = np.concatenate([[0], np.cumsum(breaks)]).astype(int)
    counts = np.bincount(labels)
    means = np.bincount(labels, weights=values) / counts
    return means, labels


def spectral_from_eigh(
    eigenvalues: np.ndarray, vectors: np.ndarray, clustering_rtol: float
) -> SpectralDecomposition:
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues, vectors = eigenvalues[order], vectors[:, order]
    cvals, labels = cluster_eigenvalues(eigenvalues, clustering_rtol)
    return SpectralDecomposition(
        values=cvals,
        vectors=vectors,
        labels=labels,
        raw_eigenvalues=eigenvalues,
        clustering_rtol=clustering_rtol,
    )


def hermitian_eig(A, clustering_rtol: float = DEFAULT_CLUSTERING_RTOL) -> SpectralDecomposition:
    """Clustered eigendecomposition of a Hermitian matrix.

    Raises:
        HermiticityError: if ``A`` is not Hermitian within tolerance.
    """
    if not isinstance(A, HermitianOperator):
        A = HermitianOperator(as_array(A))
    w, U = np.linalg.eigh(A.entries)
    return spectral_from_eigh(w, U, clustering_rtol)


_FUNCTIONS = ("exp", "log", "power", "scale")


def matrix_function(A, f: str, param: complex = 1.0, *, clustering_rtol=DEFAULT_CLUSTERING_RTOL):
    """Apply a scalar function to a Hermitian matrix by spectral calculus.

    ``f`` is one of ``"exp"`` (``x -> exp(param * x)``), ``"log"``,
    ``"power"`` (``x -> x**param``, principal branch) or ``"scale"``
    (``x -> param * x``).  ``A`` may be an already computed
    :class:`SpectralDecomposition`.

    The function is evaluated on the cluster values; for clusters of
    exactly degenerate eigenvalues this is the same as evaluating on the
    raw eigenvalues.
    """
    if f not in _FUNCTIONS:
        raise ValueError(f"unknown matrix function {f!r}; expected one of {_FUNCTIONS}")
    sd = A if isinstance(A, SpectralDecomposition) else hermitian_eig(A, clustering_rtol)
    x = sd.eigenvalues
    if f == "exp":
        fx = np.exp(param * x)
    elif f == "scale":
        fx = param * x.astype(complex)
    else:
        integral_power = f == "power" and complex(param).imag == 0 and float(complex(param).real).is_integer()
        if integral_power:
            n = int(complex(param).real)
            if n < 0 and np.any(x == 0):
                raise DomainError("negative integer power of a singular matrix")
            fx = x.astype(complex) ** n
        else:
            if x.size and x.min() <= 0:
                raise DomainError(f"{f} requires a positive definite matrix (min eigenvalue {x.min():.3e})")
            fx = np.log(x) if f == "log" else np.exp(complex(param) * np.log(x))
    return sd.apply(fx)


def kron(A, B) -> np.ndarray:
    """Kronecker product, index ``(i_A, i_B) -> i_A * dim_B + i_B``."""
    return np.kron(as_array(A), as_array(B))


def kron_all(factors: Sequence) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for F in factors:
        out = np.kron(out, as_array(F))
    return out


def partial_trace(O, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Trace out every tensor factor not listed in ``keep``.

    The kept factors appear in ascending index order in the result.
    """
    O = as_array(O)
    dims = [int(d) for d in dims]
    if any(d <= 0 for d in dims):
        raise ShapeError("factor dimensions must be positive")
    total = int(np.prod(dims))
    if O.shape != (total, total):
        raise ShapeError(f"operator shape {O.shape} does not match dims {dims}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ShapeError(f"keep indices {keep} out of range for {len(dims)} factors")
    n = len(dims)
    T = O.reshape(dims + dims)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    if 2 * n > len(letters):
        raise ShapeError("too many tensor factors")
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = "".join(row[i] for i in keep) + "".join(col[i] for i in keep)
    R = np.einsum("".join(row) + "".join(col) + "->" + out, T)
    d_keep = int(np.prod([dims[i] for i in keep])) if keep else 1
    return R.reshape(d_keep, d_keep)


@dataclass(frozen=True)
class DensityMatrix:
    """A state given by its density matrix.

    ``log`` optionally carries an exactly known matrix logarithm (Gibbs and
    quasi-free states know theirs); when absent it is computed on demand by
    spectral calculus.
    """

    op: HermitianOperator
    faithful: bool
    log: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_array(
        cls,
        rho,
        *,
        log: np.ndarray | None = None,
        faithfulness_floor: float = DEFAULT_FAITHFULNESS_FLOOR,
        label: str = "rho",
    ) -> "DensityMatrix":
        op = rho if isinstance(rho, HermitianOperator) else HermitianOperator(as_array(rho), label)
        w = np.linalg.eigvalsh(op.entries)
        tr = float(np.real(np.trace(op.entries)))
        if abs(tr - 1.0) > 1e-12:
            raise DomainError(f"density matrix has trace {tr!r}")
        if w.min() < -1e-12 * tr:
            raise DomainError(f"density matrix is not positive (min eigenvalue {w.min():.3e})")
        if log is not None:
            # a finite logarithm certifies strict positivity
            log = HermitianOperator(log, label + ".log").entries
            return cls(op=op, faithful=True, log=log)
        return cls(op=op, faithful=bool(w.min() > faithfulness_floor), log=None)

    @classmethod
    def from_log(cls, log_unnormalized, label: str = "rho") -> "DensityMatrix":
        """Build ``exp(L) / tr exp(L)`` and keep its exact logarithm."""
        L = HermitianOperator(as_array(log_unnormalized)).entries
        w, U = np.linalg.eigh(L)
        shift = w.max()
        log_z = shift + np.log(np.sum(np.exp(w - shift)))
        rho = (U * np.exp(w - log_z)) @ U.conj().T
        log = L - log_z * np.eye(L.shape[0])
        return cls(op=HermitianOperator(rho, label), faithful=True, log=log)

    @property
    def matrix(self) -> np.ndarray:
        return self.op.entries

    @property
    def dim(self) -> int:
        return self.op.dim

    def require_faithful(self, what: str = "state") -> None:
        if not self.faithful:
            raise FaithfulnessError(f"{what} must be faithful")

    @cached_property
    def log_matrix(self) -> np.ndarray:
        self.require_faithful()
        if self.log is not None:
            return self.log
        w, U = np.linalg.eigh(self.matrix)
        return (U * np.log(w)) @ U.conj().T

    def expect(self, A) -> complex:
        return complex(np.trace(self.matrix @ as_array(A)))
