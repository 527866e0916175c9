"""Complex linear-algebra substrate: Hermitian operators, quantum states,
spectral decompositions, ground states, expectations, and fidelity.

A Hermitian operator on an N-dimensional Hilbert space is stored as N^2
real parameters: the N diagonal entries followed by the real parts and
then the imaginary parts of the strict upper triangle (row-major order).
The parameter-to-matrix map is linear and bijective, so any parameter
vector materializes to an exactly self-adjoint matrix and gradient
updates can never leave the Hermitian manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, SchemaError

NORM_TOL = 1e-12


def _upper_indices(dim: int):
    return np.triu_indices(dim, k=1)


def params_to_matrix(params: np.ndarray, dim: int) -> np.ndarray:
    """Materialize the N^2 real parameters into an N x N complex matrix.

    The result satisfies m == m.conj().T exactly: off-diagonal pairs are
    built from the same floats and the diagonal is real by construction.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (dim * dim,):
        raise SchemaError(
            f"expected {dim * dim} parameters for dim={dim}, got shape {params.shape}"
        )
    n_off = dim * (dim - 1) // 2
    diag = params[:dim]
    re = params[dim:dim + n_off]
    im = params[dim + n_off:]
    m = np.zeros((dim, dim), dtype=np.complex128)
    iu = _upper_indices(dim)
    m[iu] = re + 1j * im
    m += m.conj().T
    m[np.diag_indices(dim)] = diag
    return m


def matrix_to_params(m: np.ndarray) -> np.ndarray:
    """Extract the parameter vector of a (numerically) Hermitian matrix.

    Averages m with its adjoint first, which is exact for inputs that are
    already self-adjoint and discards rounding-level asymmetry otherwise.
    """
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SchemaError(f"expected a square matrix, got shape {m.shape}")
    dim = m.shape[0]
    scale = 1.0 + np.linalg.norm(m)
    asym = np.abs(m - m.conj().T).max()
    if asym > 1e-8 * scale:
        raise SchemaError(f"matrix is not Hermitian: max |m - m^H| = {asym:.3e}")
    h = 0.5 * (m + m.conj().T)
    iu = _upper_indices(dim)
    return np.concatenate([h.diagonal().real, h[iu].real, h[iu].imag])


def matrix_to_param_grad(g: np.ndarray) -> np.ndarray:
    """Adjoint of ``params_to_matrix``: given the Hermitian matrix G with
    d(loss) = Tr(dM G), return the gradient with respect to the parameters.

    Diagonal entries map to Re(G_ii), upper-triangle real parts to
    2 Re(G_ij), imaginary parts to 2 Im(G_ij).
    """
    g = np.asarray(g)
    dim = g.shape[0]
    iu = _upper_indices(dim)
    return np.concatenate([g.diagonal().real, 2.0 * g[iu].real, 2.0 * g[iu].imag])


def canonical_phase(vecs: np.ndarray) -> np.ndarray:
    """Rotate each column onto the deterministic representative of its ray.

    After the rotation the component of largest modulus (first such index
    on ties) is exactly real and non-negative. Works on stacks: the last
    two axes are interpreted as (component, column).
    """
    vecs = np.asarray(vecs, dtype=np.complex128)
    mags = np.abs(vecs)
    idx = np.argmax(mags, axis=-2)
    lead = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    lead_abs = np.abs(lead)
    safe = np.where(lead_abs == 0.0, 1.0, lead)
    phase = safe / np.abs(safe)
    out = vecs * phase.conj()
    np.put_along_axis(out, idx[..., None, :], lead_abs.astype(np.complex128), axis=-2)
    return out


class HermitianOperator:
    """An N x N self-adjoint matrix stored through its real parametrization.

    Immutable after construction; the materialized matrix is cached.
    """

    __slots__ = ("dim", "params", "_matrix")

    def __init__(self, params: np.ndarray, dim: int):
        if dim < 1:
            raise SchemaError(f"dim must be >= 1, got {dim}")
        params = np.array(params, dtype=np.float64)
        if params.shape != (dim * dim,):
            raise SchemaError(
                f"expected {dim * dim} parameters for dim={dim}, got shape {params.shape}"
            )
        params.flags.writeable = False
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_matrix", None)

    def __setattr__(self, name, value):
        raise AttributeError("HermitianOperator is immutable")

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "HermitianOperator":
        m = np.asarray(m)
        return cls(matrix_to_params(m), m.shape[0])

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            m = params_to_matrix(self.params, self.dim)
            m.flags.writeable = False
            object.__setattr__(self, "_matrix", m)
        return self._matrix

    def __repr__(self):
        return f"HermitianOperator(dim={self.dim})"


class QuantumState:
    """A unit-norm complex vector, stored as the canonical representative
    of its ray (largest-modulus component real and non-negative)."""

    __slots__ = ("dim", "amplitudes")

    def __init__(self, amplitudes: np.ndarray):
        amps = np.asarray(amplitudes, dtype=np.complex128)
        if amps.ndim != 1 or amps.size < 1:
            raise SchemaError(f"amplitudes must be a nonempty vector, got shape {amps.shape}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise SchemaError(f"state norm {norm!r} deviates from 1 by more than {NORM_TOL}")
        amps = canonical_phase(amps[:, None])[:, 0]
        amps.flags.writeable = False
        object.__setattr__(self, "dim", amps.size)
        object.__setattr__(self, "amplitudes", amps)

    def __setattr__(self, name, value):
        raise AttributeError("QuantumState is immutable")

    @classmethod
    def basis(cls, dim: int, index: int) -> "QuantumState":
        amps = np.zeros(dim, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps)

    def __repr__(self):
        return f"QuantumState(dim={self.dim})"


@dataclass(frozen=True)
class EigenDecomposition:
    """Full spectral decomposition: ascending eigenvalues paired with an
    orthonormal list of eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: list = field(repr=False)

    def ground(self) -> tuple[float, QuantumState, float]:
        energy = float(self.eigenvalues[0])
        gap = (
            float(self.eigenvalues[1] - self.eigenvalues[0])
            if self.eigenvalues.size > 1
            else math.inf
        )
        return energy, self.eigenvectors[0], gap


def build_hermitian(params: np.ndarray, dim: int) -> HermitianOperator:
    """Build a Hermitian operator from its N^2 real parameters."""
    return HermitianOperator(params, dim)


def eigh_matrix(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spectral decomposition of a Hermitian matrix (or stack of them).

    Returns ascending eigenvalues and phase-canonicalized eigenvector
    columns. Shared by the typed API and the training fast path.
    """
    try:
        evals, evecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Hermitian eigensolver failed to converge: {exc}") from exc
    return evals, canonical_phase(evecs)


def eigh(op: HermitianOperator) -> EigenDecomposition:
    """Full spectral decomposition of a Hermitian operator."""
    evals, evecs = eigh_matrix(op.matrix())
    states = [QuantumState(evecs[:, i]) for i in range(op.dim)]
    return EigenDecomposition(eigenvalues=evals, eigenvectors=states)


def ground_state(op: HermitianOperator) -> tuple[float, QuantumState, float]:
    """Lowest eigenvalue, its eigenvector, and the spectral gap.

    On a (near-)degenerate ground space the returned vector is the first
    one produced by the deterministic eigensolver ordering; degeneracy is
    visible to callers through the gap value itself.
    """
    return eigh(op).ground()


def expectation(op: HermitianOperator, state: QuantumState) -> float:
    """Expected measurement outcome <psi|M|psi> of M on psi."""
    if op.dim != state.dim:
        raise SchemaError(f"operator dim {op.dim} != state dim {state.dim}")
    m = op.matrix()
    val = np.vdot(state.amplitudes, m @ state.amplitudes)
    tol = 1e-12 * (1.0 + np.linalg.norm(m))
    if abs(val.imag) > tol:
        raise NumericError(f"expectation has imaginary residue {val.imag:.3e} > {tol:.3e}")
    return float(val.real)


def fidelity(s1: QuantumState, s2: QuantumState) -> float:
    """Quantum fidelity |<psi1|psi2>|^2: symmetric, phase-invariant, in [0, 1]."""
    if s1.dim != s2.dim:
        raise SchemaError(f"state dims differ: {s1.dim} != {s2.dim}")
    overlap = np.vdot(s1.amplitudes, s2.amplitudes)
    return float(min(1.0, max(0.0, abs(overlap) ** 2)))
