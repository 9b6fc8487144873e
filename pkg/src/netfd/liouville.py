"""Truncated Fock and Liouville spaces with check/tilde superoperators.

Superstates are stored m-index major: the pair ``|m,n>>`` sits at
``index(m) * dim_h + index(n)``, i.e. the row-major flattening of the
operator ``|m><n|``.  Left multiplication by a Fock operator ``X`` is then
``kron(X, I)`` and right multiplication by ``Y`` is ``kron(I, Y.T)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError

TOL_EXACT = 1e-12
TOL_INTEGRATED = 1e-8
MAX_FOCK_DIM = 4096

BOSON = 1
FERMION = -1


def sqrt_sigma(sigma: int) -> complex:
    return 1.0 if sigma == BOSON else 1j


@dataclass(frozen=True)
class ModeSpec:
    bare_energy: float
    statistics: int = BOSON
    cutoff: int = 1

    def __post_init__(self):
        if self.statistics not in (BOSON, FERMION):
            raise ConfigurationError(f"statistics must be +1 or -1, got {self.statistics}")
        if self.statistics == FERMION:
            object.__setattr__(self, "cutoff", 1)
        elif self.cutoff < 1:
            raise ConfigurationError(f"boson cutoff must be >= 1, got {self.cutoff}")

    @property
    def sigma(self) -> int:
        return self.statistics

    @classmethod
    def boson(cls, energy: float, cutoff: int) -> "ModeSpec":
        return cls(energy, BOSON, cutoff)

    @classmethod
    def fermion(cls, energy: float) -> "ModeSpec":
        return cls(energy, FERMION, 1)


@dataclass(frozen=True, eq=False)
class LiouvilleBasis:
    """Enumerated doubled basis over a fixed, ordered list of modes."""

    modes: tuple[ModeSpec, ...]
    occupations: np.ndarray = field(repr=False)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def dim_h(self) -> int:
        return self.occupations.shape[0]

    @property
    def dim_l(self) -> int:
        return self.dim_h**2

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([m.sigma for m in self.modes])

    @cached_property
    def _strides(self) -> np.ndarray:
        dims = [m.cutoff + 1 for m in self.modes]
        strides = np.ones(len(dims), dtype=np.int64)
        for j in range(len(dims) - 2, -1, -1):
            strides[j] = strides[j + 1] * dims[j + 1]
        return strides

    def fock_index(self, occ) -> int:
        occ = np.asarray(occ, dtype=np.int64)
        for j, m in enumerate(self.modes):
            if not 0 <= occ[j] <= m.cutoff:
                raise IndexError(f"occupation {occ[j]} out of range for mode {j}")
        return int(occ @ self._strides)

    def encode(self, m, n) -> int:
        return self.fock_index(m) * self.dim_h + self.fock_index(n)

    def decode(self, index: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        i, k = divmod(int(index), self.dim_h)
        return tuple(int(x) for x in self.occupations[i]), tuple(int(x) for x in self.occupations[k])

    @cached_property
    def fermion_count(self) -> np.ndarray:
        """Number of occupied fermionic modes of each Fock basis state."""
        mask = self.sigmas == FERMION
        return self.occupations[:, mask].sum(axis=1)

    @cached_property
    def interior_fock(self) -> np.ndarray:
        """Boolean mask of Fock states with every boson below its cutoff."""
        mask = np.ones(self.dim_h, dtype=bool)
        for j, m in enumerate(self.modes):
            if m.sigma == BOSON:
                mask &= self.occupations[:, j] < m.cutoff
        return mask

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask over Liouville indices where both m and n are interior."""
        f = self.interior_fock
        return np.outer(f, f).ravel()

    @cached_property
    def charge(self) -> np.ndarray:
        """Total occupation difference mu - nu of each Liouville basis element."""
        tot = self.occupations.sum(axis=1)
        return np.subtract.outer(tot, tot).ravel()

    # -- Fock-space building blocks -------------------------------------

    def fock_annihilator(self, j: int) -> sp.csr_matrix:
        """Fock-space ``a_j`` with Jordan-Wigner signs in mode order."""
        self._check_mode(j)
        occ = self.occupations
        rows, cols, vals = [], [], []
        fermion_before = (self.sigmas[:j] == FERMION)
        for col in range(self.dim_h):
            mj = occ[col, j]
            if mj == 0:
                continue
            new = occ[col].copy()
            new[j] -= 1
            val = np.sqrt(mj)
            if self.modes[j].sigma == FERMION:
                val *= (-1) ** int(occ[col, :j][fermion_before].sum())
            rows.append(self.fock_index(new))
            cols.append(col)
            vals.append(val)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim_h, self.dim_h), dtype=complex)

    def _check_mode(self, j: int):
        if not 0 <= j < self.n_modes:
            raise IndexError(f"mode index {j} out of range for {self.n_modes} modes")

    @cached_property
    def _tilde_phase(self) -> sp.dia_matrix:
        # sigma^(mu - nu) counted over fermionic occupations only
        f = self.fermion_count
        diff = np.subtract.outer(f, f).ravel()
        return sp.diags(np.where(diff % 2 == 0, 1.0, -1.0).astype(complex))

    @cached_property
    def _conj_phase(self) -> np.ndarray:
        # (sqrt sigma)^((mu+nu)^2): i on odd total fermion number, else 1
        f = self.fermion_count
        tot = np.add.outer(f, f).ravel()
        return np.where(tot % 2 == 0, 1.0 + 0j, 1j)

    @cached_property
    def _swap(self) -> sp.csr_matrix:
        d = self.dim_h
        idx = np.arange(d * d)
        i, k = np.divmod(idx, d)
        perm = k * d + i
        return sp.csr_matrix((np.ones(d * d), (perm, idx)), shape=(d * d, d * d), dtype=complex)


def build_basis(modes, max_fock_dim: int = MAX_FOCK_DIM) -> LiouvilleBasis:
    modes = tuple(modes)
    if not modes:
        raise ConfigurationError("at least one mode is required")
    dims = [m.cutoff + 1 for m in modes]
    dim_h = int(np.prod(dims))
    if dim_h > max_fock_dim:
        product = " x ".join(str(d) for d in dims)
        raise ConfigurationError(
            f"Fock dimension {product} = {dim_h} exceeds maximum {max_fock_dim}"
        )
    occ = np.array(list(itertools.product(*[range(d) for d in dims])), dtype=np.int64)
    return LiouvilleBasis(modes, occ.reshape(dim_h, len(modes)))


# -- superstates ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SuperState:
    basis: LiouvilleBasis
    amplitudes: np.ndarray

    def as_operator(self) -> np.ndarray:
        d = self.basis.dim_h
        return self.amplitudes.reshape(d, d)

    @classmethod
    def from_operator(cls, basis: LiouvilleBasis, op) -> "SuperState":
        op = op.toarray() if sp.issparse(op) else np.asarray(op)
        return cls(basis, np.asarray(op, dtype=complex).ravel().copy())


def identity_superstate(basis: LiouvilleBasis) -> SuperState:
    return SuperState(basis, np.eye(basis.dim_h, dtype=complex).ravel())


def inner_product(a: SuperState, b: SuperState) -> complex:
    if a.basis is not b.basis:
        raise ValueError("superstates belong to different bases")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


# -- superoperators ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SuperOperatorMatrix:
    """Sparse superoperator tied to a basis, with fermion-parity character."""

    basis: LiouvilleBasis
    mat: sp.csr_matrix
    odd: bool = False

    def _wrap(self, mat, odd=None):
        return SuperOperatorMatrix(self.basis, sp.csr_matrix(mat), self.odd if odd is None else odd)

    def __matmul__(self, other):
        if isinstance(other, SuperOperatorMatrix):
            return self._wrap(self.mat @ other.mat, self.odd ^ other.odd)
        if isinstance(other, SuperState):
            return SuperState(self.basis, self.mat @ other.amplitudes)
        return self.mat @ other

    def __add__(self, other):
        if isinstance(other, SuperOperatorMatrix):
            return self._wrap(self.mat + other.mat, self.odd or other.odd)
        return self._wrap(self.mat + other * sp.identity(self.basis.dim_l, format="csr"))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1) * other

    def __rsub__(self, other):
        return (-1) * self + other

    def __mul__(self, c):
        return self._wrap(self.mat * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def dag(self) -> "SuperOperatorMatrix":
        return self._wrap(self.mat.conj().T)

    def toarray(self) -> np.ndarray:
        return self.mat.toarray()


def scommutator(x: SuperOperatorMatrix, y: SuperOperatorMatrix, sigma: int = BOSON):
    """``[x, y]_sigma = xy - sigma yx``."""
    return x @ y - sigma * (y @ x)


def _left(basis: LiouvilleBasis, op) -> sp.csr_matrix:
    return sp.kron(op, sp.identity(basis.dim_h), format="csr")


def _right(basis: LiouvilleBasis, op) -> sp.csr_matrix:
    return sp.kron(sp.identity(basis.dim_h), sp.csr_matrix(op).T, format="csr")


def left_multiplication(basis: LiouvilleBasis, op, odd: bool = False) -> SuperOperatorMatrix:
    """Check superoperator of an arbitrary Fock operator: ``|A>> -> |op A>>``."""
    return SuperOperatorMatrix(basis, _left(basis, sp.csr_matrix(op, dtype=complex)), odd)


def super_annihilator(basis: LiouvilleBasis, j: int, kind: str = "check") -> SuperOperatorMatrix:
    a = basis.fock_annihilator(j)
    sigma = basis.modes[j].sigma
    odd = sigma == FERMION
    if kind == "check":
        return SuperOperatorMatrix(basis, _left(basis, a), odd)
    if kind == "tilde":
        mat = _right(basis, a.conj().T)
        if odd:
            # phase is read off the input state, so it acts first
            mat = sqrt_sigma(sigma) * (mat @ basis._tilde_phase)
        return SuperOperatorMatrix(basis, sp.csr_matrix(mat), odd)
    raise ValueError(f"kind must be 'check' or 'tilde', got {kind!r}")


def super_number(basis: LiouvilleBasis, j: int, kind: str = "check") -> SuperOperatorMatrix:
    a = super_annihilator(basis, j, kind)
    return a.dag() @ a


def tilde_conjugate(x: SuperOperatorMatrix) -> SuperOperatorMatrix:
    """Antilinear tilde map ``X -> J X J^-1`` with the superstate conjugation J."""
    b = x.basis
    phase = sp.diags(b._conj_phase)
    mat = phase @ b._swap @ x.mat.conj() @ b._swap @ sp.diags(1.0 / b._conj_phase)
    return SuperOperatorMatrix(b, sp.csr_matrix(mat), x.odd)


def tilde_state(state: SuperState) -> SuperState:
    b = state.basis
    return SuperState(b, b._conj_phase * (b._swap @ state.amplitudes.conj()))


def check_hermitian(h, tol: float = TOL_EXACT) -> np.ndarray:
    h = h.toarray() if sp.issparse(h) else np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    err = np.max(np.abs(h - h.conj().T)) if h.size else 0.0
    if err > tol:
        raise ValueError(f"Hamiltonian is not Hermitian (max deviation {err:.3e})")
    return h


def build_total_super_hamiltonian(h_fock, basis: LiouvilleBasis, tol: float = TOL_EXACT):
    """``H_check - H_tilde`` for a Hermitian, fermion-parity-even Fock Hamiltonian."""
    h = check_hermitian(h_fock, tol)
    if h.shape[0] != basis.dim_h:
        raise ValueError(f"Hamiltonian dimension {h.shape[0]} != Fock dimension {basis.dim_h}")
    h_check = left_multiplication(basis, h)
    return h_check - tilde_conjugate(h_check)


def row_sum_residual(x: SuperOperatorMatrix, mask: np.ndarray | None = None) -> float:
    """``max |<<I|X|m,n>>|`` over columns, optionally restricted by ``mask``."""
    row = x.mat.T @ identity_superstate(x.basis).amplitudes
    if mask is not None:
        row = row[mask]
    return float(np.max(np.abs(row))) if row.size else 0.0


def restrict(x, mask: np.ndarray) -> np.ndarray:
    """Dense block of ``x`` with rows and columns restricted to ``mask``."""
    mat = x.mat if isinstance(x, SuperOperatorMatrix) else sp.csr_matrix(x)
    idx = np.flatnonzero(mask)
    return mat[idx][:, idx].toarray()


# -- identity suite ------------------------------------------------------


def interior_mask(basis: LiouvilleBasis, depth: int = 1) -> np.ndarray:
    """Liouville mask with every boson at least ``depth`` below its cutoff on both sides."""
    f = np.ones(basis.dim_h, dtype=bool)
    for j, m in enumerate(basis.modes):
        if m.sigma == BOSON:
            f &= basis.occupations[:, j] <= m.cutoff - depth
    return np.outer(f, f).ravel()


def _max_abs(x) -> float:
    x = x.toarray() if sp.issparse(x) else np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


def _random_polynomial(basis: LiouvilleBasis, rng, terms: int = 3) -> SuperOperatorMatrix:
    """Random complex combination of products of up to two check generators."""
    gens = []
    for j in range(basis.n_modes):
        a = super_annihilator(basis, j, "check")
        gens += [a, a.dag()]
    total = None
    for _ in range(terms):
        k = rng.integers(1, 3)
        mono = gens[rng.integers(len(gens))]
        for _ in range(k - 1):
            mono = mono @ gens[rng.integers(len(gens))]
        term = complex(rng.normal(), rng.normal()) * mono
        total = term if total is None else SuperOperatorMatrix(basis, total.mat + term.mat, total.odd or term.odd)
    return total


def algebra_suite(basis: LiouvilleBasis, rng=None, samples: int = 3) -> dict[str, float]:
    """Residuals of the superoperator identities on interior blocks.

    Boson identities are checked where truncation cannot reach; fermion-only
    bases have an empty boundary, so the residuals there are global.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inner = basis.interior
    bra = identity_superstate(basis).amplitudes
    out: dict[str, float] = {}

    def record(name, value):
        out[name] = max(out.get(name, 0.0), float(value))

    check = [super_annihilator(basis, j, "check") for j in range(basis.n_modes)]
    tilde = [super_annihilator(basis, j, "tilde") for j in range(basis.n_modes)]
    eye = sp.identity(int(inner.sum()), format="csr")
    for j, k in itertools.product(range(basis.n_modes), repeat=2):
        s = FERMION if check[j].odd and check[k].odd else BOSON
        for name, ops in (("ccr_check", check), ("ccr_tilde", tilde)):
            c = restrict(scommutator(ops[j], ops[k].dag(), s), inner)
            record(name, _max_abs(c - (j == k) * eye))
            record(name, _max_abs(restrict(scommutator(ops[j], ops[k], s), inner)))
        record("mixed_check_tilde", _max_abs(scommutator(check[j], tilde[k], s).mat))
        record("mixed_check_tilde", _max_abs(scommutator(check[j], tilde[k].dag(), s).mat))

    for j in range(basis.n_modes):
        occ = basis.occupations[:, j]
        m_idx = np.repeat(occ, basis.dim_h)
        n_idx = np.tile(occ, basis.dim_h)
        record("number_check", _max_abs(super_number(basis, j, "check").mat - sp.diags(m_idx.astype(complex))))
        record("number_tilde", _max_abs(super_number(basis, j, "tilde").mat - sp.diags(n_idx.astype(complex))))
        r = sqrt_sigma(basis.modes[j].sigma)
        v1 = (tilde[j] - r * check[j].dag()) @ bra
        v2 = (tilde[j].dag() - r * check[j]) @ bra
        record("identity_state_relation", max(_max_abs(v1[inner]), _max_abs(v2[inner])))
        record("tilde_generator", _max_abs(tilde_conjugate(check[j]).mat - tilde[j].mat))

    ident = identity_superstate(basis)
    record("tilde_invariant_identity", _max_abs(tilde_state(ident).amplitudes - ident.amplitudes))

    deep = interior_mask(basis, 2)
    for _ in range(samples):
        x = _random_polynomial(basis, rng)
        y = _random_polynomial(basis, rng)
        c = complex(rng.normal(), rng.normal())
        tx, ty = tilde_conjugate(x), tilde_conjugate(y)
        record("tilde_involution", _max_abs(tilde_conjugate(tx).mat - x.mat))
        record("tilde_antilinear", _max_abs(tilde_conjugate(c * x).mat - np.conj(c) * tx.mat))
        record("tilde_product", _max_abs(tilde_conjugate(x @ y).mat - (tx @ ty).mat))
        record("tilde_sum", _max_abs(tilde_conjugate(x + y).mat - (tx + ty).mat))
        record("tilde_adjoint", _max_abs(tilde_conjugate(x.dag()).mat - tx.dag().mat))
        # A~^dagger |I>> = A^ |I>> for even A, i A^ |I>> for odd A, on monomials
        j, k = rng.integers(basis.n_modes, size=2)
        for mono in (check[j], check[j].dag(), check[j] @ check[k].dag(), check[j].dag() @ check[k]):
            phase = 1j if mono.odd else 1.0
            lhs = tilde_conjugate(mono).dag() @ bra
            record("tilde_dagger_identity", _max_abs((lhs - phase * (mono @ bra))[deep]))

    h = np.zeros((basis.dim_h, basis.dim_h), dtype=complex)
    for j, k in itertools.product(range(basis.n_modes), repeat=2):
        if basis.modes[j].sigma == basis.modes[k].sigma:
            c = complex(rng.normal(), rng.normal())
            hop = basis.fock_annihilator(j).conj().T @ basis.fock_annihilator(k)
            h += (c * hop + np.conj(c) * hop.conj().T).toarray()
    record("identity_left_null", row_sum_residual(build_total_super_hamiltonian(h, basis)))
    return out
