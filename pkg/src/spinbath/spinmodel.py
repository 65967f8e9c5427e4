"""Static spin Hamiltonian of a single defect species and its exact diagonalization.

The Hamiltonian is assembled in a laboratory frame whose z axis points along
the applied field, so electron-spin projections of the eigenstates can be
read off directly:

    H = g mu_B B S_z / hbar + S.D.S + sum_k S.A_k.I_k - sum_k gamma_k B I_z,k

Every tensor is given in the defect's local frame and rotated into the lab
frame through the Jahn-Teller orientation (local z -> orientation axis) and
the field direction (crystal field direction -> lab z).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import HBAR, MU_B, NUCLEAR_GAMMA, NUCLEAR_SPIN, gauss_to_tesla, mhz_to_angular

MAX_DIMENSION = 64
_ALLOWED_NUCLEAR_SPINS = (0.5, 1.0, 1.5)

TETRAHEDRAL_AXES = tuple(
    tuple(np.array(v, dtype=float) / np.sqrt(3.0))
    for v in ([1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1])
)


class SpinModelError(ValueError):
    """Invalid spin-model input (bad axis, oversize Hilbert space, ...)."""


def _unit(v, what, tol=1e-12):
    v = np.asarray(v, dtype=float).reshape(3)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or abs(norm - 1.0) > tol:
        raise SpinModelError(f"{what} must have unit norm, got |v|={norm!r}")
    return v


def normalized(v):
    v = np.asarray(v, dtype=float).reshape(3)
    return v / np.linalg.norm(v)


def rotation_z_to(axis) -> np.ndarray:
    """Proper rotation taking the z unit vector onto ``axis`` (Rodrigues, minimal angle)."""
    n = normalized(axis)
    z = np.array([0.0, 0.0, 1.0])
    c = float(z @ n)
    v = np.cross(z, n)
    if np.linalg.norm(v) < 1e-14:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def spin_matrices(s: float):
    """Return (Sx, Sy, Sz) for spin ``s`` in the |m = s>, ..., |m = -s> basis."""
    m = np.arange(s, -s - 1, -1)
    dim = len(m)
    sp = np.zeros((dim, dim), dtype=complex)
    for i in range(1, dim):
        sp[i - 1, i] = np.sqrt(s * (s + 1) - m[i] * (m[i] + 1))
    sx = (sp + sp.conj().T) / 2
    sy = (sp - sp.conj().T) / 2j
    sz = np.diag(m).astype(complex)
    return sx, sy, sz


@dataclass(frozen=True)
class NuclearCoupling:
    """Hyperfine coupling to one nucleus.

    ``hyperfine`` holds the principal values (Azz, Axx, Ayy) in rad/s; ``axis``
    is the principal z axis in the defect's local frame.
    """

    isotope: str
    spin: float
    hyperfine: tuple
    axis: tuple = (0.0, 0.0, 1.0)
    gyromagnetic_ratio: float = 0.0

    def __post_init__(self):
        if float(self.spin) not in _ALLOWED_NUCLEAR_SPINS:
            raise SpinModelError(f"nuclear spin {self.spin} not in {_ALLOWED_NUCLEAR_SPINS}")
        hf = np.asarray(self.hyperfine, dtype=float)
        if hf.shape != (3,) or not np.all(np.isfinite(hf)):
            raise SpinModelError("hyperfine must be three finite values (Azz, Axx, Ayy)")
        _unit(self.axis, "hyperfine principal axis")
        object.__setattr__(self, "hyperfine", tuple(hf))
        object.__setattr__(self, "axis", tuple(np.asarray(self.axis, dtype=float)))

    @classmethod
    def from_mhz(cls, isotope, azz, axx, ayy=None, axis=(0.0, 0.0, 1.0), spin=None, gyromagnetic_ratio=None):
        """Build from ordinary-frequency principal values in MHz; axial if ``ayy`` omitted."""
        ayy = axx if ayy is None else ayy
        spin = NUCLEAR_SPIN[isotope] if spin is None else spin
        gamma = NUCLEAR_GAMMA.get(isotope, 0.0) if gyromagnetic_ratio is None else gyromagnetic_ratio
        return cls(isotope, spin, tuple(mhz_to_angular([azz, axx, ayy])), tuple(normalized(axis)), gamma)

    def tensor(self) -> np.ndarray:
        """Hyperfine tensor in the defect local frame (rad/s)."""
        azz, axx, ayy = self.hyperfine
        r = rotation_z_to(self.axis)
        return r @ np.diag([axx, ayy, azz]) @ r.T


@dataclass(frozen=True)
class JahnTellerOrientation:
    axis: tuple
    population: float = 1.0

    def __post_init__(self):
        _unit(self.axis, "Jahn-Teller axis")
        if not (0.0 <= self.population <= 1.0):
            raise SpinModelError("orientation population must lie in [0, 1]")
        object.__setattr__(self, "axis", tuple(np.asarray(self.axis, dtype=float)))

    def rotation(self) -> np.ndarray:
        return rotation_z_to(self.axis)


def tetrahedral_orientations(populations=None):
    """The four <111> orientations, equally populated unless told otherwise."""
    pops = [0.25] * 4 if populations is None else list(populations)
    return tuple(JahnTellerOrientation(ax, p) for ax, p in zip(TETRAHEDRAL_AXES, pops))


@dataclass(frozen=True)
class DefectSpinModel:
    """Static spin-Hamiltonian recipe for one defect species.

    ``zfs_tensor`` is a symmetric, traceless 3x3 matrix in rad/s expressed in
    the local frame; leave it ``None`` for S = 1/2.
    """

    name: str
    electron_spin: float
    g_factor: float
    zfs_tensor: np.ndarray | None = None
    nuclear_couplings: tuple = ()
    jt_orientations: tuple = field(default_factory=lambda: (JahnTellerOrientation((0.0, 0.0, 1.0), 1.0),))
    verified: bool = True
    note: str = ""

    def __post_init__(self):
        s = float(self.electron_spin)
        if s not in (0.5, 1.0, 1.5):
            raise SpinModelError(f"electron spin {s} unsupported (1/2, 1 or 3/2)")
        object.__setattr__(self, "nuclear_couplings", tuple(self.nuclear_couplings))
        object.__setattr__(self, "jt_orientations", tuple(self.jt_orientations))
        if not self.jt_orientations:
            raise SpinModelError("at least one orientation is required")
        total = sum(o.population for o in self.jt_orientations)
        if abs(total - 1.0) > 1e-12:
            raise SpinModelError(f"orientation populations sum to {total}, not 1")
        if self.zfs_tensor is not None:
            d = np.asarray(self.zfs_tensor, dtype=float)
            if d.shape != (3, 3):
                raise SpinModelError("zfs_tensor must be 3x3")
            scale = max(np.abs(d).max(), 1e-300)
            if np.abs(d - d.T).max() > 1e-9 * scale:
                raise SpinModelError("zfs_tensor must be symmetric")
            if abs(np.trace(d)) > 1e-6 * scale:
                raise SpinModelError("zfs_tensor must be traceless (remove the isotropic part)")
            object.__setattr__(self, "zfs_tensor", d)
        if self.dimension > MAX_DIMENSION:
            raise SpinModelError(f"Hilbert-space dimension {self.dimension} exceeds {MAX_DIMENSION}")

    @property
    def dims(self) -> tuple:
        return (int(round(2 * self.electron_spin + 1)),) + tuple(
            int(round(2 * c.spin + 1)) for c in self.nuclear_couplings
        )

    @property
    def dimension(self) -> int:
        return int(np.prod(self.dims))

    def basis_labels(self) -> list:
        spins = (self.electron_spin,) + tuple(c.spin for c in self.nuclear_couplings)
        grids = np.meshgrid(*[np.arange(s, -s - 1, -1) for s in spins], indexing="ij")
        return [tuple(float(g.flat[i]) for g in grids) for i in range(self.dimension)]


@dataclass(frozen=True)
class MagneticField:
    """Static field: ``magnitude`` in tesla, ``direction`` a unit vector in the crystal frame."""

    magnitude: float
    direction: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not np.isfinite(self.magnitude) or self.magnitude < 0:
            raise SpinModelError("field magnitude must be finite and non-negative")
        _unit(self.direction, "field direction")
        object.__setattr__(self, "direction", tuple(np.asarray(self.direction, dtype=float)))

    @classmethod
    def from_gauss(cls, b_gauss, direction=(0.0, 0.0, 1.0)):
        if b_gauss < 0:
            raise SpinModelError("field magnitude must be non-negative")
        return cls(gauss_to_tesla(b_gauss), tuple(normalized(direction)))

    def lab_rotation(self) -> np.ndarray:
        """Rotation mapping crystal-frame vectors into the lab frame (z along the field)."""
        return rotation_z_to(self.direction).T


@dataclass(frozen=True)
class EigenSystem:
    energies: np.ndarray
    states: np.ndarray
    basis_labels: list
    jt_index: int
    electron_spin: float = 0.5

    def electron_projection(self) -> np.ndarray:
        """Dominant m_S label of each eigenstate (lab-frame quantization)."""
        ms = np.array([lab[0] for lab in self.basis_labels])
        values = np.unique(ms)
        weights = np.abs(self.states) ** 2
        per_value = np.array([weights[ms == v].sum(axis=0) for v in values])
        return values[np.argmax(per_value, axis=0)]


def _embed(op, dims, k):
    out = np.array([[1.0 + 0j]])
    for j, d in enumerate(dims):
        out = np.kron(out, op if j == k else np.eye(d))
    return out


def spin_operators(model: DefectSpinModel):
    """Electron and nuclear spin operators on the composite product space.

    Returns ``(S, [I_1, I_2, ...])`` with each entry a triple (x, y, z).
    """
    dims = model.dims
    s_ops = [_embed(o, dims, 0) for o in spin_matrices(model.electron_spin)]
    i_ops = [
        [_embed(o, dims, k + 1) for o in spin_matrices(c.spin)] for k, c in enumerate(model.nuclear_couplings)
    ]
    return s_ops, i_ops


def _bilinear(a_ops, tensor, b_ops):
    return sum(tensor[i, j] * (a_ops[i] @ b_ops[j]) for i in range(3) for j in range(3) if tensor[i, j] != 0.0)


def build_hamiltonian(model: DefectSpinModel, field: MagneticField, jt_index: int = 0, nuclear_zeeman: bool = True):
    """Full static Hamiltonian (rad/s) for one Jahn-Teller orientation.

    Secular and non-secular terms are all kept. The matrix is returned
    exactly Hermitian.
    """
    if not 0 <= jt_index < len(model.jt_orientations):
        raise SpinModelError(f"jt_index {jt_index} out of range for {model.name}")
    local_to_lab = field.lab_rotation() @ model.jt_orientations[jt_index].rotation()
    s_ops, i_ops = spin_operators(model)

    h = model.g_factor * MU_B * field.magnitude / HBAR * s_ops[2]
    if model.zfs_tensor is not None:
        h = h + _bilinear(s_ops, local_to_lab @ model.zfs_tensor @ local_to_lab.T, s_ops)
    for coupling, ops in zip(model.nuclear_couplings, i_ops):
        h = h + _bilinear(s_ops, local_to_lab @ coupling.tensor() @ local_to_lab.T, ops)
        if nuclear_zeeman:
            h = h - coupling.gyromagnetic_ratio * field.magnitude * ops[2]
    h = np.asarray(h, dtype=complex)
    return 0.5 * (h + h.conj().T)


def diagonalize(h, jt_index: int = 0, basis_labels=None, electron_spin: float = 0.5, hermitian_tol: float = 1e-12):
    """Exact eigen-decomposition of a Hermitian Hamiltonian.

    Energies come back ascending (up to roundoff inside degenerate
    clusters). Within a degenerate cluster states are
    ordered by the product-basis index of their largest component, and each
    eigenvector's largest component is made real and positive, so repeated
    calls give identical output.
    """
    h = np.asarray(h, dtype=complex)
    scale = max(np.abs(h).max(), 1e-300)
    if np.abs(h - h.conj().T).max() > hermitian_tol * scale:
        raise ValueError("Hamiltonian is not Hermitian within tolerance")
    energies, states = np.linalg.eigh(h)

    dominant = np.argmax(np.abs(states), axis=0)
    spread = max(energies[-1] - energies[0], scale)
    cluster = np.concatenate([[0], np.cumsum(np.diff(energies) > 1e-10 * spread)])
    order = np.lexsort((dominant, cluster))
    energies, states = energies[order], states[:, order]

    idx = np.argmax(np.abs(states), axis=0)
    phase = states[idx, np.arange(states.shape[1])]
    states = states * (np.abs(phase) / phase)[None, :]

    if basis_labels is None:
        basis_labels = [(i,) for i in range(h.shape[0])]
    return EigenSystem(energies, states, list(basis_labels), jt_index, electron_spin)


def solve(model: DefectSpinModel, field: MagneticField, nuclear_zeeman: bool = True) -> list:
    """Eigen-systems for every Jahn-Teller orientation of ``model``."""
    labels = model.basis_labels()
    return [
        diagonalize(build_hamiltonian(model, field, k, nuclear_zeeman), k, labels, model.electron_spin)
        for k in range(len(model.jt_orientations))
    ]


def electron_zeeman_frequency(model: DefectSpinModel, field: MagneticField) -> float:
    """g mu_B B / hbar in rad/s."""
    return model.g_factor * MU_B * field.magnitude / HBAR


def orientation_list(axes: Sequence, populations=None) -> tuple:
    pops = [1.0 / len(axes)] * len(axes) if populations is None else populations
    return tuple(JahnTellerOrientation(tuple(normalized(a)), p) for a, p in zip(axes, pops))
