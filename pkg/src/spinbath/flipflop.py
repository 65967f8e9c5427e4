"""Flip-flop rates, the suppression factor alpha, and the bath correlation time.

Two spins flip-flop at

    R = C_perp^2 Gamma_d / (Gamma_d^2 + delta^2)

where delta is the detuning between the transitions they occupy. Averaging
over the occupied transitions of a species gives the suppression factor

    alpha = sum_ab w_a w_b Gamma_d^2 / (Gamma_d^2 + delta_ab^2),

which is 1 for a bare spin-1/2 and sum_k p_k^2 when lines fall into
well-separated, internally degenerate groups.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .constants import CARBON_DENSITY, TWO_PI, dipolar_prefactor, mhz_to_angular
from .spectra import TransitionLine, peak_groups, species_lines
from .spinmodel import DefectSpinModel, MagneticField


@dataclass(frozen=True)
class FlipFlopChannel:
    line_a: TransitionLine
    line_b: TransitionLine
    detuning_delta: float  # rad/s
    weight: float


@dataclass
class BathComposition:
    """Species and their densities (ppm of lattice sites).

    ``gamma_d`` is the flip-flop linewidth. When ``gamma_d_reference_ppm`` is
    set the linewidth is taken to be ``gamma_d`` at that total density and to
    scale linearly with total density elsewhere, as a dipolar linewidth does.
    """

    entries: list
    gamma_d: float = TWO_PI * 1e6
    lattice_density: float = CARBON_DENSITY
    gamma_d_reference_ppm: float | None = None

    def __post_init__(self):
        self.entries = [(m, float(ppm)) for m, ppm in self.entries]
        for m, ppm in self.entries:
            if not isinstance(m, DefectSpinModel):
                raise TypeError("bath entries must be (DefectSpinModel, ppm) pairs")
            if not np.isfinite(ppm) or ppm < 0:
                raise ValueError(f"density of {m.name} must be a finite non-negative ppm value")
        if not self.gamma_d > 0:
            raise ValueError("gamma_d must be positive")
        if not self.lattice_density > 0:
            raise ValueError("lattice density must be positive")
        if self.gamma_d_reference_ppm is not None and not self.gamma_d_reference_ppm > 0:
            raise ValueError("gamma_d_reference_ppm must be positive")

    @property
    def total_ppm(self) -> float:
        return float(sum(ppm for _, ppm in self.entries))

    @property
    def total_density(self) -> float:
        return 1e-6 * self.total_ppm * self.lattice_density

    def density_of(self, ppm: float) -> float:
        return 1e-6 * ppm * self.lattice_density

    def effective_gamma_d(self) -> float:
        if self.gamma_d_reference_ppm is None or self.total_ppm == 0:
            return self.gamma_d
        return self.gamma_d * self.total_ppm / self.gamma_d_reference_ppm

    def scaled(self, factor: float) -> "BathComposition":
        return replace(self, entries=[(m, ppm * factor) for m, ppm in self.entries])

    def with_density(self, name: str, ppm: float) -> "BathComposition":
        if name not in [m.name for m, _ in self.entries]:
            raise KeyError(f"no species named {name!r} in bath")
        return replace(self, entries=[(m, ppm if m.name == name else p) for m, p in self.entries])


def _line_arrays(lines):
    f = np.array([ln.frequency for ln in lines], dtype=float)
    w = np.array([float(ln.intensity) for ln in lines], dtype=float)
    return f, w


def lorentz_factor(delta, gamma_d):
    return gamma_d**2 / (gamma_d**2 + np.asarray(delta, dtype=float) ** 2)


def alpha_from_lines(lines: Sequence[TransitionLine], gamma_d: float) -> float:
    """Intensity-product weighted Lorentzian overlap of a line list."""
    if not gamma_d > 0:
        raise ValueError("gamma_d must be positive")
    if len(lines) == 0:
        raise ValueError("no allowed transitions")
    f, w = _line_arrays(lines)
    if w.sum() <= 0:
        raise ValueError("line intensities sum to zero")
    w = w / w.sum()
    d = mhz_to_angular(f[:, None] - f[None, :])
    return float(w @ lorentz_factor(d, gamma_d) @ w)


def alpha_exact(model: DefectSpinModel, field: MagneticField, gamma_d: float, nuclear_zeeman: bool = True) -> float:
    """Suppression factor from exact diagonalization over all electron-flip line pairs."""
    return alpha_from_lines(species_lines(model, field, electron_flip_only=True, nuclear_zeeman=nuclear_zeeman),
                            gamma_d)


def flipflop_channels(lines: Sequence[TransitionLine]) -> list:
    return [
        FlipFlopChannel(a, b, float(mhz_to_angular(abs(a.frequency - b.frequency))), a.intensity * b.intensity)
        for a in lines for b in lines
    ]


def alpha_peaks(lines: Sequence[TransitionLine], gamma_d: float | None = None, cluster_tolerance: float = 1.0):
    """Sum of squared peak weights after single-linkage clustering.

    Exact arithmetic is kept when the intensities are ``Fraction`` objects.
    ``gamma_d`` is accepted for signature symmetry with :func:`alpha_exact`.
    """
    if cluster_tolerance <= 0:
        raise ValueError("cluster_tolerance must be positive")
    if len(lines) == 0:
        raise ValueError("no allowed transitions")
    weights = [w for _, w, _ in peak_groups(lines, cluster_tolerance)]
    total = sum(weights)
    if total == 0:
        raise ValueError("line intensities sum to zero")
    return sum(p * p for p in weights) / (total * total)


def alpha_closed_form_jt() -> Fraction:
    """Hand estimate for P1 with the field along one JT axis, neglecting state mixing.

    Pairs of spins on the three off-axis orientations (weight 3/9) share lines
    whose nuclear-resolved weights are 1/4 and 3/4; the aligned-axis pairs add
    the cross term with weight 1/9. Returned as an exact ``Fraction``.
    """
    return Fraction(3, 9) * (Fraction(1, 16) + Fraction(9, 16)) + Fraction(1, 9) * (2 * Fraction(1, 4) * Fraction(3, 4))


def pair_flipflop_rate(c_perp, delta, gamma_d):
    """C_perp^2 Gamma_d / (Gamma_d^2 + delta^2), all angular; returns 1/s."""
    gamma_d = np.asarray(gamma_d, dtype=float)
    if np.any(gamma_d <= 0):
        raise ValueError("gamma_d must be positive")
    c_perp = np.asarray(c_perp, dtype=float)
    delta = np.asarray(delta, dtype=float)
    out = c_perp**2 * gamma_d / (gamma_d**2 + delta**2)
    return float(out) if out.ndim == 0 else out


# --- bath correlation time -------------------------------------------------

SHELL_FACTOR = 5.0
GROUP_COUNT = 64
SHARD_SIZE = 4096


@dataclass(frozen=True)
class CorrelationTime:
    tau_c: float  # s
    stderr: float  # s
    rate: float  # 1/s
    rate_stderr: float
    sample_count: int
    seed: int
    exclusion_radius: float  # m
    diverged: bool = False  # zero density -> tau_c = inf


def exclusion_radius(n_total: float) -> float:
    """Wigner-Seitz radius (3 / 4 pi n)^(1/3)."""
    return (3.0 / (4.0 * np.pi * n_total)) ** (1.0 / 3.0)


def _pooled_lines(bath: BathComposition, field: MagneticField, unsuppressed=False):
    """Frequencies (rad/s) and probabilities of the electron-flip lines of all species."""
    freqs, probs = [], []
    total = bath.total_ppm
    for model, ppm in bath.entries:
        if ppm <= 0:
            continue
        f, w = _line_arrays(species_lines(model, field, electron_flip_only=True))
        if unsuppressed:
            f, w = np.array([f @ w / w.sum()]), np.ones(1)
        freqs.append(mhz_to_angular(f))
        probs.append(ppm / total * w / w.sum())
    f = np.concatenate(freqs)
    p = np.concatenate(probs)
    return f, p / p.sum()


def _tail_integral(j0, radius):
    """Integral of C_perp^2 over all space beyond ``radius`` (per unit density)."""
    return np.pi * j0**2 / (15.0 * radius**3)


def expected_flipflop_rate(bath: BathComposition, field: MagneticField, unsuppressed: bool = False) -> float:
    """Ensemble mean of sum_j R_ff for the hard-core Poisson geometry used by the sampler."""
    n = bath.total_density
    if n == 0:
        return 0.0
    f, p = _pooled_lines(bath, field, unsuppressed)
    g = bath.effective_gamma_d()
    overlap = p @ lorentz_factor(f[:, None] - f[None, :], g) @ p
    return float(n * _tail_integral(dipolar_prefactor(), exclusion_radius(n)) * overlap / g)


def _shard_rates(rng, n_samples, n_total, r_min, r_max, f, p, gamma_d, j0):
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    mean_count = n_total * 4.0 / 3.0 * np.pi * (r_max**3 - r_min**3)
    counts = rng.poisson(mean_count, size=n_samples)
    total = int(counts.sum())
    probe_line = np.searchsorted(cdf, rng.random(n_samples), side="right")
    u = rng.random(total)
    r = np.cbrt(r_min**3 + u * (r_max**3 - r_min**3))
    cos_t = rng.uniform(-1.0, 1.0, size=total)
    partner_line = np.searchsorted(cdf, rng.random(total), side="right")
    owner = np.repeat(np.arange(n_samples), counts)
    c_perp = 0.25 * j0 * (3.0 * cos_t**2 - 1.0) / r**3
    delta = f[partner_line] - f[probe_line[owner]]
    shell = np.bincount(owner, weights=c_perp**2 * gamma_d / (gamma_d**2 + delta**2), minlength=n_samples)
    tail_line = (lorentz_factor(f[:, None] - f[None, :], gamma_d) @ p) / gamma_d
    return shell + n_total * _tail_integral(j0, r_max) * tail_line[probe_line]


def bath_correlation_time(bath: BathComposition, field: MagneticField, sample_count: int = 20000, seed: int = 0,
                          unsuppressed: bool = False) -> CorrelationTime:
    """Monte-Carlo estimate of tau_c = 1 / sum_j R_ff around a bath spin.

    Partners are Poisson-distributed outside the Wigner-Seitz radius of the
    total bath density; the shell out to five such radii is sampled
    explicitly and the remainder is added as its ensemble average. Species,
    orientation and nuclear sublevel of every spin are drawn from their
    populations. ``unsuppressed=True`` collapses every species onto its mean line.
    The estimate is the median of group means; sampling is split into
    fixed-size shards seeded from ``(seed, shard)``.
    """
    if sample_count < 1000:
        raise ValueError("sample_count must be at least 1000")
    n = bath.total_density
    if n == 0:
        return CorrelationTime(np.inf, np.inf, 0.0, 0.0, sample_count, seed, np.inf, diverged=True)
    f, p = _pooled_lines(bath, field, unsuppressed)
    g = bath.effective_gamma_d()
    j0 = dipolar_prefactor()
    r_min = exclusion_radius(n)
    r_max = SHELL_FACTOR * r_min
    rates = []
    for shard, start in enumerate(range(0, sample_count, SHARD_SIZE)):
        rng = np.random.default_rng([seed, shard])
        rates.append(_shard_rates(rng, min(SHARD_SIZE, sample_count - start), n, r_min, r_max, f, p, g, j0))
    rates = np.concatenate(rates)
    groups = np.array([chunk.mean() for chunk in np.array_split(rates, GROUP_COUNT)])
    rate = float(np.median(groups))
    # asymptotic efficiency of the median relative to the mean
    rate_err = float(np.sqrt(np.pi / 2) * groups.std(ddof=1) / np.sqrt(GROUP_COUNT))
    return CorrelationTime(1.0 / rate, rate_err / rate**2, rate, rate_err, sample_count, seed, r_min)
