"""Allowed-transition line lists and Lorentzian-broadened DEER/ESR spectra."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constants import TWO_PI, angular_to_mhz
from .spinmodel import DefectSpinModel, EigenSystem, MagneticField, solve, spin_operators

PRUNE_FRACTION = 1e-6


@dataclass(frozen=True)
class TransitionLine:
    frequency: float  # MHz
    intensity: float
    level_pair: tuple
    jt_index: int
    species_name: str
    electron_flip: bool = True


@dataclass
class Spectrum:
    freq_grid: np.ndarray  # MHz
    amplitude: np.ndarray
    linewidth_gamma_d: float  # rad/s
    composition: object = None

    @property
    def hwhm_mhz(self) -> float:
        return self.linewidth_gamma_d / (TWO_PI * 1e6)


def transition_lines(eigs, model: DefectSpinModel, prune: float = PRUNE_FRACTION) -> list:
    """Line list for one or several Jahn-Teller blocks of ``model``.

    Intensities are population(initial) x |<f|S_x|i>|^2 with fully mixed
    populations, weighted by orientation population and normalised to sum
    to one over everything passed in. Lines weaker than ``prune`` times the
    strongest are dropped (before normalisation).
    """
    if isinstance(eigs, EigenSystem):
        eigs = [eigs]
    sx = spin_operators(model)[0][0]
    raw = []
    for eig in eigs:
        pop = model.jt_orientations[eig.jt_index].population / len(eig.energies)
        m = eig.states.conj().T @ sx @ eig.states
        w = np.abs(m) ** 2
        ms = eig.electron_projection()
        e = eig.energies
        spread = max(e[-1] - e[0], 1.0)
        i, j = np.triu_indices(len(e), k=1)
        gap = e[j] - e[i]
        keep = gap > 1e-9 * spread
        for a, b in zip(i[keep], j[keep]):
            # both directions of the transition contribute equally
            raw.append((float(angular_to_mhz(e[b] - e[a])), 2 * pop * w[a, b], (int(a), int(b)), eig.jt_index,
                        bool(abs(ms[b] - ms[a]) == 1)))
    if not raw:
        return []
    intens = np.array([r[1] for r in raw])
    keep = intens >= prune * intens.max()
    total = intens[keep].sum()
    return [
        TransitionLine(r[0], r[1] / total, r[2], r[3], model.name, r[4])
        for r, k in zip(raw, keep) if k
    ]


def species_lines(model: DefectSpinModel, field: MagneticField, electron_flip_only=False,
                  nuclear_zeeman=True) -> list:
    """All orientations of ``model`` at ``field``; optionally electron-flip lines only, renormalised."""
    lines = transition_lines(solve(model, field, nuclear_zeeman), model)
    if electron_flip_only:
        lines = renormalize([ln for ln in lines if ln.electron_flip])
    return lines


def renormalize(lines: Sequence[TransitionLine]) -> list:
    total = sum(ln.intensity for ln in lines)
    if total <= 0:
        return list(lines)
    return [TransitionLine(ln.frequency, ln.intensity / total, ln.level_pair, ln.jt_index, ln.species_name,
                           ln.electron_flip) for ln in lines]


def lorentzian(f, center, hwhm):
    """Unit-peak Lorentzian."""
    x = (np.asarray(f, dtype=float) - center) / hwhm
    return 1.0 / (1.0 + x * x)


def synthesize_spectrum(lines: Sequence[TransitionLine], grid, gamma_d: float, weight: float = 1.0,
                        composition=None) -> Spectrum:
    """Sum of unit-peak Lorentzians of HWHM gamma_d/2pi (MHz), scaled by line intensity."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("frequency grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("frequency grid must be strictly ascending")
    if not gamma_d > 0:
        raise ValueError("gamma_d must be positive")
    hwhm = gamma_d / (TWO_PI * 1e6)
    amp = np.zeros_like(grid)
    for ln in lines:
        amp += weight * ln.intensity * lorentzian(grid, ln.frequency, hwhm)
    return Spectrum(grid, amp, gamma_d, composition)


def bath_spectrum(bath, field: MagneticField, grid) -> Spectrum:
    """Density-weighted sum of the single-species spectra of a bath composition."""
    grid = np.asarray(grid, dtype=float)
    gamma_d = bath.effective_gamma_d()
    amp = np.zeros_like(grid)
    for model, ppm in bath.entries:
        if ppm > 0:
            amp += synthesize_spectrum(species_lines(model, field), grid, gamma_d, weight=ppm).amplitude
    if not np.all(np.diff(grid) > 0):
        raise ValueError("frequency grid must be strictly ascending")
    return Spectrum(grid, amp, gamma_d, bath)


def peak_groups(lines: Sequence[TransitionLine], tolerance_mhz: float) -> list:
    """Single-linkage clusters of lines by frequency: list of (centre, total intensity, members)."""
    if tolerance_mhz <= 0:
        raise ValueError("cluster tolerance must be positive")
    ordered = sorted(lines, key=lambda ln: ln.frequency)
    groups, current = [], []
    for ln in ordered:
        if current and ln.frequency - current[-1].frequency > tolerance_mhz:
            groups.append(current)
            current = []
        current.append(ln)
    if current:
        groups.append(current)
    out = []
    for g in groups:
        w = sum(ln.intensity for ln in g)
        centre = sum(ln.frequency * ln.intensity for ln in g) / w if w else float(np.mean([ln.frequency for ln in g]))
        out.append((centre, w, g))
    return out
