"""Built-in defect species and loading of custom species from TOML.

Hyperfine values are stored as (2 pi) x MHz principal components. The
zero-field tensors computed from first principles are given in GHz and
are stored with their (small) isotropic residue removed, since only the
traceless part acts on the spin.
"""
from __future__ import annotations

import numpy as np

from .constants import TWO_PI, NUCLEAR_GAMMA, NUCLEAR_SPIN
from .spinmodel import (
    DefectSpinModel,
    JahnTellerOrientation,
    NuclearCoupling,
    SpinModelError,
    normalized,
    orientation_list,
    tetrahedral_orientations,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


def traceless_ghz(matrix_ghz) -> np.ndarray:
    """GHz matrix -> traceless angular-frequency tensor."""
    d = TWO_PI * 1e9 * np.asarray(matrix_ghz, dtype=float)
    d = 0.5 * (d + d.T)
    return d - np.trace(d) / 3.0 * np.eye(3)


def free_electron(g_factor=2.0023) -> DefectSpinModel:
    return DefectSpinModel("e", 0.5, g_factor, note="spin-1/2 without hyperfine structure")


def p1() -> DefectSpinModel:
    n14 = NuclearCoupling.from_mhz("14N", 114.0, -82.0)
    return DefectSpinModel(
        "P1", 0.5, 2.0024, nuclear_couplings=(n14,), jt_orientations=tetrahedral_orientations(),
        note="substitutional nitrogen N_s^0; hyperfine principal axis along the JT axis",
    )


def nvh_minus(include_nitrogen=False) -> DefectSpinModel:
    """NVH^- (S = 1/2) with its proton coupling along the C3v axis.

    The weak 14N coupling (2.1, -2.2 MHz) is optional. Leaving it out
    reproduces the reported flip-flop suppression factor; with it the
    factor roughly halves because each proton line splits into a
    triplet wider than the 1 MHz linewidth.
    """
    couplings = [NuclearCoupling.from_mhz("1H", 13.69, -9.05)]
    name = "NVH-"
    if include_nitrogen:
        couplings.append(NuclearCoupling.from_mhz("14N", 2.1, -2.2))
        name = "NVH-+14N"
    return DefectSpinModel(name, 0.5, 2.0035, nuclear_couplings=tuple(couplings),
                           jt_orientations=tetrahedral_orientations())


def vh0() -> DefectSpinModel:
    # No tensor is published alongside the reported suppression factor; the
    # isotropic proton coupling was chosen so alpha(238.8 G, 1 MHz) = 0.973.
    h = NuclearCoupling.from_mhz("1H", 0.24, 0.24)
    return DefectSpinModel("VH0", 0.5, 2.0028, nuclear_couplings=(h,), jt_orientations=tetrahedral_orientations(),
                           note="proton coupling calibrated to the reported suppression factor")


def h1_placeholder() -> DefectSpinModel:
    h = NuclearCoupling.from_mhz("1H", 8.0, -4.0)
    return DefectSpinModel("H1", 0.5, 2.0028, nuclear_couplings=(h,), jt_orientations=tetrahedral_orientations(),
                           verified=False, note="UNVERIFIED placeholder; spin parameters not available")


def nvh0() -> DefectSpinModel:
    zfs = traceless_ghz([[-0.76, 0, 0], [0, -0.76, 0], [0, 0, 1.53]])
    return DefectSpinModel("NVH0", 1.0, 2.0028, zfs_tensor=zfs, jt_orientations=tetrahedral_orientations(),
                           note="zero-field tensor from DFT, z along C3v")


def vh2_0() -> DefectSpinModel:
    zfs = traceless_ghz([[-0.40, 0, 2.21], [0, 0.79, 0], [2.21, 0, -0.40]])
    return DefectSpinModel("VH2_0", 1.0, 2.0028, zfs_tensor=zfs,
                           jt_orientations=(JahnTellerOrientation((0.0, 0.0, 1.0), 1.0),),
                           note="DFT tensor in cubic axes; one orientation only")


PRESETS = {
    "e": free_electron,
    "P1": p1,
    "NVH-": nvh_minus,
    "NVH-+14N": lambda: nvh_minus(include_nitrogen=True),
    "H1": h1_placeholder,
    "VH0": vh0,
    "NVH0": nvh0,
    "VH2_0": vh2_0,
}


def get_preset(name: str) -> DefectSpinModel:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown species preset {name!r}; known: {sorted(PRESETS)}") from None


def species_from_dict(spec: dict) -> DefectSpinModel:
    """Build a species from a parsed TOML table.

    Either ``preset = "P1"`` (optionally with overrides of ``g_factor`` and
    ``name``) or a full definition::

        name = "custom"
        electron_spin = 0.5
        g_factor = 2.0024
        zfs_ghz = [[...], [...], [...]]        # optional
        orientations = "tetrahedral"            # or a list of axes
        populations = [0.25, 0.25, 0.25, 0.25]  # optional

        [[nuclei]]
        isotope = "14N"
        hyperfine_mhz = [114.0, -82.0, -82.0]  # Azz, Axx, Ayy
        axis = [0, 0, 1]                        # optional
    """
    spec = dict(spec)
    if "preset" in spec:
        base = get_preset(spec.pop("preset"))
        if not spec:
            return base
        kwargs = dict(
            name=spec.pop("name", base.name), electron_spin=base.electron_spin,
            g_factor=float(spec.pop("g_factor", base.g_factor)), zfs_tensor=base.zfs_tensor,
            nuclear_couplings=base.nuclear_couplings, jt_orientations=base.jt_orientations,
            verified=base.verified, note=base.note,
        )
        if spec:
            raise SpinModelError(f"unsupported preset overrides: {sorted(spec)}")
        return DefectSpinModel(**kwargs)

    try:
        name = str(spec["name"])
        s = float(spec["electron_spin"])
        g = float(spec.get("g_factor", 2.0023))
    except KeyError as exc:
        raise SpinModelError(f"species definition missing key {exc}") from None
    zfs = traceless_ghz(spec["zfs_ghz"]) if "zfs_ghz" in spec else None

    couplings = []
    for nuc in spec.get("nuclei", []):
        iso = nuc["isotope"]
        hf = list(nuc["hyperfine_mhz"])
        if len(hf) == 2:
            hf.append(hf[1])
        spin = nuc.get("spin", NUCLEAR_SPIN.get(iso))
        if spin is None:
            raise SpinModelError(f"unknown isotope {iso!r}: give 'spin' explicitly")
        gamma = nuc.get("gamma_mhz_per_tesla")
        gamma = NUCLEAR_GAMMA.get(iso, 0.0) if gamma is None else TWO_PI * 1e6 * gamma
        couplings.append(NuclearCoupling.from_mhz(iso, *hf, axis=nuc.get("axis", (0, 0, 1)), spin=spin,
                                                  gyromagnetic_ratio=gamma))

    orient = spec.get("orientations", "tetrahedral")
    pops = spec.get("populations")
    if orient == "tetrahedral":
        orientations = tetrahedral_orientations(pops)
    elif orient == "single":
        orientations = (JahnTellerOrientation((0.0, 0.0, 1.0), 1.0),)
    else:
        orientations = orientation_list([normalized(a) for a in orient], pops)
    return DefectSpinModel(name, s, g, zfs_tensor=zfs, nuclear_couplings=tuple(couplings),
                           jt_orientations=orientations, verified=bool(spec.get("verified", True)))


def load_species_file(path) -> dict:
    """Parse a TOML document with ``[[species]]`` tables into models keyed by name."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    models = {}
    for entry in doc.get("species", []):
        m = species_from_dict(entry)
        models[m.name] = m
    return models
