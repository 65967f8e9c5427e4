"""Batch front end: ``spinbath <command> --config scenario.toml``.

Every command loads and validates the whole scenario before computing
anything, writes plain text tables into ``--out`` and stamps each file with
the tool version, a hash of the scenario text and the seed. Exit status is
0 on success, 1 for invalid input and 2 for numerical failure.

A scenario looks like::

    seed = 0

    [field]
    gauss = 238.8
    direction = [1, 1, 1]

    [bath]
    gamma_d_mhz = 1.0
    gamma_d_reference_ppm = 4.5      # optional: linewidth scales with density
    before = { P1 = 2.0, "NVH-" = 2.5 }
    after = { P1 = 4.0, "NVH-" = 1.6 }

    [[species]]                     # optional custom species
    name = "wide"
    electron_spin = 0.5

    [spectrum]
    f_min_mhz = 500.0
    f_max_mhz = 850.0
    step_mhz = 0.05

    [coherence]
    sample_count = 20000
    times_us = [0.0, 0.5, 1.0]

    [transport]
    nodes = 256
    pump_duration_s = 2e-4
    recovery_duration_s = 2e-2

    [fit]
    kind = "spectrum"               # spectrum | decay | frames
    input = "out/spectrum.dat"
    n_peaks = 6
"""
from __future__ import annotations

import argparse
import hashlib
import re
import sys
import warnings
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import DecayTrace, build_maps, fit_decay, fit_lorentzians, peak_table, read_frames
from .constants import CARBON_DENSITY, GAMMA_E, HBAR, MU0, MU_B, TWO_PI
from .decoherence import FIELD_SCALE, QuadratureError, dephasing_constant, predict_coherence
from .flipflop import BathComposition, alpha_closed_form_jt, alpha_exact, alpha_peaks
from .presets import PRESETS, get_preset, species_from_dict
from .spectra import species_lines, synthesize_spectrum
from .spinmodel import MagneticField, SpinModelError
from .transport import (
    I_REF, NumericalError, TransportError, default_pump_probe_config, generation_time, recovery_time,
    run_pump_probe, stable_dt, RadialGrid,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
FORMATS = ("columnar", "delimited")


class ScenarioError(ValueError):
    """Invalid scenario; ``line`` is the 1-based line in the scenario file, if known."""

    def __init__(self, message, path=None, line=None):
        self.path, self.line = path, line
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)


# --- scenario ---------------------------------------------------------------

@dataclass
class Scenario:
    path: Path
    text: str
    digest: str
    seed: int
    field: MagneticField
    species: dict
    bath_before: BathComposition
    bath_after: BathComposition | None
    spectrum: dict
    coherence: dict
    transport: dict
    fit: dict
    alpha: dict
    raw: dict = dc_field(repr=False, default_factory=dict)


def _locate(text: str, keys) -> int | None:
    """Best-effort line number of a dotted key in TOML source."""
    lines = text.splitlines()
    start = 0
    for depth in range(len(keys) - 1, 0, -1):
        header = re.compile(r"^\s*\[+\s*" + r"\s*\.\s*".join(re.escape(k) for k in keys[:depth]) + r"\s*\]+")
        hits = [i for i, ln in enumerate(lines) if header.match(ln)]
        if hits:
            start = hits[0]
            break
    key = re.compile(r'(^|[\s{,])"?' + re.escape(str(keys[-1])) + r'"?\s*=')
    for i in range(start, len(lines)):
        if key.search(lines[i]):
            return i + 1
    return start + 1 if start else None


class _Reader:
    """Typed access to a section of the parsed document with located errors."""

    def __init__(self, doc, path, text, prefix=()):
        self.doc, self.path, self.text, self.prefix = doc, path, text, tuple(prefix)

    def fail(self, key, message):
        keys = self.prefix + ((key,) if key is not None else ())
        raise ScenarioError(f"{'.'.join(keys)}: {message}", self.path, _locate(self.text, keys))

    def section(self, name):
        value = self.doc.get(name, {})
        if not isinstance(value, dict):
            self.fail(name, "expected a table")
        return _Reader(value, self.path, self.text, self.prefix + (name,))

    def unknown(self, allowed):
        for k in self.doc:
            if k not in allowed:
                self.fail(k, f"unknown key; expected one of {sorted(allowed)}")

    def number(self, key, default=None, lo=None, hi=None, strict_lo=False, integer=False):
        if key not in self.doc:
            if default is None:
                self.fail(key, "required value missing")
            return default
        v = self.doc[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
            self.fail(key, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
        if not np.isfinite(v):
            self.fail(key, "must be finite")
        if lo is not None and (v <= lo if strict_lo else v < lo):
            self.fail(key, f"must be {'>' if strict_lo else '>='} {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(key, f"must be <= {hi}, got {v}")
        return v

    def vector(self, key, default=None, length=None, lo=None):
        if key not in self.doc:
            if default is None:
                self.fail(key, "required value missing")
            return default
        v = self.doc[key]
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            self.fail(key, "expected a list of numbers")
        if length is not None and len(v) != length:
            self.fail(key, f"expected {length} entries, got {len(v)}")
        if not all(np.isfinite(x) for x in v):
            self.fail(key, "entries must be finite")
        if lo is not None and any(x < lo for x in v):
            self.fail(key, f"entries must be >= {lo}")
        return [float(x) for x in v]

    def string(self, key, default=None, choices=None):
        if key not in self.doc:
            if default is None:
                self.fail(key, "required value missing")
            return default
        v = self.doc[key]
        if not isinstance(v, str):
            self.fail(key, f"expected a string, got {v!r}")
        if choices is not None and v not in choices:
            self.fail(key, f"expected one of {list(choices)}, got {v!r}")
        return v

    def boolean(self, key, default):
        v = self.doc.get(key, default)
        if not isinstance(v, bool):
            self.fail(key, f"expected true or false, got {v!r}")
        return v


def _densities(reader: _Reader, key, species):
    table = reader.doc.get(key)
    if table is None:
        return None
    if not isinstance(table, dict):
        reader.fail(key, "expected a table of species = ppm")
    sub = _Reader(table, reader.path, reader.text, reader.prefix + (key,))
    out = []
    for name in table:
        if name not in species:
            sub.fail(name, f"unknown species; known: {sorted(species)}")
        out.append((species[name], float(sub.number(name, lo=0.0, hi=1e6))))
    return out


def parse_scenario(text: str, path="<scenario>", seed: int | None = None) -> Scenario:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"TOML syntax error: {exc}", path, int(m.group(1)) if m else None) from None
    top = _Reader(doc, path, text)
    top.unknown({"seed", "field", "bath", "species", "spectrum", "coherence", "transport", "fit", "alpha"})
    if seed is None:
        seed = int(top.number("seed", 0, lo=0, integer=True))

    f = top.section("field")
    f.unknown({"gauss", "direction"})
    try:
        fld = MagneticField.from_gauss(f.number("gauss", 238.8, lo=0.0, hi=1e5), f.vector("direction", [1, 1, 1], 3))
    except SpinModelError as exc:
        f.fail("direction", str(exc))

    entries = doc.get("species", [])
    if not isinstance(entries, list):
        top.fail("species", "expected an array of tables ([[species]])")
    custom = {}
    for i, entry in enumerate(entries):
        try:
            m = species_from_dict(entry)
        except (SpinModelError, KeyError, TypeError, ValueError) as exc:
            line = _locate(text, ("species",))
            hits = [k + 1 for k, ln in enumerate(text.splitlines()) if re.match(r"^\s*\[\[\s*species\s*\]\]", ln)]
            raise ScenarioError(f"species[{i}]: {exc}", path, hits[i] if i < len(hits) else line) from None
        custom[m.name] = m
    resolved = {}

    class _Lazy(dict):
        """Presets are built on first use; custom species shadow presets."""

        def __contains__(self, k):
            return k in custom or k in PRESETS

        def __getitem__(self, k):
            if k not in resolved:
                resolved[k] = custom[k] if k in custom else get_preset(k)
            return resolved[k]

        def __iter__(self):
            return iter(sorted(set(custom) | set(PRESETS)))

    lazy = _Lazy()

    b = top.section("bath")
    b.unknown({"gamma_d_mhz", "gamma_d_reference_ppm", "before", "after", "lattice_density"})
    gamma_d = TWO_PI * 1e6 * b.number("gamma_d_mhz", 1.0, lo=0.0, strict_lo=True, hi=1e4)
    ref = b.doc.get("gamma_d_reference_ppm")
    if ref is not None:
        ref = b.number("gamma_d_reference_ppm", lo=0.0, strict_lo=True)
    lattice = b.number("lattice_density", CARBON_DENSITY, lo=0.0, strict_lo=True)
    before = _densities(b, "before", lazy)
    if before is None:
        before = [(lazy["P1"], 2.0)]
    after = _densities(b, "after", lazy)
    bath_before = BathComposition(before, gamma_d, lattice, ref)
    bath_after = None if after is None else BathComposition(after, gamma_d, lattice, ref)

    s = top.section("spectrum")
    s.unknown({"f_min_mhz", "f_max_mhz", "step_mhz", "electron_flip_only"})
    spectrum = {
        "f_min": s.number("f_min_mhz", 500.0, lo=0.0),
        "f_max": s.number("f_max_mhz", 850.0, lo=0.0),
        "step": s.number("step_mhz", 0.05, lo=0.0, strict_lo=True),
        "electron_flip_only": s.boolean("electron_flip_only", False),
    }
    if spectrum["f_max"] <= spectrum["f_min"]:
        s.fail("f_max_mhz", "must exceed f_min_mhz")
    if (spectrum["f_max"] - spectrum["f_min"]) / spectrum["step"] > 2e6:
        s.fail("step_mhz", "grid would exceed 2e6 points")

    a = top.section("alpha")
    a.unknown({"cluster_tolerance_mhz", "species"})
    alpha = {"tolerance": a.number("cluster_tolerance_mhz", 2.0, lo=0.0, strict_lo=True)}
    names = a.doc.get("species")
    if names is None:
        names = [m.name for m, _ in bath_before.entries]
    elif not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        a.fail("species", "expected a list of species names")
    for n in names:
        if n not in lazy:
            a.fail("species", f"unknown species {n!r}")
    alpha["species"] = list(names)

    c = top.section("coherence")
    c.unknown({"sample_count", "times_us", "p_s", "field_scale"})
    coherence = {
        "sample_count": int(c.number("sample_count", 20000, lo=1000, hi=10**8, integer=True)),
        "times": None,
        "p_s": c.number("p_s", 1.0, lo=0.0, strict_lo=True, hi=1.0),
        "field_scale": c.number("field_scale", FIELD_SCALE, lo=0.0, strict_lo=True),
    }
    if "times_us" in c.doc:
        t = c.vector("times_us", lo=0.0)
        if len(t) == 0 or np.any(np.diff(t) <= 0):
            c.fail("times_us", "must be a non-empty strictly ascending list")
        coherence["times"] = np.array(t) * 1e-6

    t = top.section("transport")
    t.unknown({"nodes", "dt_s", "r_max_um", "pump_duration_s", "recovery_duration_s", "boundary",
               "snapshot_times_s", "trace_every"})
    transport = {
        "nodes": int(t.number("nodes", 256, lo=3, hi=4096, integer=True)),
        "dt": t.number("dt_s", 0.0, lo=0.0, strict_lo=True) if "dt_s" in t.doc else None,
        "r_max": 1e-6 * t.number("r_max_um", 100.0, lo=0.0, strict_lo=True),
        "pump_duration": t.number("pump_duration_s", 2e-4, lo=0.0),
        "recovery_duration": t.number("recovery_duration_s", 2e-2, lo=0.0),
        "boundary": t.string("boundary", "neumann", ("neumann", "absorbing")),
        "snapshot_times": tuple(t.vector("snapshot_times_s", [], lo=0.0)),
        "trace_every": int(t.number("trace_every", 10, lo=1, integer=True)),
    }
    rates = default_pump_probe_config().rates
    limit = stable_dt(rates, RadialGrid.uniform(transport["r_max"], transport["nodes"]))
    if transport["dt"] is not None and transport["dt"] > limit:
        t.fail("dt_s", f"{transport['dt']:.3g} s exceeds the diffusion stability limit {limit:.3g} s")

    ft = top.section("fit")
    ft.unknown({"kind", "input", "n_peaks", "t2_reference_us", "p_s", "pin_d_omega"})
    fit = {}
    if ft.doc:
        fit["kind"] = ft.string("kind", choices=("spectrum", "decay", "frames"))
        fit["input"] = ft.string("input")
        fit["n_peaks"] = int(ft.number("n_peaks", 6, lo=1, hi=64, integer=True))
        t2r = ft.doc.get("t2_reference_us")
        fit["t2_reference"] = None if t2r is None else 1e-6 * ft.number("t2_reference_us", lo=0.0, strict_lo=True)
        fit["p_s"] = ft.number("p_s", 1.0, lo=0.0, strict_lo=True, hi=1.0)
        fit["pin_d_omega"] = ft.boolean("pin_d_omega", True)

    return Scenario(Path(path), text, hashlib.sha256(text.encode()).hexdigest(), seed, fld, lazy, bath_before,
                    bath_after, spectrum, coherence, transport, fit, alpha, doc)


def load_scenario(path, seed: int | None = None) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", path) from None
    return parse_scenario(text, str(path), seed)


# --- output -----------------------------------------------------------------

def provenance(scenario: Scenario, command: str) -> list:
    return [
        ("tool", f"spinbath {__version__}"),
        ("command", command),
        ("scenario_sha256", scenario.digest),
        ("seed", str(scenario.seed)),
        ("hbar_J_s", repr(HBAR)),
        ("mu0_T_m_per_A", repr(MU0)),
        ("mu_B_J_per_T", repr(MU_B)),
        ("gamma_e_rad_per_s_T", repr(GAMMA_E)),
        ("carbon_density_m3", repr(CARBON_DENSITY)),
        ("dephasing_constant_per_us_ppm", f"{dephasing_constant():.6f}"),
        ("field_scale", repr(FIELD_SCALE)),
        ("reference_intensity_W_m2", repr(I_REF)),
    ]


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    return f"{float(x):.12e}"


def write_table(path: Path, meta: list, columns: list, rows, fmt: str = "columnar"):
    """Header lines ``# key: value``, a ``#`` column line, then one row per line."""
    sep = "," if fmt == "delimited" else " "
    out = [f"# {k}: {v}" for k, v in meta]
    out.append("# " + sep.join(columns))
    for row in rows:
        cells = [_fmt(x) for x in row]
        if fmt == "columnar":
            cells = [c.rjust(19) for c in cells]
        out.append(sep.join(cells))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


def read_table(path) -> tuple:
    """Inverse of :func:`write_table` for numeric tables: (columns, meta dict, 2-D array)."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioError(f"cannot read table: {exc}", path) from None
    meta, columns, rows = {}, None, []
    for i, ln in enumerate(lines, 1):
        if not ln.strip():
            continue
        if ln.startswith("#"):
            body = ln[1:].strip()
            if ": " in body and columns is None and not rows:
                k, v = body.split(": ", 1)
                meta[k] = v
            else:
                columns = re.split(r"[,\s]+", body)
            continue
        cells = [c for c in re.split(r"[,\s]+", ln.strip()) if c]
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise ScenarioError(f"non-numeric value in row: {ln.strip()!r}", path, i) from None
        if columns is not None and len(cells) != len(columns):
            raise ScenarioError(f"expected {len(columns)} values, got {len(cells)}", path, i)
        if rows and len(rows[-1]) != len(rows[0]):
            raise ScenarioError("ragged table", path, i)
    if not rows:
        raise ScenarioError("table has no data rows", path)
    if columns is None:
        columns = [f"c{k}" for k in range(len(rows[0]))]
    return columns, meta, np.array(rows)


# --- commands ---------------------------------------------------------------

def cmd_spectrum(sc: Scenario, out: Path, fmt: str) -> list:
    sp = sc.spectrum
    n = int(round((sp["f_max"] - sp["f_min"]) / sp["step"])) + 1
    grid = sp["f_min"] + sp["step"] * np.arange(n)
    bath = sc.bath_before
    gamma_d = bath.effective_gamma_d()
    cols, data = ["freq_mhz", "total"], [grid]
    total = np.zeros_like(grid)
    for model, ppm in bath.entries:
        amp = np.zeros_like(grid)
        if ppm > 0:
            lines = species_lines(model, sc.field, electron_flip_only=sp["electron_flip_only"])
            amp = synthesize_spectrum(lines, grid, gamma_d, weight=ppm).amplitude
        total = total + amp
        cols.append(model.name)
        data.append(amp)
    data[1:1] = [total]
    meta = provenance(sc, "spectrum") + [
        ("bath", ", ".join(f"{m.name}={p:g}ppm" for m, p in bath.entries) or "empty"),
        ("field_gauss", f"{sc.field.magnitude * 1e4:.6g}"),
        ("hwhm_mhz", f"{bath.effective_gamma_d() / (TWO_PI * 1e6):.6g}"),
    ]
    path = out / "spectrum.dat"
    write_table(path, meta, cols, np.column_stack(data), fmt)

    line_rows = []
    for k, (model, ppm) in enumerate(bath.entries):
        for ln in species_lines(model, sc.field, electron_flip_only=sp["electron_flip_only"]):
            line_rows.append((k, ln.jt_index, ln.frequency, ln.intensity, int(ln.electron_flip)))
    lpath = out / "lines.dat"
    write_table(lpath, meta + [("species_index", ", ".join(f"{k}={m.name}" for k, (m, _) in enumerate(bath.entries)))],
                ["species_index", "jt_index", "freq_mhz", "intensity", "electron_flip"], line_rows, fmt)
    return [path, lpath]


def cmd_alpha(sc: Scenario, out: Path, fmt: str) -> list:
    g = sc.bath_before.gamma_d
    rows, names = [], []
    for k, name in enumerate(sc.alpha["species"]):
        model = sc.species[name]
        lines = species_lines(model, sc.field, electron_flip_only=True)
        rows.append((k, alpha_exact(model, sc.field, g), float(alpha_peaks(lines, g, sc.alpha["tolerance"])),
                     len(lines)))
        names.append(f"{k}={name}")
    meta = provenance(sc, "alpha") + [
        ("species_index", ", ".join(names)),
        ("gamma_d_mhz", f"{g / (TWO_PI * 1e6):.6g}"),
        ("cluster_tolerance_mhz", f"{sc.alpha['tolerance']:.6g}"),
        ("hand_estimate_jt_aligned", str(alpha_closed_form_jt())),
    ]
    path = out / "alpha.dat"
    write_table(path, meta, ["species_index", "alpha_exact", "alpha_peaks", "n_lines"], rows, fmt)
    return [path]


def cmd_coherence(sc: Scenario, out: Path, fmt: str) -> list:
    co = sc.coherence
    after = sc.bath_after if sc.bath_after is not None else sc.bath_before
    kw = dict(sample_count=co["sample_count"], seed=sc.seed, times=co["times"], p_s=co["p_s"],
              field_scale=co["field_scale"])
    pb = predict_coherence(sc.bath_before, sc.field, **kw)
    if co["times"] is None:
        kw["times"] = pb.deer_times
    pa = predict_coherence(after, sc.field, **kw)

    def frac(a, b):
        return a / b - 1.0 if np.isfinite(a) and np.isfinite(b) and b != 0 else np.nan

    rows = [("t2_star_us", pb.t2_star * 1e6, pa.t2_star * 1e6, frac(pa.t2_star, pb.t2_star)),
            ("t2_us", pb.t2 * 1e6, pa.t2 * 1e6, frac(pa.t2, pb.t2)),
            ("tau_c_us", pb.tau_c * 1e6, pa.tau_c * 1e6, frac(pa.tau_c, pb.tau_c))]
    for name in sorted(set(pb.ts_star) | set(pa.ts_star)):
        b, a = pb.ts_star.get(name, np.inf), pa.ts_star.get(name, np.inf)
        rows.append((f"ts_star_us[{name}]", b * 1e6, a * 1e6, frac(a, b)))
    meta = provenance(sc, "coherence") + [
        ("before", ", ".join(f"{m.name}={p:g}ppm" for m, p in sc.bath_before.entries)),
        ("after", ", ".join(f"{m.name}={p:g}ppm" for m, p in after.entries)),
        ("sample_count", str(co["sample_count"])),
    ]
    path = out / "coherence.dat"
    write_table(path, meta, ["quantity", "before", "after", "fractional_change"], rows, fmt)

    cols, data = ["time_us"], [pb.deer_times * 1e6]
    for tag, pred in (("before", pb), ("after", pa)):
        for name in sorted(pred.deer_contrast_curve):
            cols.append(f"{tag}:{name}")
            data.append(pred.deer_contrast_curve[name])
    dpath = out / "deer.dat"
    write_table(dpath, meta, cols, np.column_stack(data), fmt)
    return [path, dpath]


def cmd_transport(sc: Scenario, out: Path, fmt: str) -> list:
    tr = sc.transport
    cfg = default_pump_probe_config(tr["pump_duration"], tr["recovery_duration"], tr["nodes"], r_max=tr["r_max"],
                                    dt=tr["dt"], boundary=tr["boundary"], snapshot_times=tr["snapshot_times"],
                                    trace_every=tr["trace_every"])
    from .transport import initial_state, relax_local

    start = relax_local(initial_state(cfg.rates, RadialGrid.uniform(cfg.r_max, cfg.nodes)), cfg.rates,
                        [cfg.beams[b] for b in cfg.equilibrate_with])
    q0 = start.net_charge(cfg.rates)
    run = run_pump_probe(cfg)
    q1 = run.final_state.net_charge(cfg.rates)
    labels = list(run.center_trace)
    meta = provenance(sc, "transport") + [
        ("nodes", str(cfg.nodes)),
        ("dt_s", repr(cfg.dt if cfg.dt is not None else stable_dt(cfg.rates, RadialGrid.uniform(cfg.r_max, cfg.nodes)))), ("boundary", cfg.boundary),
        ("phases", ", ".join(f"{p.name}={p.duration:g}s[{'+'.join(p.beams)}]" for p in cfg.phases)),
    ]
    tpath = out / "center_trace.dat"
    write_table(tpath, meta, ["time_s"] + labels,
                np.column_stack([run.trace_time] + [run.center_trace[k] for k in labels]), fmt)
    written = [tpath]
    if run.snapshots:
        spath = out / "snapshots.dat"
        fields = list(run.snapshots[0].fields)
        rows = np.vstack([np.column_stack([np.full_like(s.r, s.time), s.r * 1e6] + [s.fields[k] for k in fields])
                          for s in run.snapshots])
        write_table(spath, meta, ["time_s", "r_um"] + fields, rows, fmt)
        written.append(spath)

    summary = []
    for d in cfg.rates.defects:
        if d.spin_state is None:
            continue
        base = run.center_trace[d.spin_state][0]
        gen = generation_time(run, d.spin_state) if "pump" in run.phase_starts else np.nan
        rec = recovery_time(run, d.spin_state, base) if "recovery" in run.phase_starts else np.nan
        pump_end = run.trace_time <= run.phase_starts.get("recovery", np.inf)
        peak = run.center_trace[d.spin_state][pump_end]
        extreme = peak[np.argmax(np.abs(peak - base))]
        summary += [(f"{d.spin_state}:initial_ppm", base), (f"{d.spin_state}:pump_extreme_ppm", extreme),
                    (f"{d.spin_state}:generation_time_s", gen), (f"{d.spin_state}:recovery_time_s", rec)]
    summary += [("net_charge_initial", q0), ("net_charge_final", q1), ("net_charge_drift", q1 - q0),
                ("clipped_mass", run.clipped_mass)]
    path = out / "transport_summary.dat"
    write_table(path, meta, ["quantity", "value"], summary, fmt)
    written.append(path)
    return written


def cmd_fit(sc: Scenario, out: Path, fmt: str) -> list:
    if not sc.fit:
        raise ScenarioError("fit: the scenario has no [fit] section", sc.path)
    ft = sc.fit
    src = Path(ft["input"])
    if not src.is_absolute():
        src = sc.path.parent / src
    meta = provenance(sc, "fit") + [("input", ft["input"]), ("kind", ft["kind"])]
    if ft["kind"] == "frames":
        try:
            frames = read_frames(src)
        except OSError as exc:
            raise ScenarioError(f"cannot read frames: {exc}", src) from None
        except (ValueError, KeyError) as exc:
            raise ScenarioError(f"malformed frame file: {exc}", src) from None
        maps = build_maps(frames, ft["t2_reference"], ft["p_s"])
        names = [k for k in ("rate", "contrast", "coherence_time", "density", "t2_star", "t2", "contrast_ratio")
                 if getattr(maps, k) is not None]
        yy, xx = np.mgrid[0:maps.shape[0], 0:maps.shape[1]]
        cols = [yy.ravel(), xx.ravel()]
        cols += [np.ma.filled(np.ma.asarray(getattr(maps, k), dtype=float), np.nan).ravel() for k in names]
        path = out / "maps.dat"
        write_table(path, meta, ["row", "col"] + names, np.column_stack(cols), fmt)
        return [path]

    columns, _, data = read_table(src)
    if data.shape[1] < 2:
        raise ScenarioError("need at least two columns (abscissa, signal)", src)
    if ft["kind"] == "spectrum":
        result = fit_lorentzians((data[:, 0], data[:, 1]), ft["n_peaks"])
        table = peak_table(result)
        rows = [(k, *row) for k, row in enumerate(table)]
        cols = ["peak", "center_mhz", "hwhm_mhz", "height"]
        meta += [("flags", ",".join(result.flags) or "none"), ("converged", str(result.converged)),
                 ("baseline", _fmt(result["baseline"]))]
        path = out / "peaks.dat"
        write_table(path, meta, cols, rows, fmt)
        return [path]
    t = data[:, 0] * 1e-6
    result = fit_decay(DecayTrace(t, data[:, 1]), pin_d_omega=ft["pin_d_omega"])
    rows = [(name, v, e) for name, v, e in zip(result.names, result.values, result.stderr)]
    meta += [("flags", ",".join(result.flags) or "none"), ("converged", str(result.converged)),
             ("time_unit", "us")]
    path = out / "decay_fit.dat"
    write_table(path, meta, ["parameter", "value", "stderr"], rows, fmt)
    return [path]


def cmd_validate(sc: Scenario, out: Path, fmt: str) -> list:
    return []


COMMANDS = {
    "spectrum": cmd_spectrum,
    "alpha": cmd_alpha,
    "coherence": cmd_coherence,
    "transport": cmd_transport,
    "fit": cmd_fit,
    "scenario-validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spinbath", description="Spin-bath spectra, coherence and charge transport.")
    p.add_argument("--version", action="version", version=f"spinbath {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, metavar="PATH", help="scenario TOML file")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--out", default="out", metavar="DIR", help="output directory (default: out)")
        sp.add_argument("--format", choices=FORMATS, default="columnar")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_INVALID
    try:
        sc = load_scenario(args.config, args.seed)
        if args.command == "fit" and not sc.fit:
            raise ScenarioError("fit: the scenario has no [fit] section", args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            written = COMMANDS[args.command](sc, Path(args.out), args.format)
    except (ScenarioError, SpinModelError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, QuadratureError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.command == "scenario-validate":
        print(f"ok: {args.config} (sha256 {sc.digest[:12]}, seed {sc.seed})")
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
