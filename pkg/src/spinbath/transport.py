"""Photo-induced charge cycling, radial carrier diffusion and capture by two-state defects.

Each defect has a reduced state A and an oxidized state B (one electron
fewer). Four processes connect them::

    A -> B + e   photoionization          k_ion (I)
    B -> A + h   photo-recombination      k_rec (I)
    B + e -> A   electron capture          kappa_n n
    A + h -> B   hole capture              kappa_p p

Electrons and holes diffuse radially (cylindrical symmetry) and are
generated or consumed only by these processes, so total charge is
conserved exactly by the update below up to clipping of negative values.

Time stepping is operator split: an explicit conservative finite-volume
diffusion step, then a local reaction step in which carriers relax
exponentially toward quasi-equilibrium and every defect is advanced with the
exact two-state solution at the step-averaged carrier densities. Carrier
densities are then updated from the integrated defect fluxes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .constants import CARBON_DENSITY

I_REF = 1e9  # W/m^2, reference intensity for photo rates
# the half-width centre cell exchanges at 4D/dr^2; this keeps every update positive
STABILITY_FACTOR = 0.25
NEUMANN, ABSORBING = "neumann", "absorbing"


class TransportError(ValueError):
    """Invalid transport configuration."""


class NumericalError(ArithmeticError):
    """Non-finite values or violated stability during time stepping."""


@dataclass(frozen=True)
class PhotoRate:
    """k_ref (1/s) at ``I_REF``, scaling as (I / I_REF)**order."""

    k_ref: float = 0.0
    order: int = 1

    def __post_init__(self):
        if self.k_ref < 0:
            raise TransportError("photo rate must be non-negative")
        if self.order not in (1, 2):
            raise TransportError("photo rate order must be 1 or 2")

    @property
    def two_photon(self) -> bool:
        return self.order == 2

    def __call__(self, intensity):
        return self.k_ref * (np.asarray(intensity, dtype=float) / I_REF) ** self.order


@dataclass(frozen=True)
class DefectCharge:
    name: str
    total_ppm: float
    reduced_label: str
    oxidized_label: str
    reduced_charge: int = 0
    ionization: PhotoRate = PhotoRate()
    recombination: PhotoRate = PhotoRate()
    electron_capture: float = 0.0  # m^3/s
    hole_capture: float = 0.0  # m^3/s
    initial_reduced_ppm: float | None = None
    spin_state: str | None = None  # label of the paramagnetic state, if any

    def __post_init__(self):
        if self.total_ppm < 0:
            raise TransportError(f"{self.name}: total density must be non-negative")
        if self.electron_capture < 0 or self.hole_capture < 0:
            raise TransportError(f"{self.name}: capture coefficients must be non-negative")
        r = self.initial_reduced_ppm
        if r is not None and not 0 <= r <= self.total_ppm:
            raise TransportError(f"{self.name}: initial reduced density outside [0, total]")
        if self.spin_state not in (None, self.reduced_label, self.oxidized_label):
            raise TransportError(f"{self.name}: spin_state must name one of its charge states")


@dataclass(frozen=True)
class ChargeRateSet:
    defects: tuple
    diffusion_n: float = 2e-7  # m^2/s
    diffusion_p: float = 2e-7
    lattice_density: float = CARBON_DENSITY

    def __post_init__(self):
        object.__setattr__(self, "defects", tuple(self.defects))
        if self.diffusion_n < 0 or self.diffusion_p < 0:
            raise TransportError("diffusion constants must be non-negative")
        names = [d.name for d in self.defects]
        if len(set(names)) != len(names):
            raise TransportError("defect names must be unique")

    def defect(self, name: str) -> DefectCharge:
        for d in self.defects:
            if d.name == name:
                return d
        raise KeyError(name)

    def ppm(self, value):
        return 1e-6 * value * self.lattice_density


@dataclass(frozen=True)
class BeamProfile:
    """Gaussian beam with 1/e^2 diameter ``diameter``; ``duty_cycle`` scales its rates."""

    power: float  # W
    diameter: float  # m
    duty_cycle: float = 1.0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.power < 0 or not self.diameter > 0:
            raise TransportError("beam power must be non-negative and diameter positive")
        if not 0 <= self.duty_cycle <= 1:
            raise TransportError("duty cycle must lie in [0, 1]")
        if self.kind != "gaussian":
            raise TransportError(f"unsupported beam kind {self.kind!r}")

    @property
    def waist(self) -> float:
        return 0.5 * self.diameter

    @property
    def center_intensity(self) -> float:
        return 2.0 * self.power / (np.pi * self.waist**2)

    def intensity(self, r):
        r = np.asarray(r, dtype=float)
        return self.center_intensity * np.exp(-2.0 * r**2 / self.waist**2)


def photo_rates(rate: PhotoRate, beams: Sequence[BeamProfile], r):
    """Duty-weighted sum over beams (beams do not combine in multi-photon terms)."""
    out = np.zeros_like(np.asarray(r, dtype=float))
    for b in beams:
        if rate.k_ref and b.power and b.duty_cycle:
            out = out + b.duty_cycle * rate(b.intensity(r))
    return out


@dataclass(frozen=True)
class RadialGrid:
    r: np.ndarray

    @classmethod
    def uniform(cls, r_max: float, nodes: int) -> "RadialGrid":
        if nodes < 3 or not r_max > 0:
            raise TransportError("grid needs at least 3 nodes and positive extent")
        return cls(np.linspace(0.0, r_max, nodes))

    @cached_property
    def dr(self) -> float:
        return float(self.r[1] - self.r[0])

    @cached_property
    def volumes(self) -> np.ndarray:
        """Annular cell areas per unit depth: r +- dr/2, clipped at 0 and r_max."""
        dr = self.dr
        v = 2.0 * np.pi * self.r * dr
        v[0] = np.pi * (0.5 * dr) ** 2
        v[-1] = np.pi * (self.r[-1] ** 2 - (self.r[-1] - 0.5 * dr) ** 2)
        return v

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 2.0 * np.pi * (self.r[:-1] + 0.5 * self.dr)

    def integrate(self, u) -> float:
        return float(np.dot(self.volumes, u))


@dataclass
class TransportState:
    grid: RadialGrid
    n: np.ndarray
    p: np.ndarray
    reduced: dict
    oxidized: dict
    time: float = 0.0
    clipped_mass: float = 0.0

    def copy(self) -> "TransportState":
        return TransportState(self.grid, self.n.copy(), self.p.copy(),
                              {k: v.copy() for k, v in self.reduced.items()},
                              {k: v.copy() for k, v in self.oxidized.items()}, self.time, self.clipped_mass)

    @property
    def radial_grid(self):
        return self.grid.r

    def total(self, name: str) -> np.ndarray:
        return self.reduced[name] + self.oxidized[name]

    def net_charge(self, rates: ChargeRateSet) -> float:
        """Integrated (holes + defect charge - electrons), per unit depth."""
        q = self.p - self.n
        for d in rates.defects:
            q = q + d.reduced_charge * self.reduced[d.name] + (d.reduced_charge + 1) * self.oxidized[d.name]
        return self.grid.integrate(q)

    def state_density(self, rates: ChargeRateSet, label: str) -> np.ndarray:
        for d in rates.defects:
            if label == d.reduced_label:
                return self.reduced[d.name]
            if label == d.oxidized_label:
                return self.oxidized[d.name]
        raise KeyError(label)


def initial_state(rates: ChargeRateSet, grid: RadialGrid) -> TransportState:
    """Uniform dark state from each defect's ``initial_reduced_ppm`` (default: fully reduced)."""
    red, ox = {}, {}
    ones = np.ones_like(grid.r)
    for d in rates.defects:
        total = rates.ppm(d.total_ppm)
        a = total if d.initial_reduced_ppm is None else rates.ppm(d.initial_reduced_ppm)
        red[d.name] = a * ones
        ox[d.name] = (total - a) * ones
    zero = np.zeros_like(grid.r)
    return TransportState(grid, zero.copy(), zero.copy(), red, ox)


def stable_dt(rates: ChargeRateSet, grid: RadialGrid) -> float:
    d = max(rates.diffusion_n, rates.diffusion_p)
    return np.inf if d == 0 else STABILITY_FACTOR * grid.dr**2 / d


def _diffuse(u, coeff, dt, grid, boundary):
    if coeff == 0:
        return u
    flux = coeff * grid.face_areas * np.diff(u) / grid.dr
    change = np.zeros_like(u)
    change[:-1] += flux
    change[1:] -= flux
    out = u + dt * change / grid.volumes
    if boundary == ABSORBING:
        out[-1] = 0.0
    return out


def _phi(x):
    """(1 - e^-x) / x, equal to 1 at x = 0."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-8
    out = np.divide(-np.expm1(-x), x, out=np.ones_like(x), where=~small)
    return np.where(small, 1.0 - 0.5 * x, out)


def _ratio(num, den, fallback):
    """num / den where den > 0, else ``fallback``."""
    return np.divide(num, den, out=np.array(np.broadcast_to(fallback, np.broadcast(num, den).shape), dtype=float),
                     where=den > 0)


def _react(state: TransportState, rates: ChargeRateSet, photo: PhotoTable, dt):
    """Local charge exchange over ``dt`` (scalar or per-node array); returns clipped mass density.

    Defects are handled together as (defect, node) arrays.
    """
    n, p = state.n, state.p
    names = [d.name for d in rates.defects]
    if not names:
        return np.zeros_like(n)
    a0 = np.array([state.reduced[k] for k in names])
    b0 = np.array([state.oxidized[k] for k in names])
    k_ion, k_rec = photo.ionization, photo.recombination
    kap_n = np.array([[d.electron_capture] for d in rates.defects])
    kap_p = np.array([[d.hole_capture] for d in rates.defects])

    gen_e, gen_h = (k_ion * a0).sum(axis=0), (k_rec * b0).sum(axis=0)
    lam_n, lam_p = (kap_n * b0).sum(axis=0), (kap_p * a0).sum(axis=0)

    def carrier_mean(c, gen, lam):
        eq = _ratio(gen, lam, c + 0.5 * gen * dt)
        return np.where(lam > 0, eq + (c - eq) * _phi(lam * dt), eq)

    n_bar = carrier_mean(n, gen_e, lam_n)
    p_bar = carrier_mean(p, gen_h, lam_p)

    total = a0 + b0
    loss = k_ion + kap_p * p_bar  # A -> B
    gain = k_rec + kap_n * n_bar  # B -> A
    c = loss + gain
    a_eq = _ratio(total * gain, c, a0)
    int_a = a_eq * dt + (a0 - a_eq) * dt * _phi(c * dt)
    int_b = total * dt - int_a
    a1 = np.clip(a0 - loss * int_a + gain * int_b, 0.0, total)
    for k, name in enumerate(names):
        state.reduced[name] = a1[k]
        state.oxidized[name] = total[k] - a1[k]
    n1 = n + (k_ion * int_a - kap_n * n_bar * int_b).sum(axis=0)
    p1 = p + (k_rec * int_b - kap_p * p_bar * int_a).sum(axis=0)
    clipped = np.minimum(n1, 0.0) + np.minimum(p1, 0.0)
    state.n = np.maximum(n1, 0.0)
    state.p = np.maximum(p1, 0.0)
    return -clipped


@dataclass(frozen=True)
class PhotoTable:
    """Photo-ionization and recombination rates (1/s) as (defect, node) arrays."""

    names: tuple
    ionization: np.ndarray
    recombination: np.ndarray

    def __getitem__(self, name):
        k = self.names.index(name)
        return self.ionization[k], self.recombination[k]


def local_photo_rates(rates: ChargeRateSet, beams: Sequence[BeamProfile], r) -> PhotoTable:
    r = np.asarray(r, dtype=float)
    shape = (len(rates.defects),) + r.shape
    ion = np.array([photo_rates(d.ionization, beams, r) for d in rates.defects]).reshape(shape)
    rec = np.array([photo_rates(d.recombination, beams, r) for d in rates.defects]).reshape(shape)
    return PhotoTable(tuple(d.name for d in rates.defects), ion, rec)


def step(state: TransportState, rates: ChargeRateSet, beams: Sequence[BeamProfile], dt: float,
         boundary: str = NEUMANN, photo: PhotoTable | None = None) -> TransportState:
    """Advance a copy of ``state`` by ``dt``."""
    limit = stable_dt(rates, state.grid)
    if not 0 < dt <= limit * (1 + 1e-12):
        raise NumericalError(f"dt={dt:.3g} s violates the diffusion stability bound {limit:.3g} s")
    if boundary not in (NEUMANN, ABSORBING):
        raise TransportError(f"unknown boundary {boundary!r}")
    new = state.copy()
    new.n = _diffuse(new.n, rates.diffusion_n, dt, new.grid, boundary)
    new.p = _diffuse(new.p, rates.diffusion_p, dt, new.grid, boundary)
    if photo is None:
        photo = local_photo_rates(rates, beams, new.grid.r)
    clipped = _react(new, rates, photo, dt)
    new.clipped_mass += new.grid.integrate(clipped)
    new.time = state.time + dt
    if not (np.all(np.isfinite(new.n)) and np.all(np.isfinite(new.p))):
        bad = int(np.argmax(~np.isfinite(new.n) | ~np.isfinite(new.p)))
        raise NumericalError(f"non-finite carrier density at r={new.grid.r[bad]:.3g} m, t={new.time:.3g} s")
    return new


def relax_local(state: TransportState, rates: ChargeRateSet, beams: Sequence[BeamProfile],
                t_max: float = 1e3, dt0: float = 1e-12, dt_max: float = 1e-2, growth: float = 1.05,
                rtol: float = 1e-13) -> TransportState:
    """Local steady state under ``beams`` ignoring diffusion.

    Fixed points of the reaction update are exact balances, so it is marched
    with geometrically growing steps (capped at ``dt_max``, beyond which the
    frozen-carrier splitting stops being contractive) until the defect
    densities stop changing.
    """
    new = state.copy()
    photo = local_photo_rates(rates, beams, new.grid.r)
    scale = max(rates.ppm(max(d.total_ppm for d in rates.defects)), 1.0) if rates.defects else 1.0
    t, dt = 0.0, dt0
    while t < t_max:
        before = [new.reduced[d.name].copy() for d in rates.defects]
        _react(new, rates, photo, dt)
        t += dt
        change = max((np.max(np.abs(new.reduced[d.name] - b)) for d, b in zip(rates.defects, before)), default=0.0)
        if dt >= dt_max and change < rtol * scale:
            break
        dt = min(dt * growth, dt_max)
    new.time = state.time
    return new


# --- analytic limits -------------------------------------------------------

class NoDynamicsWarning(RuntimeWarning):
    pass


def steady_state_ns0(total_ns, n, p, gamma_n: float, gamma_p: float, k_n: float):
    """n[N0] = n[N] gamma_n n / (gamma_n n + gamma_p p + k_N).

    With every term zero there is no dynamics; the input is returned and a
    :class:`NoDynamicsWarning` is issued.
    """
    denom = gamma_n * np.asarray(n, dtype=float) + gamma_p * np.asarray(p, dtype=float) + k_n
    total_ns = np.asarray(total_ns, dtype=float)
    if np.any(denom == 0):
        warnings.warn("all capture and ionization terms vanish; density left unchanged", NoDynamicsWarning)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(denom > 0, total_ns * gamma_n * np.asarray(n) / np.where(denom > 0, denom, 1.0), total_ns)
    return float(out) if out.ndim == 0 else out


# --- pump/probe runs -------------------------------------------------------

@dataclass(frozen=True)
class Phase:
    name: str
    duration: float
    beams: tuple  # names of beams switched on


@dataclass
class PumpProbeConfig:
    rates: ChargeRateSet
    beams: dict
    phases: tuple
    r_max: float = 100e-6
    nodes: int = 256
    dt: float | None = None  # default: the diffusion stability limit
    boundary: str = NEUMANN
    snapshot_times: tuple = ()
    trace_every: int = 10
    equilibrate_with: tuple = ("readout",)

    def __post_init__(self):
        if not self.phases:
            raise TransportError("at least one phase is required")
        for ph in self.phases:
            if ph.duration < 0:
                raise TransportError(f"phase {ph.name}: negative duration")
            for b in ph.beams:
                if b not in self.beams:
                    raise TransportError(f"phase {ph.name}: unknown beam {b!r}")
        if self.trace_every < 1:
            raise TransportError("trace_every must be >= 1")
        if self.dt is not None and not self.dt > 0:
            raise TransportError("dt must be positive")


@dataclass(frozen=True)
class Snapshot:
    time: float
    r: np.ndarray
    fields: dict  # column name -> ppm (defect states) or m^-3 (carriers)


@dataclass
class PumpProbeRun:
    snapshots: list
    trace_time: np.ndarray
    center_trace: dict  # state label -> ppm at r = 0
    phase_starts: dict
    final_state: TransportState
    clipped_mass: float


def _snapshot(state: TransportState, rates: ChargeRateSet) -> Snapshot:
    fields = {"n_m3": state.n.copy(), "p_m3": state.p.copy()}
    to_ppm = 1.0 / rates.ppm(1.0)
    for d in rates.defects:
        fields[d.reduced_label] = state.reduced[d.name] * to_ppm
        fields[d.oxidized_label] = state.oxidized[d.name] * to_ppm
    return Snapshot(state.time, state.grid.r.copy(), fields)


def run_pump_probe(config: PumpProbeConfig) -> PumpProbeRun:
    rates = config.rates
    grid = RadialGrid.uniform(config.r_max, config.nodes)
    dt = config.dt if config.dt is not None else stable_dt(rates, grid)
    if not np.isfinite(dt):
        raise TransportError("dt must be given when nothing diffuses")
    state = initial_state(rates, grid)
    eq_beams = [config.beams[b] for b in config.equilibrate_with if b in config.beams]
    if eq_beams:
        state = relax_local(state, rates, eq_beams)
    labels = [lab for d in rates.defects for lab in (d.reduced_label, d.oxidized_label)]
    to_ppm = 1.0 / rates.ppm(1.0)
    trace_t, trace = [0.0], {lab: [] for lab in labels}

    def record(s):
        for d in rates.defects:
            trace[d.reduced_label].append(s.reduced[d.name][0] * to_ppm)
            trace[d.oxidized_label].append(s.oxidized[d.name][0] * to_ppm)

    record(state)
    pending = sorted(config.snapshot_times)
    snaps = []
    while pending and pending[0] <= 0:
        snaps.append(_snapshot(state, rates))
        pending.pop(0)
    starts = {}
    counter = 0
    for ph in config.phases:
        starts[ph.name] = state.time
        beams = [config.beams[b] for b in ph.beams]
        photo = local_photo_rates(rates, beams, grid.r)
        steps = int(round(ph.duration / dt))
        for _ in range(steps):
            state = step(state, rates, beams, dt, config.boundary, photo)
            counter += 1
            if counter % config.trace_every == 0:
                trace_t.append(state.time)
                record(state)
            while pending and pending[0] <= state.time + 0.5 * dt:
                snaps.append(_snapshot(state, rates))
                pending.pop(0)
    return PumpProbeRun(snaps, np.array(trace_t), {k: np.array(v) for k, v in trace.items()}, starts, state,
                        state.clipped_mass)


def generation_time(run: PumpProbeRun, label: str, phase: str = "pump") -> float:
    """Time after ``phase`` start for the centre change to reach 1 - 1/e of its in-phase extreme."""
    t0 = run.phase_starts[phase]
    names = list(run.phase_starts)
    i = names.index(phase)
    t1 = run.phase_starts[names[i + 1]] if i + 1 < len(names) else np.inf
    t, y = run.trace_time, run.center_trace[label]
    sel = (t >= t0) & (t <= t1)
    change = y[sel] - y[sel][0]
    peak = change[np.argmax(np.abs(change))]
    if peak == 0:
        return np.inf
    hit = np.nonzero(change / peak >= 1 - np.exp(-1))[0]
    return float(t[sel][hit[0]] - t0)


def recovery_time(run: PumpProbeRun, label: str, baseline: float, phase: str = "recovery") -> float:
    """1/e decay time of the centre excess over ``baseline`` after ``phase`` starts.

    If the excess has not fallen to 1/e by the end of the run the time is
    extrapolated from a single exponential through the first and last points.
    """
    t0 = run.phase_starts[phase]
    t, y = run.trace_time, run.center_trace[label]
    sel = t >= t0
    ts, ex = t[sel] - t0, y[sel] - baseline
    if ex[0] == 0:
        return 0.0
    frac = ex / ex[0]
    hit = np.nonzero(frac <= np.exp(-1))[0]
    if hit.size:
        return float(ts[hit[0]])
    if frac[-1] >= 1.0:
        return np.inf
    return float(-ts[-1] / np.log(frac[-1]))


# --- default scenario ------------------------------------------------------

# kion, krec (1/s at I_REF), kappa_n NV, kappa_p NV, kN (1/s at I_REF),
# gamma_n, gamma_p, kappa_n X, kappa_p X (m^3/s)
DEFAULT_RATE_PARAMS = (3.22e5, 1.41e5, 3.06e-14, 4.96e-15, 2.65e3, 3.8e-15, 7.36e-15, 1.24e-15, 5.35e-15)


def default_rates(params=DEFAULT_RATE_PARAMS, diffusion: float = 2e-7) -> ChargeRateSet:
    """NV (2 ppm), substitutional nitrogen (10 ppm) and an X acceptor (5 ppm).

    The default rate constants were fitted to the centre of the default pump
    geometry: about 2.0 ppm N0 under readout alone, about 4.0 ppm after 0.2 ms
    of pump, a rise time near 0.02 ms and a readout-only recovery time of
    several hundred ms. X- falls from about 2.8 to 1.2 ppm under the pump.
    """
    kion, krec, kn_nv, kp_nv, k_n, gamma_n, gamma_p, kn_x, kp_x = params
    return ChargeRateSet((
        DefectCharge("NV", 2.0, "NV-", "NV0", -1, PhotoRate(kion, 2), PhotoRate(krec, 2), kn_nv, kp_nv, 1.6),
        DefectCharge("N", 10.0, "N0", "N+", 0, PhotoRate(k_n, 1), PhotoRate(0.0, 1), gamma_n, gamma_p, 2.0,
                     spin_state="N0"),
        DefectCharge("X", 5.0, "X-", "X0", -1, PhotoRate(), PhotoRate(), kn_x, kp_x, 2.5, spin_state="X-"),
    ), diffusion, diffusion)


def default_beams() -> dict:
    """Focused pump and a wide pulsed readout beam."""
    return {"pump": BeamProfile(0.5, 32e-6), "readout": BeamProfile(0.6, 350e-6, duty_cycle=0.1)}


def default_pump_probe_config(pump_duration: float = 2e-4, recovery_duration: float = 2e-2, nodes: int = 256,
                              **kw) -> PumpProbeConfig:
    """Pump plus readout, then readout alone while the centre relaxes."""
    phases = (Phase("pump", pump_duration, ("pump", "readout")), Phase("recovery", recovery_duration, ("readout",)))
    return PumpProbeConfig(default_rates(), default_beams(), phases, nodes=nodes, **kw)
