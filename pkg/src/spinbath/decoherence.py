"""Central-spin coherence under Ramsey, echo and DEER sequences.

Bath noise is an Ornstein-Uhlenbeck field with correlation
``G(t) = gamma^2 <B1^2> cos(omega_L t) exp(-|t|/tau_c)`` whose spectrum is a
pair of Lorentzians at +-omega_L. For Gaussian phase noise the coherence is
``exp(-chi)`` with

    chi = 1/2 int S(w) |F(w)|^2 dw / 2pi.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import integrate

from .constants import CARBON_DENSITY, GAMMA_E, HBAR, MU0, MU_B, TWO_PI
from .flipflop import BathComposition, bath_correlation_time
from .spinmodel import MagneticField

RAMSEY, ECHO, DEER = "ramsey", "echo", "deer"
KINDS = (RAMSEY, ECHO, DEER)
DEFAULT_D_OMEGA = TWO_PI * 1e6

#: gamma_e * sqrt(<B1^2>) = FIELD_SCALE * K * n, see :func:`b1_rms_sq_from_density`
FIELD_SCALE = 2.0


class QuadratureError(ArithmeticError):
    def __init__(self, message, achieved_error):
        super().__init__(f"{message} (achieved error {achieved_error:.3g})")
        self.achieved_error = achieved_error


@dataclass(frozen=True)
class NoiseModel:
    b1_rms_sq: float  # T^2
    tau_c: float  # s
    larmor_omega: float = 0.0  # rad/s
    gyro_e: float = GAMMA_E

    def __post_init__(self):
        for name in ("b1_rms_sq", "larmor_omega", "gyro_e"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")
        if not self.tau_c > 0:
            raise ValueError("tau_c must be positive")

    @property
    def strength(self) -> float:
        """gamma^2 <B1^2> in s^-2."""
        return self.gyro_e**2 * self.b1_rms_sq

    def spectrum(self, omega):
        w = np.asarray(omega, dtype=float)
        a, tc, wl = self.strength, self.tau_c, self.larmor_omega
        return a * tc / (1 + ((w - wl) * tc) ** 2) + a * tc / (1 + ((w + wl) * tc) ** 2)


@dataclass(frozen=True)
class PulseSequence:
    kind: str
    total_time: float
    recoupled_species: tuple | None = None  # (name, resonance MHz)
    inversion_probability: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sequence kind {self.kind!r}")
        if not 0.0 <= self.inversion_probability <= 1.0:
            raise ValueError("inversion probability must lie in [0, 1]")
        if self.kind == DEER and self.recoupled_species is None:
            raise ValueError("DEER needs a recoupled species")
        if not self.total_time >= 0:
            raise ValueError("total time must be non-negative")


@dataclass
class CoherencePrediction:
    t2_star: float
    t2: float
    tau_c: float
    ts_star: dict = dc_field(default_factory=dict)
    deer_times: np.ndarray = None
    deer_contrast_curve: dict = dc_field(default_factory=dict)


# --- filter functions ------------------------------------------------------

def filter_function(kind: str, omega, T: float):
    """|F(w)|^2: Ramsey 4 sin^2(wT/2)/w^2, echo 16 sin^4(wT/4)/w^2, exact at w = 0."""
    if not T > 0:
        raise ValueError("T must be positive")
    w = np.asarray(omega, dtype=float)
    if kind == RAMSEY:
        out = T**2 * np.sinc(w * T / TWO_PI) ** 2
    elif kind in (ECHO, DEER):
        out = w**2 * T**4 * np.sinc(w * T / (2 * TWO_PI)) ** 4 / 16.0
    else:
        raise ValueError(f"unknown sequence kind {kind!r}")
    return float(out) if out.ndim == 0 else out


def _check_noise(noise, T):
    if not T > 0:
        raise ValueError("T must be positive")
    return noise.strength * noise.tau_c**2, T / noise.tau_c


def chi_numeric(noise: NoiseModel, kind: str, T: float, rtol: float = 1e-6) -> float:
    """chi by adaptive quadrature of the noise spectrum against the filter function.

    In x = w tau_c the integral becomes

        chi = A tau_c^2 / pi * int_0^inf l(x) h(u x) / x^2 dx,

    h = 1 - cos y (Ramsey) or 3 - 4 cos(y/2) + cos y (echo). The first few
    oscillations are integrated directly; the remainder is split into
    non-oscillatory and Fourier pieces.
    """
    scale, u = _check_noise(noise, T)
    if scale == 0:
        return 0.0
    xl = noise.larmor_omega * noise.tau_c

    def lor(x):
        return 1.0 / (1.0 + (x - xl) ** 2) + 1.0 / (1.0 + (x + xl) ** 2)

    if kind == RAMSEY:
        def near(x):
            s = np.sin(0.5 * u * x)
            return lor(x) * 2.0 * s * s / x**2 if x > 0 else lor(0.0) * 0.5 * u * u
        tail_terms = [(1.0, None), (-1.0, u)]
    elif kind in (ECHO, DEER):
        def near(x):
            s = np.sin(0.25 * u * x)
            return lor(x) * 8.0 * s**4 / x**2 if x > 0 else 0.0
        tail_terms = [(3.0, None), (-4.0, 0.5 * u), (1.0, u)]
    else:
        raise ValueError(f"unknown sequence kind {kind!r}")

    a = 8.0 * np.pi / u
    points = [p for p in (1.0, xl) if 0 < p < a]
    total, err = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            v, e = integrate.quad(near, 0.0, a, points=points or None, limit=2000, epsabs=0.0, epsrel=1e-10)
            total += v
            err += e
            for coef, freq in tail_terms:
                f = lambda x: lor(x) / x**2
                if freq is None:
                    pts = [p for p in (xl,) if p > a]
                    if pts:
                        v1, e1 = integrate.quad(f, a, pts[0], limit=2000, epsabs=0.0, epsrel=1e-10)
                        v2, e2 = integrate.quad(f, pts[0], np.inf, limit=2000, epsabs=0.0, epsrel=1e-10)
                        v, e = v1 + v2, e1 + e2
                    else:
                        v, e = integrate.quad(f, a, np.inf, limit=2000, epsabs=0.0, epsrel=1e-10)
                else:
                    v, e = integrate.quad(f, a, np.inf, weight="cos", wvar=freq, limlst=200,
                                          epsabs=1e-3 * rtol * abs(total))
                total += coef * v
                err += abs(coef) * e
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature did not converge: {exc}", err) from None
    if err > rtol * abs(total):
        raise QuadratureError("quadrature tolerance not met", err / abs(total))
    return float(scale * total / np.pi)


def chi_closed_ramsey(noise: NoiseModel, T):
    """A tau_c^2 [u - 1 + e^-u], u = T/tau_c; valid for omega_L = 0."""
    u = np.asarray(T, dtype=float) / noise.tau_c
    return noise.strength * noise.tau_c**2 * (u + np.expm1(-u))


def chi_closed_echo(noise: NoiseModel, T):
    """A tau_c^2 [u - 3 - e^-u + 4 e^(-u/2)]; valid for omega_L = 0."""
    u = np.asarray(T, dtype=float) / noise.tau_c
    # rearranged as u - 4(1 - e^-u/2) + (1 - e^-u) to limit cancellation
    return noise.strength * noise.tau_c**2 * (u + 4.0 * np.expm1(-0.5 * u) - np.expm1(-u))


def dchi_closed_ramsey(noise: NoiseModel, T):
    u = np.asarray(T, dtype=float) / noise.tau_c
    return noise.strength * noise.tau_c * -np.expm1(-u)


def dchi_closed_echo(noise: NoiseModel, T):
    u = np.asarray(T, dtype=float) / noise.tau_c
    return noise.strength * noise.tau_c * (1.0 + np.exp(-u) - 2.0 * np.exp(-0.5 * u))


def coherence(noise: NoiseModel, kind: str, T):
    chi = chi_closed_ramsey(noise, T) if kind == RAMSEY else chi_closed_echo(noise, T)
    return np.exp(-chi)


def t2_star(b1_rms_sq: float, gyro=GAMMA_E) -> float:
    if b1_rms_sq < 0:
        raise ValueError("b1_rms_sq must be non-negative")
    if b1_rms_sq == 0:
        return np.inf
    return float(np.sqrt(2.0) / (gyro * np.sqrt(b1_rms_sq)))


def t2(b1_rms_sq: float, tau_c: float, gyro=GAMMA_E) -> float:
    if b1_rms_sq < 0 or tau_c <= 0:
        raise ValueError("b1_rms_sq must be non-negative and tau_c positive")
    if b1_rms_sq == 0 or np.isinf(tau_c):
        return np.inf
    return float((12.0 * tau_c / (gyro**2 * b1_rms_sq)) ** (1.0 / 3.0))


# --- density <-> dephasing -------------------------------------------------

def dephasing_constant(g_a=2.0, g_s=2.0, sigma=0.5, lattice_density=CARBON_DENSITY) -> float:
    """K in us^-1 per ppm: 2 pi mu0 muB^2 gA gs |sigma| / (9 sqrt3 hbar) x (1 ppm of lattice sites)."""
    k_si = TWO_PI * MU0 * MU_B**2 * g_a * g_s * abs(sigma) / (9.0 * np.sqrt(3.0) * HBAR)
    return float(k_si * 1e-6 * lattice_density * 1e-6)


def _check_ps(p_s):
    if not 0.0 <= p_s <= 1.0:
        raise ValueError("P_s must lie in [0, 1]")


def density_to_dephasing(n_ppm, p_s: float = 1.0, **kw):
    """1/Ts* in us^-1."""
    _check_ps(p_s)
    n = np.asarray(n_ppm, dtype=float)
    if np.any(n < 0):
        raise ValueError("density must be non-negative")
    out = dephasing_constant(**kw) * p_s * n
    return float(out) if out.ndim == 0 else out


def dephasing_to_density(rate_per_us, p_s: float = 1.0, **kw):
    _check_ps(p_s)
    if p_s == 0:
        raise ValueError("P_s = 0 carries no density information")
    out = np.asarray(rate_per_us, dtype=float) / (dephasing_constant(**kw) * p_s)
    return float(out) if out.ndim == 0 else out


def b1_rms_sq_from_density(n_ppm: float, field_scale: float = FIELD_SCALE, gyro=GAMMA_E, **kw) -> float:
    """<B1^2> (T^2) such that gamma sqrt(<B1^2>) = field_scale * K * n."""
    rate = field_scale * density_to_dephasing(n_ppm, 1.0, **kw) * 1e6
    return float((rate / gyro) ** 2)


def deer_signal(T, ts_star, t2_time, c0=0.0, c=1.0, d_omega=DEFAULT_D_OMEGA, phi0=0.0):
    """c0 + c/2 exp(-T (1/T2 + 1/Ts*)) cos(d_omega T + phi0); infinite times allowed."""
    if ts_star <= 0 or t2_time <= 0:
        raise ValueError("coherence times must be positive")
    T = np.asarray(T, dtype=float)
    rate = 1.0 / t2_time + 1.0 / ts_star
    out = c0 + 0.5 * c * np.exp(-T * rate) * np.cos(d_omega * T + phi0)
    return float(out) if out.ndim == 0 else out


def deer_envelope(T, ts_star, t2_time):
    return np.exp(-np.asarray(T, dtype=float) * (1.0 / t2_time + 1.0 / ts_star))


# --- scenario --------------------------------------------------------------

@dataclass
class ScenarioPrediction:
    before: CoherencePrediction
    after: CoherencePrediction

    @property
    def fractional_t2_star(self) -> float:
        return self.after.t2_star / self.before.t2_star - 1.0

    @property
    def fractional_t2(self) -> float:
        return self.after.t2 / self.before.t2 - 1.0


def predict_coherence(bath: BathComposition, field: MagneticField, sample_count: int = 20000, seed: int = 0,
                      times: Sequence | None = None, p_s: float = 1.0,
                      field_scale: float = FIELD_SCALE) -> CoherencePrediction:
    """T2*, T2 and per-species DEER traces for one bath."""
    b1 = b1_rms_sq_from_density(bath.total_ppm, field_scale, lattice_density=bath.lattice_density)
    tc = bath_correlation_time(bath, field, sample_count, seed).tau_c
    ts2 = t2_star(b1)
    t2v = t2(b1, tc)
    ts = {}
    for m, ppm in bath.entries:
        r = density_to_dephasing(ppm, p_s, lattice_density=bath.lattice_density)
        ts[m.name] = np.inf if r == 0 else 1e-6 / r
    if times is None:
        times = np.linspace(0.0, 3.0 * (t2v if np.isfinite(t2v) else 1e-5), 121)
    times = np.asarray(times, dtype=float)
    curves = {name: deer_envelope(times, tss, t2v) for name, tss in ts.items()}
    return CoherencePrediction(ts2, t2v, tc, ts, times, curves)


def predict_scenario(bath_before: BathComposition, bath_after: BathComposition, field: MagneticField,
                     sample_count: int = 20000, seed: int = 0, **kw) -> ScenarioPrediction:
    """Before/after predictions sampled with the same seed so differences are not noise-dominated."""
    return ScenarioPrediction(
        predict_coherence(bath_before, field, sample_count, seed, **kw),
        predict_coherence(bath_after, field, sample_count, seed, **kw),
    )
