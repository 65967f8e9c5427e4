"""Inverse problem: decay and multi-Lorentzian fits, density extraction, pixel maps."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .constants import TWO_PI
from .decoherence import DEFAULT_D_OMEGA, dephasing_constant

# --- least squares -----------------------------------------------------------


@dataclass
class FitResult:
    names: tuple
    values: np.ndarray
    stderr: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    gradient_norm: float = 0.0
    flags: list = dc_field(default_factory=list)
    cost_history: list = dc_field(default_factory=list)

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def error(self, name):
        return float(self.stderr[self.names.index(name)])

    def as_dict(self) -> dict:
        return {n: float(v) for n, v in zip(self.names, self.values)}


def levenberg_marquardt(fun: Callable, jac: Callable, x0, max_iter: int = 500, gtol: float = 1e-12,
                        xtol: float = 1e-14, ftol: float = 1e-15):
    """Marquardt-scaled damped Gauss-Newton; only cost-decreasing steps are accepted.

    Returns ``(x, residual, jacobian, converged, iterations, history, grad_norm)``.
    """
    x = np.array(x0, dtype=float)
    r = fun(x)
    cost = 0.5 * r @ r
    J = jac(x)
    history = [cost]
    lam = None
    nu = 2.0
    converged = False
    it = 0
    g = J.T @ r
    for it in range(1, max_iter + 1):
        g = J.T @ r
        scale = np.sqrt(np.maximum(np.sum(J * J, axis=0), 1e-300))
        if np.max(np.abs(g) / scale) <= gtol * max(np.sqrt(2 * cost), 1e-300) or cost == 0.0:
            converged = True
            break
        if lam is None:
            lam = 1e-3
        while True:
            a = np.vstack([J, np.diag(np.sqrt(lam) * scale)])
            b = np.concatenate([-r, np.zeros_like(x)])
            step = np.linalg.lstsq(a, b, rcond=None)[0]
            x_new = x + step
            r_new = fun(x_new)
            cost_new = 0.5 * r_new @ r_new
            predicted = -(g @ step) - 0.5 * np.sum((J @ step) ** 2)
            if np.isfinite(cost_new) and cost_new < cost:
                rho = (cost - cost_new) / predicted if predicted > 0 else 0.0
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)
                small_drop = (cost - cost_new) <= ftol * cost
                x, r, cost = x_new, r_new, cost_new
                J = jac(x)
                history.append(cost)
                if small_step or small_drop:
                    converged = True
                break
            lam *= nu
            nu *= 2.0
            if lam > 1e20:
                converged = np.linalg.norm(step) <= 1e-10 * (np.linalg.norm(x) + 1e-10)
                break
        if converged or lam > 1e20:
            break
    g = J.T @ r
    return x, r, J, converged, it, history, float(np.linalg.norm(g))


def _stderr(J, r, n_free):
    m = len(r)
    dof = max(m - n_free, 1)
    s2 = (r @ r) / dof
    u, s, vt = np.linalg.svd(J, full_matrices=False)
    tol = s.max() * max(J.shape) * np.finfo(float).eps if s.size else 0.0
    err = np.zeros(J.shape[1])
    bad = np.zeros(J.shape[1], dtype=bool)
    for k in range(len(s)):
        if s[k] > tol:
            err += (vt[k] / s[k]) ** 2
        else:
            bad |= np.abs(vt[k]) > 1e-8
    err = np.sqrt(s2 * err)
    err[bad] = np.inf
    return err


def numerical_jacobian(fun, x, rel=1e-7):
    x = np.asarray(x, dtype=float)
    f0 = fun(x)
    out = np.empty((len(f0), len(x)))
    for j in range(len(x)):
        h = rel * max(abs(x[j]), 1.0)
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        out[:, j] = (fun(xp) - fun(xm)) / (2 * h)
    return out


# --- decay traces ------------------------------------------------------------

DECAY_NAMES = ("c0", "c", "rate", "d_omega", "phi0")


@dataclass
class DecayTrace:
    times: np.ndarray  # s
    values: np.ndarray
    d_omega: float = DEFAULT_D_OMEGA
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly ascending")


def decay_model(t, c0, c, rate, d_omega, phi0):
    t = np.asarray(t, dtype=float)
    return c0 + 0.5 * c * np.exp(-rate * t) * np.cos(d_omega * t + phi0)


def decay_jacobian(t, c0, c, rate, d_omega, phi0):
    e = np.exp(-rate * t)
    cs, sn = np.cos(d_omega * t + phi0), np.sin(d_omega * t + phi0)
    return np.column_stack([
        np.ones_like(t), 0.5 * e * cs, -0.5 * c * t * e * cs, -0.5 * c * t * e * sn, -0.5 * c * e * sn,
    ])


def _seed_decay(t, y, w):
    """Variable projection over a log grid of rates; returns (c0, c, rate, phi0)."""
    span = t[-1] - t[0] if t[-1] > t[0] else 1.0
    best = None
    for k in np.geomspace(0.05, 200.0, 161) / span:
        e = np.exp(-k * t)
        basis = np.column_stack([np.ones_like(t), e * np.cos(w * t), e * np.sin(w * t)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        res = np.sum((basis @ coef - y) ** 2)
        if best is None or res < best[0]:
            best = (res, k, coef)
    _, k, (c0, a, b) = best
    # c/2 cos(wt + phi) = a cos wt + b sin wt
    return c0, 2.0 * np.hypot(a, b), k, float(np.arctan2(-b, a))


def fit_decay(trace: DecayTrace, pin_d_omega: bool = True, max_iter: int = 500, min_samples: int = 8) -> FitResult:
    """Fit c0 + c/2 exp(-rate T) cos(d_omega T + phi0).

    Times are rescaled to the trace span internally. With ``pin_d_omega`` the
    modulation frequency stays at ``trace.d_omega`` and its error is zero.
    """
    t, y = trace.times, trace.values
    if len(t) < min_samples:
        raise ValueError(f"decay fit needs at least {min_samples} samples")
    ts = t[-1] - t[0] if t[-1] > t[0] else 1.0
    u = t / ts
    flags = []
    if np.ptp(y) == 0:
        vals = np.array([y[0], 0.0, 0.0, trace.d_omega, 0.0])
        return FitResult(DECAY_NAMES, vals, np.array([0, 0, np.inf, 0 if pin_d_omega else np.inf, np.inf]), 0.0,
                         True, 0, 0.0, ["zero_contrast", "rate_unidentifiable"])
    w = trace.d_omega * ts
    c0, c, k, phi = _seed_decay(u, y, w)
    free = [0, 1, 2, 4] if pin_d_omega else [0, 1, 2, 3, 4]
    full0 = np.array([c0, c, k, w, phi])

    def unpack(x):
        p = full0.copy()
        p[free] = x
        return p

    fun = lambda x: decay_model(u, *unpack(x)) - y
    jac = lambda x: decay_jacobian(u, *unpack(x))[:, free]
    x, r, J, conv, it, hist, gn = levenberg_marquardt(fun, jac, full0[free], max_iter=max_iter)
    p = unpack(x)
    if p[1] < 0:  # c < 0 is the same curve with phase shifted by pi
        p[1] = -p[1]
        p[4] += np.pi
    p[4] = (p[4] + np.pi) % TWO_PI - np.pi
    err = np.zeros(5)
    err[free] = _stderr(J, r, len(free))
    scale = np.array([1.0, 1.0, 1.0 / ts, 1.0 / ts, 1.0])
    vals, err = p * scale, err * scale
    amp_noise = np.sqrt(r @ r / max(len(r) - len(free), 1))
    if abs(vals[1]) <= 3.0 * max(err[1], amp_noise * 1e-12):
        flags.append("rate_unidentifiable")
        err[2] = np.inf
    if not conv:
        flags.append("not_converged")
    return FitResult(DECAY_NAMES, vals, err, float(np.linalg.norm(r)), conv, it, gn, flags, hist)


# --- Lorentzian spectra -------------------------------------------------------


def lorentzian_sum(f, baseline, params):
    f = np.asarray(f, dtype=float)
    out = np.full_like(f, baseline)
    for c, w, h in np.reshape(params, (-1, 3)):
        out += h / (1.0 + ((f - c) / w) ** 2)
    return out


def lorentzian_jacobian(f, baseline, params):
    cols = [np.ones_like(f)]
    for c, w, h in np.reshape(params, (-1, 3)):
        x = (f - c) / w
        d = 1.0 / (1.0 + x * x)
        cols += [2.0 * h * x * d * d / w, 2.0 * h * x * x * d * d / w, d]
    return np.column_stack(cols)


def _noise_level(y):
    d = np.diff(y)
    return 1.4826 * np.median(np.abs(d - np.median(d))) / np.sqrt(2.0) if d.size else 0.0


def auto_peak_guesses(f, y, n_peaks: int):
    """Local maxima above 3x the baseline noise, tallest first."""
    base = np.percentile(y, 10)
    noise = _noise_level(y)
    interior = (y[1:-1] >= y[:-2]) & (y[1:-1] > y[2:])
    idx = np.nonzero(interior)[0] + 1
    idx = idx[(y[idx] - base) > 3.0 * noise]
    idx = idx[np.argsort(-(y[idx] - base), kind="stable")][:n_peaks]
    return sorted(float(f[i]) for i in idx)


def fit_lorentzians(spectrum, n_peaks: int, init: Sequence | None = None, hwhm_guess: float | None = None,
                    max_iter: int = 1000) -> FitResult:
    """Least-squares sum of ``n_peaks`` Lorentzians plus a constant baseline.

    ``spectrum`` is a :class:`~spinbath.spectra.Spectrum` or a ``(grid, amplitude)``
    pair. Parameters are ``baseline`` then ``center_k, hwhm_k, height_k`` with
    peaks sorted by centre.
    """
    if n_peaks < 1:
        raise ValueError("n_peaks must be >= 1")
    if hasattr(spectrum, "freq_grid"):
        f, y = np.asarray(spectrum.freq_grid, float), np.asarray(spectrum.amplitude, float)
        hwhm_guess = hwhm_guess or spectrum.hwhm_mhz
    else:
        f, y = (np.asarray(a, float) for a in spectrum)
    df = float(np.median(np.diff(f)))
    hwhm_guess = hwhm_guess or 3.0 * df
    flags = []
    centers = list(init) if init is not None else auto_peak_guesses(f, y, n_peaks)
    if init is not None and len(centers) != n_peaks:
        raise ValueError("need one initial centre per peak")
    if any(c < f[0] or c > f[-1] for c in centers):
        raise ValueError("initial centres must lie on the frequency grid")
    while len(centers) < n_peaks:
        flags.append("missing_initial_peak")
        centers.append(float(f[np.argmax(y)]) + (len(centers) + 1) * hwhm_guess)
    base0 = float(np.percentile(y, 10))
    p0 = [base0]
    for c in centers:
        p0 += [c, hwhm_guess, float(np.interp(c, f, y)) - base0]
    f_off = 0.5 * (f[0] + f[-1])
    fs = f - f_off
    p0 = np.array(p0)
    p0[1::3] -= f_off

    def fun(x):
        return lorentzian_sum(fs, x[0], x[1:]) - y

    def jac(x):
        return lorentzian_jacobian(fs, x[0], x[1:])

    x, r, J, conv, it, hist, gn = levenberg_marquardt(fun, jac, p0, max_iter=max_iter)
    err = _stderr(J, r, len(x))
    x[1::3] += f_off
    peaks = np.reshape(x[1:], (-1, 3)).copy()
    perrs = np.reshape(err[1:], (-1, 3)).copy()
    peaks[:, 1] = np.abs(peaks[:, 1])
    order = np.argsort(peaks[:, 0], kind="stable")
    peaks, perrs = peaks[order], perrs[order]
    if n_peaks > 1 and np.any(np.diff(peaks[:, 0]) < 0.1 * np.minimum(peaks[:-1, 1], peaks[1:, 1])):
        flags.append("peak_collapse")
    noise = max(np.sqrt(r @ r / max(len(r) - len(x), 1)), 1e-300)
    if np.any(np.abs(peaks[:, 2]) <= 3.0 * noise) or np.all(np.abs(peaks[:, 2]) < 1e-12 * max(np.ptp(y), 1e-300)):
        flags.append("unidentifiable")
    if not conv:
        flags.append("not_converged")
    names = ["baseline"] + [f"{k}_{i}" for i in range(n_peaks) for k in ("center", "hwhm", "height")]
    vals = np.concatenate([[x[0]], peaks.ravel()])
    errs = np.concatenate([[err[0]], perrs.ravel()])
    return FitResult(tuple(names), vals, errs, float(np.linalg.norm(r)), conv, it, gn, flags, hist)


def peak_table(fit: FitResult) -> np.ndarray:
    """(n_peaks, 3) array of centre, HWHM, height from a Lorentzian fit."""
    return np.reshape(fit.values[1:], (-1, 3))


# --- estimators -------------------------------------------------------------


def _as_1d(X):
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError("expected a single feature column")
        X = X[:, 0]
    return X


class DecayFitter(RegressorMixin, BaseEstimator):
    """Estimator wrapper of :func:`fit_decay`; X is the evolution time in seconds."""

    def __init__(self, d_omega=DEFAULT_D_OMEGA, pin_d_omega=True, max_iter=500):
        self.d_omega = d_omega
        self.pin_d_omega = pin_d_omega
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(np.reshape(_as_1d(X), (-1, 1)), y, y_numeric=True)
        order = np.argsort(X[:, 0], kind="stable")
        result = fit_decay(DecayTrace(X[order, 0], y[order], self.d_omega), self.pin_d_omega, self.max_iter)
        self.result_ = result
        for name in DECAY_NAMES:
            setattr(self, name + "_", result[name])
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return decay_model(_as_1d(X), *self.result_.values)


class LorentzianFitter(RegressorMixin, BaseEstimator):
    """Estimator wrapper of :func:`fit_lorentzians`; X is frequency in MHz."""

    def __init__(self, n_peaks=1, init=None, hwhm_guess=None, max_iter=1000):
        self.n_peaks = n_peaks
        self.init = init
        self.hwhm_guess = hwhm_guess
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(np.reshape(_as_1d(X), (-1, 1)), y, y_numeric=True)
        order = np.argsort(X[:, 0], kind="stable")
        self.result_ = fit_lorentzians((X[order, 0], y[order]), self.n_peaks, self.init, self.hwhm_guess,
                                       self.max_iter)
        self.peaks_ = peak_table(self.result_)
        self.baseline_ = self.result_["baseline"]
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        return lorentzian_sum(_as_1d(X), self.baseline_, self.peaks_.ravel())


# --- densities ----------------------------------------------------------------


def extract_density(fit, t2_reference: float, p_s: float = 1.0, **kw) -> float:
    """n_s = (rate - 1/T2_ref) / (K P_s) in ppm; ``fit`` is a FitResult or a rate in 1/s."""
    rate = fit["rate"] if isinstance(fit, FitResult) else float(fit)
    if not 0 < p_s <= 1:
        raise ValueError("P_s must lie in (0, 1]")
    if not t2_reference > 0:
        raise ValueError("reference T2 must be positive")
    excess = rate - 1.0 / t2_reference
    if excess <= 0:
        if excess < 0:
            warnings.warn("decay slower than the reference echo; density set to zero", RuntimeWarning)
        return 0.0
    return excess * 1e-6 / (dephasing_constant(**kw) * p_s)


# --- pixel frames --------------------------------------------------------------


@dataclass
class PixelFrameSet:
    """Photon counts indexed (time, row, column) with rectangular groups (r0, r1, c0, c1), half-open."""

    frames: np.ndarray
    times: np.ndarray
    exposure: float = 1.0
    grouping: list = dc_field(default_factory=list)
    d_omega: float = DEFAULT_D_OMEGA

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.times = np.asarray(self.times, dtype=float)
        if self.frames.ndim != 3:
            raise ValueError("frames must be (time, row, column)")
        if not np.issubdtype(self.frames.dtype, np.integer) or np.any(self.frames < 0):
            raise ValueError("frame counts must be non-negative integers")
        if len(self.times) != self.frames.shape[0]:
            raise ValueError("one time stamp per frame required")
        if not self.grouping:
            self.grouping = [(0, self.frames.shape[1], 0, self.frames.shape[2])]
        rows, cols = self.frames.shape[1:]
        for g in self.grouping:
            r0, r1, c0, c1 = g
            if not (0 <= r0 < r1 <= rows and 0 <= c0 < c1 <= cols):
                raise ValueError(f"group {g} is empty or outside the {rows}x{cols} frame")

    @classmethod
    def tiled(cls, frames, times, block, **kw) -> "PixelFrameSet":
        """Disjoint rectangular tiling with ``block = (rows, cols)`` (edge tiles may be smaller)."""
        frames = np.asarray(frames)
        rows, cols = frames.shape[1:]
        br, bc = block
        groups = [(r, min(r + br, rows), c, min(c + bc, cols)) for r in range(0, rows, br) for c in range(0, cols, bc)]
        return cls(frames, times, grouping=groups, **kw)


def group_pixels(frames: PixelFrameSet, grouping=None) -> list:
    groups = frames.grouping if grouping is None else grouping
    out = []
    for g in groups:
        r0, r1, c0, c1 = g
        if r1 <= r0 or c1 <= c0:
            raise ValueError(f"group {g} is empty")
        counts = frames.frames[:, r0:r1, c0:c1].sum(axis=(1, 2), dtype=np.int64)
        out.append(DecayTrace(frames.times, counts.astype(float), frames.d_omega, {"group": tuple(g),
                                                                                  "counts": counts}))
    return out


def synthesize_frames(rate_map, times, mean_counts=200.0, contrast=0.3, offset=0.5, d_omega=DEFAULT_D_OMEGA,
                      phi0=0.0, seed=0, contrast_map=None) -> np.ndarray:
    """Poisson photon counts for per-pixel decay rates (1/s)."""
    rate_map = np.asarray(rate_map, dtype=float)
    c = np.full_like(rate_map, contrast) if contrast_map is None else np.asarray(contrast_map, dtype=float)
    t = np.asarray(times, dtype=float)[:, None, None]
    mean = mean_counts * decay_model(t, offset, c[None], rate_map[None], d_omega, phi0)
    rng = np.random.default_rng(seed)
    return rng.poisson(np.clip(mean, 0.0, None)).astype(np.int64)


@dataclass
class MapSet:
    shape: tuple
    rate: np.ma.MaskedArray
    contrast: np.ma.MaskedArray
    coherence_time: np.ma.MaskedArray
    density: np.ma.MaskedArray | None = None
    t2_star: np.ma.MaskedArray | None = None
    t2: np.ma.MaskedArray | None = None
    contrast_ratio: np.ma.MaskedArray | None = None


def _group_layout(grouping):
    rows = sorted({g[0] for g in grouping})
    cols = sorted({g[2] for g in grouping})
    return rows, cols


def fit_groups(frames: PixelFrameSet):
    """Per-group decay fits laid out on the tiling grid; failed or unidentifiable cells masked."""
    rows, cols = _group_layout(frames.grouping)
    shape = (len(rows), len(cols))
    rate = np.ma.masked_all(shape)
    contrast = np.ma.masked_all(shape)
    for trace in group_pixels(frames):
        g = trace.metadata["group"]
        i, j = rows.index(g[0]), cols.index(g[2])
        total = trace.values.sum()
        if total == 0:
            continue
        y = trace.values / (total / len(trace.values))
        try:
            fit = fit_decay(DecayTrace(trace.times, y, trace.d_omega))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError):
            continue
        if "rate_unidentifiable" in fit.flags or not np.isfinite(fit["rate"]):
            continue
        rate[i, j] = fit["rate"]
        contrast[i, j] = fit["c"] / max(fit["c0"], 1e-300)
    return shape, rate, contrast


def build_maps(frames, t2_reference: float | None = None, p_s: float = 1.0, contrast_reference: float | None = None):
    """Maps from grouped frames.

    ``frames`` is a :class:`PixelFrameSet` or a dict keyed by sequence kind
    (``"deer"``, ``"ramsey"``, ``"echo"``). DEER rates are converted to
    densities against ``t2_reference`` (or the echo map, when given).
    """
    sets = frames if isinstance(frames, dict) else {"deer": frames}
    fitted = {k: fit_groups(v) for k, v in sets.items()}
    key = "deer" if "deer" in fitted else next(iter(fitted))
    shape, rate, contrast = fitted[key]
    with np.errstate(divide="ignore"):
        maps = MapSet(shape, rate, contrast, 1.0 / rate)
    if "ramsey" in fitted:
        maps.t2_star = 1.0 / fitted["ramsey"][1]
    if "echo" in fitted:
        maps.t2 = 1.0 / fitted["echo"][1]
    if "deer" in fitted:
        dens = np.ma.masked_all(shape)
        for idx in np.ndindex(shape):
            if rate.mask[idx] if np.ndim(rate.mask) else False:
                continue
            ref = t2_reference
            if ref is None and maps.t2 is not None and not np.ma.is_masked(maps.t2[idx]):
                ref = float(maps.t2[idx])
            if ref is None:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                dens[idx] = extract_density(float(rate[idx]), ref, p_s)
        maps.density = dens
    if contrast_reference:
        maps.contrast_ratio = contrast / contrast_reference
    return maps


# --- frame IO -------------------------------------------------------------------

_MAGIC = b"SPINBATH-FRAMES\n"


def _header(fs: PixelFrameSet) -> dict:
    return {"shape": list(fs.frames.shape), "times_s": [float(t) for t in fs.times], "exposure_s": fs.exposure,
            "grouping": [list(map(int, g)) for g in fs.grouping], "d_omega_rad_s": fs.d_omega}


def write_frames(fs: PixelFrameSet, path, fmt: str = "text"):
    """Text: '#'-prefixed JSON header then one ``t row col counts`` line per pixel. Binary: magic,
    header length, JSON header, little-endian uint32 counts in (t, row, col) order."""
    head = _header(fs)
    if fmt == "text":
        with open(path, "w") as fh:
            fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
            fh.write("# columns: time_index row col counts\n")
            t, r, c = np.indices(fs.frames.shape)
            np.savetxt(fh, np.column_stack([t.ravel(), r.ravel(), c.ravel(), fs.frames.ravel()]), fmt="%d")
    elif fmt == "binary":
        blob = json.dumps(head, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(np.uint32(len(blob)).tobytes())
            fh.write(blob)
            fh.write(fs.frames.astype("<u4").tobytes())
    else:
        raise ValueError(f"unknown frame format {fmt!r}")


def _from_header(head, counts) -> PixelFrameSet:
    return PixelFrameSet(counts.reshape(head["shape"]).astype(np.int64), head["times_s"], head["exposure_s"],
                         [tuple(g) for g in head["grouping"]], head["d_omega_rad_s"])


def read_frames(path) -> PixelFrameSet:
    with open(path, "rb") as fh:
        start = fh.read(len(_MAGIC))
        if start == _MAGIC:
            n = int(np.frombuffer(fh.read(4), "<u4")[0])
            head = json.loads(fh.read(n))
            counts = np.frombuffer(fh.read(), "<u4")
            if counts.size != int(np.prod(head["shape"])):
                raise ValueError("binary frame payload does not match header shape")
            return _from_header(head, counts)
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# {"):
            raise ValueError("frame file lacks a JSON header line")
        head = json.loads(first[2:])
        data = np.loadtxt(fh, comments="#", dtype=np.int64, ndmin=2)
    shape = head["shape"]
    counts = np.zeros(shape, dtype=np.int64)
    if data.size:
        if data.shape[1] != 4:
            raise ValueError("frame rows must have 4 integer columns")
        counts[data[:, 0], data[:, 1], data[:, 2]] = data[:, 3]
    return _from_header(head, counts)
