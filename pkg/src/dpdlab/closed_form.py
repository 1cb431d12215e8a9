"""Closed-form discrete-time equivalent of the modulated CT Volterra chain.

A single CT product ``y(t) = x(t - tau_1) ... x(t - tau_d)`` seen through
modulation and demodulation is a sum over branch indices
``m in {1, 2, 3, 4}^d``: a real DT monomial ``f_{m,k}`` of in-phase and
quadrature samples followed by an LTI filter ``h_{m,tau}``.  Branches 1/3 use
the previous symbol (the part of the delayed ZOH window before ``tau'``),
branches 2/4 the current one; 1/2 carry the in-phase rail, 3/4 quadrature.

Two pulse spectra are supported:

``"continuous"``
    Fourier transform of the rectangular CT pulse; this is the analytic
    result and differs from the oversampled oracle by O(1/R).
``"grid"``
    exact DTFT of the same pulse sampled on the ``T/R`` grid; reproduces
    the oracle chain to rounding error, which pins every sign and constant.

Conventions fixed against the oracle:

* sign factor ``j**N2 * pi_m(r)``; the ``-q sin`` rail of the modulator
  contributes ``-1`` per quadrature branch.  ``printed_sign=True`` reverts to
  ``(-j)**N2 * (-1)**pi_m(r)``, which collapses to ``-(-j)**N2`` and is kept
  only to show it disagrees with the oracle.
* pulse support is the overlap of the branch windows,
  ``[max_{S2 u S4} tau', min_{S1 u S3} tau')``.  ``printed_bounds=True``
  uses min/max the other way round.
* overall constant ``(G/T) * T**(1-d)``: LPF gain over the sampler's ``1/T``,
  and the ``1/T**d`` height of a product of ``d`` unit-area ZOH pulses.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import ceil

import numpy as np

from .chain import EDGE_GAIN, DemodConfig, VolterraModel, identity_model, widely_linear_inverse
from .frames import GRID_TOL, ChainParams, DtFrame, FrameError, dt_omegas

PULSE_MODES = ("continuous", "grid")


@dataclass(frozen=True)
class IndexSets:
    """``S_k(m)`` as 1-based positions, plus ``N1 = |S1 u S2|`` and ``N2 = |S3 u S4|``."""

    S1: frozenset
    S2: frozenset
    S3: frozenset
    S4: frozenset

    @property
    def N1(self) -> int:
        return len(self.S1) + len(self.S2)

    @property
    def N2(self) -> int:
        return len(self.S3) + len(self.S4)

    def __getitem__(self, k: int) -> frozenset:
        return (self.S1, self.S2, self.S3, self.S4)[k - 1]


def index_sets(m) -> IndexSets:
    m = tuple(int(x) for x in m)
    if not m or any(x not in (1, 2, 3, 4) for x in m):
        raise FrameError(f"branch index must be a non-empty tuple over 1..4, got {m}")
    sets = [frozenset(i + 1 for i, x in enumerate(m) if x == k) for k in (1, 2, 3, 4)]
    return IndexSets(*sets)


def sigma_maps(r, m, tau=None) -> dict:
    """``sigma_bar(r)``, ``sigma(r)``, ``pi_m(r)`` and optionally ``(r, tau)``."""
    r = np.asarray(r)
    if not np.all(np.isin(r, (-1, 1))):
        raise FrameError(f"r must have entries in {{-1, 1}}, got {r}")
    quad = [i for i, x in enumerate(m) if x in (3, 4)]
    out = {
        "sigma_bar": int(r.sum()),
        "sigma": int(r.sum()) - 1,
        "pi": int(np.prod(r[quad])) if quad else 1,
    }
    if tau is not None:
        out["dot"] = float(np.dot(r, tau))
    return out


@dataclass(frozen=True)
class DelaySplit:
    k: tuple[int, ...]
    tau_prime: tuple[float, ...]


def split_delays(tau, T: float = 1.0) -> DelaySplit:
    """Unique ``tau = k*T + tau'`` with ``tau'`` in ``[0, T)``."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(tau < 0):
        raise FrameError(f"delays must be non-negative, got {tau}")
    ratio = tau / T
    k = np.floor(ratio)
    # snap values that sit on a window boundary up to the next window
    k = np.where(np.abs(ratio - np.round(ratio)) <= GRID_TOL, np.round(ratio), k)
    tp = np.clip(tau - k * T, 0.0, None)
    return DelaySplit(tuple(int(x) for x in k), tuple(float(x) for x in tp))


def pulse_bounds(m, tau_prime, T: float = 1.0, printed_bounds: bool = False):
    """Support ``(lo, hi)`` of the branch-product pulse, or ``None`` when empty."""
    late = [tau_prime[i] for i, x in enumerate(m) if x in (2, 4)]
    early = [tau_prime[i] for i, x in enumerate(m) if x in (1, 3)]
    if printed_bounds:
        lo = min(late) if late else 0.0
        hi = max(early) if early else T
    else:
        lo = max(late) if late else 0.0
        hi = min(early) if early else T
    if lo >= hi:
        return None
    return lo, hi


def _rect_spectrum(omega, lo, hi, T, grid_step=None):
    """``(1/T) * FT`` of the indicator of ``[lo, hi)``; exact grid DTFT when ``grid_step`` is set."""
    omega = np.asarray(omega, dtype=float)
    out = np.empty(omega.shape, dtype=complex)
    if grid_step is None:
        small = np.abs(omega) * max(hi, 1e-300) < 1e-12
        out[small] = hi - lo
        w = omega[~small]
        out[~small] = (np.exp(-1j * w * lo) - np.exp(-1j * w * hi)) / (1j * w)
        return out / T
    a = int(round(lo / grid_step))
    n = int(round(hi / grid_step)) - a
    z = np.exp(-1j * omega * grid_step)
    # z == 1 on the aliases of DC
    wrapped = np.angle(z)
    small = np.abs(wrapped) < 1e-12
    out[small] = n
    zs = z[~small]
    out[~small] = np.exp(-1j * omega[~small] * a * grid_step) * (1 - zs**n) / (1 - zs)
    return out * grid_step / T


def pulse_spectrum(m, tau_prime, T: float, omega, grid_step=None, printed_bounds=False):
    """Spectrum of ``p_{m,tau}(t) = (1/T)[u(t - lo) - u(t - hi)]`` at angular frequency ``omega``."""
    omega = np.asarray(omega, dtype=float)
    bounds = pulse_bounds(m, tau_prime, T, printed_bounds)
    if bounds is None:
        return np.zeros(omega.shape, dtype=complex)
    return _rect_spectrum(omega, bounds[0], bounds[1], T, grid_step)


def calibration_constant(params: ChainParams, cfg: DemodConfig, d: int) -> float:
    """Overall response scale: LPF gain over the sampler's 1/T, times ``T**(1-d)``."""
    return cfg.lpf_gain / params.T * params.T ** (1 - d)


def _term_response_at(m, tau, omega_dt, params, cfg, pulse, printed_sign, printed_bounds):
    d = len(m)
    T, wc = params.T, params.omega_c
    split = split_delays(tau, T)
    sets = index_sets(m)
    grid_step = params.dt if pulse == "grid" else None
    if printed_sign:
        front = (-1j) ** sets.N2 / 2**d
    else:
        front = (1j) ** sets.N2 / 2**d
    tau = np.asarray(tau, dtype=float)
    acc = np.zeros(omega_dt.shape, dtype=complex)
    for r in itertools.product((-1, 1), repeat=d):
        s = sigma_maps(r, m, tau)
        sign = -1.0 if printed_sign else s["pi"]
        P = pulse_spectrum(
            m, split.tau_prime, T, omega_dt / T - wc * s["sigma"], grid_step, printed_bounds
        )
        acc += sign * np.exp(-1j * wc * s["dot"]) * P
    phase = np.exp(1j * omega_dt * cfg.phase_seconds(params) / T)
    return calibration_constant(params, cfg, d) * front * acc * phase


def term_filter(
    m,
    tau,
    params: ChainParams,
    cfg: DemodConfig = DemodConfig(equalize=False),
    pulse: str = "continuous",
    printed_sign: bool = False,
    printed_bounds: bool = False,
) -> np.ndarray:
    """Unequalized DT response ``H_{m,tau}`` on the N DFT frequencies.

    Interior bins evaluate the closed form at ``Omega/T``.  For even N the DT
    Nyquist bin collects both band edges ``Omega = +-pi``, each attenuated by
    the edge gain of H and of the demodulator LPF.
    """
    if pulse not in PULSE_MODES:
        raise FrameError(f"pulse mode must be one of {PULSE_MODES}, got {pulse!r}")
    m = tuple(m)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if len(tau) != len(m):
        raise FrameError("m and tau must have equal length")
    for t in tau:
        params.to_steps(t)
    args = (params, cfg, pulse, printed_sign, printed_bounds)
    omega = dt_omegas(params.N)
    H = _term_response_at(m, tau, omega, *args)
    if params.N % 2 == 0:
        edges = _term_response_at(m, tau, np.array([np.pi, -np.pi]), *args)
        H[params.N // 2] = EDGE_GAIN**2 * edges.sum()
    return H


def term_monomial(m, k, w) -> np.ndarray:
    """``f_{m,k}[n]``: product of circularly delayed in-phase/quadrature samples."""
    samples = w.samples if isinstance(w, DtFrame) else np.asarray(w)
    rails = {1: samples.real, 2: samples.real, 3: samples.imag, 4: samples.imag}
    out = np.ones(len(samples))
    for mi, ki in zip(m, k):
        lag = ki + 1 if mi in (1, 3) else ki
        out = out * np.roll(rails[mi], lag)
    return out


def monomial_key(m, k):
    """``(alpha, beta)`` exponent tuples over lags ``0..max lag`` for ``f_{m,k}``."""
    lags = [ki + 1 if mi in (1, 3) else ki for mi, ki in zip(m, k)]
    depth = max(lags)
    alpha = [0] * (depth + 1)
    beta = [0] * (depth + 1)
    for mi, lag in zip(m, lags):
        if mi in (1, 2):
            alpha[lag] += 1
        else:
            beta[lag] += 1
    return tuple(alpha), tuple(beta)


@dataclass(frozen=True)
class TheoremTerm:
    m: tuple[int, ...]
    k: tuple[int, ...]
    tau: tuple[float, ...]
    coeff: float
    response: np.ndarray = field(repr=False)


def _equalize_response(H: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # the monomial spectra F are conjugate symmetric, so the widely-linear
    # inverse acts on F*H as a plain response change
    neg = (-np.arange(len(H))) % len(H)
    det = A * np.conj(A[neg]) - B * np.conj(B[neg])
    return (np.conj(A[neg]) * H - B * np.conj(H[neg])) / det


@lru_cache(maxsize=32)
def linear_response(params: ChainParams, cfg: DemodConfig, pulse: str = "continuous"):
    """Widely-linear ``(A, B)`` of the closed-form ``D H M`` (identity distortion)."""
    H_i = term_filter((2,), (0.0,), params, cfg, pulse)
    H_q = term_filter((4,), (0.0,), params, cfg, pulse)
    return (H_i - 1j * H_q) / 2, (H_i + 1j * H_q) / 2


def theorem_terms(
    model: VolterraModel,
    params: ChainParams,
    cfg: DemodConfig = DemodConfig(equalize=False),
    pulse: str = "continuous",
    **flags,
) -> list[TheoremTerm]:
    """All non-vanishing ``(m, k, tau)`` terms of a model, weighted later by ``coeff``.

    The constant ``b0`` only feeds CT DC, which the band-pass removes, so it
    has no terms.  With ``cfg.equalize`` every response carries the inverse of
    the closed-form ``D H M``.
    """
    if cfg.equalize:
        A, B = linear_response(params, cfg, pulse)
    terms = []
    for vt in model.terms:
        split = split_delays(vt.delays, params.T)
        for m in itertools.product((1, 2, 3, 4), repeat=vt.degree):
            if pulse_bounds(m, split.tau_prime, params.T, flags.get("printed_bounds", False)) is None:
                continue
            H = term_filter(m, vt.delays, params, cfg, pulse, **flags)
            if cfg.equalize:
                H = _equalize_response(H, A, B)
            terms.append(TheoremTerm(m, split.k, vt.delays, vt.coeff, H))
    return terms


def closed_form_S(
    w: DtFrame,
    model: VolterraModel,
    cfg: DemodConfig = DemodConfig(equalize=False),
    pulse: str = "continuous",
    **flags,
) -> DtFrame:
    """``v = sum_terms b_k sum_m f_{m,k} * h_{m,tau}`` evaluated by DFT."""
    V = np.zeros(w.params.N, dtype=complex)
    for term in theorem_terms(model, w.params, cfg, pulse, **flags):
        V += term.coeff * np.fft.fft(term_monomial(term.m, term.k, w)) * term.response
    return DtFrame(np.fft.ifft(V), w.params)


@dataclass(frozen=True)
class LVDecomposition:
    """Monomial generator ``V`` (exponent tuples) and LTI stage ``L`` (one response per monomial)."""

    monomials: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    responses: np.ndarray = field(repr=False)
    params: ChainParams = field(repr=False)

    def generate(self, w: DtFrame) -> np.ndarray:
        """Rows ``g_k[n]``."""
        i, q = w.samples.real, w.samples.imag
        rows = np.ones((len(self.monomials), len(i)))
        for row, (alpha, beta) in zip(rows, self.monomials):
            for lag, e in enumerate(alpha):
                if e:
                    row *= np.roll(i, lag) ** e
            for lag, e in enumerate(beta):
                if e:
                    row *= np.roll(q, lag) ** e
        return rows

    def evaluate(self, w: DtFrame) -> DtFrame:
        G = np.fft.fft(self.generate(w), axis=1)
        return DtFrame(np.fft.ifft((G * self.responses).sum(axis=0)), w.params)


def consolidate_LV(
    model: VolterraModel,
    params: ChainParams,
    cfg: DemodConfig = DemodConfig(equalize=False),
    pulse: str = "continuous",
) -> LVDecomposition:
    """Merge theorem terms that share a monomial, summing their weighted responses."""
    merged: dict = {}
    for term in theorem_terms(model, params, cfg, pulse):
        key = monomial_key(term.m, term.k)
        contrib = term.coeff * term.response
        merged[key] = merged[key] + contrib if key in merged else contrib
    keys = sorted(merged, key=lambda kb: (sum(kb[0]) + sum(kb[1]), kb))
    responses = np.array([merged[k] for k in keys]) if keys else np.zeros((0, params.N), complex)
    return LVDecomposition(tuple(keys), responses, params)


def lv_depth_bound(model: VolterraModel, T: float = 1.0) -> int:
    return ceil(model.depth / T - GRID_TOL)


def polynomial_basis(omega: np.ndarray, order: int) -> np.ndarray:
    """Columns ``1, j*Omega, Omega**2, j*Omega**3, ...``: real coefficients keep real inputs real."""
    return np.stack([(1j ** (n % 2)) * omega**n for n in range(order + 1)], axis=1)


@dataclass(frozen=True)
class Projection:
    X: np.ndarray
    residuals: np.ndarray


def project_L(lv: LVDecomposition, order: int = 2) -> Projection:
    """Least-squares fit of each monomial response onto low-order polynomials in Omega.

    Returns the complex gain matrix ``X`` (monomials x (order+1)) and the
    relative L2 residual of every row.
    """
    if order < 0:
        raise FrameError("order must be non-negative")
    Phi = polynomial_basis(dt_omegas(lv.params.N), order)
    X, *_ = np.linalg.lstsq(Phi, lv.responses.T, rcond=None)
    fit = Phi @ X
    norms = np.linalg.norm(lv.responses, axis=1)
    resid = np.linalg.norm(lv.responses.T - fit, axis=0)
    rel = np.divide(resid, norms, out=np.zeros_like(resid), where=norms > 0)
    return Projection(X.T, rel)


def dump_terms_csv(terms: list[TheoremTerm], path) -> None:
    """One row per (term, bin): m, k, tau, coeff, bin, Re H, Im H."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m", "k", "tau", "coeff", "bin", "re", "im"])
        for t in terms:
            m = " ".join(map(str, t.m))
            k = " ".join(map(str, t.k))
            tau = " ".join(repr(x) for x in t.tau)
            for b, h in enumerate(t.response):
                writer.writerow([m, k, tau, repr(t.coeff), b, repr(h.real), repr(h.imag)])
