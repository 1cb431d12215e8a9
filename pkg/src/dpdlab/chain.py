"""Brute-force oracle of the modulate -> distort -> band-select -> demodulate chain.

The chain works on oversampled CT frames.  The composition ``S = D H F M``
maps a DT symbol frame ``w`` to a DT frame ``v``.  With ``equalize`` switched on
the demodulator inverts the measured response of ``D H M`` so that, with an
identity distortion, ``S`` is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .frames import (
    ChainParams,
    CtFrame,
    DtFrame,
    FrameError,
    brickwall,
    mix,
    sample_to_dt,
    zoh,
)

# Gain of bins sitting exactly on a band edge, used by both H and the demodulator
# LPF.  Even-N frames put the DT Nyquist bin on these edges; with 0 it would be
# annihilated and D H M could not be inverted.
EDGE_GAIN = 0.5


@dataclass(frozen=True)
class VolterraTerm:
    coeff: float
    delays: tuple[float, ...]

    def __post_init__(self):
        delays = tuple(float(t) for t in np.atleast_1d(self.delays))
        if not delays:
            raise FrameError("a Volterra term needs at least one delay")
        if any(t < 0 for t in delays):
            raise FrameError(f"delays must be non-negative, got {delays}")
        object.__setattr__(self, "delays", delays)
        object.__setattr__(self, "coeff", float(self.coeff))

    @property
    def degree(self) -> int:
        return len(self.delays)


@dataclass(frozen=True)
class VolterraModel:
    """``y(t) = b0 + sum_k b_k prod_i x(t - t_ki)``."""

    b0: float = 0.0
    terms: tuple[VolterraTerm, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def degree(self) -> int:
        return max((t.degree for t in self.terms), default=0)

    @property
    def depth(self) -> float:
        return max((max(t.delays) for t in self.terms), default=0.0)


def identity_model() -> VolterraModel:
    return VolterraModel(0.0, (VolterraTerm(1.0, (0.0,)),))


def cubic_model(delta: float, taus=(0.2, 0.3, 0.4), T: float = 1.0) -> VolterraModel:
    """``y(t) = x(t) - delta * x(t-tau1) x(t-tau2) x(t-tau3)``, taus given in units of T."""
    taus = tuple(float(t) * T for t in taus)
    return VolterraModel(0.0, (VolterraTerm(1.0, (0.0,)), VolterraTerm(-delta, taus)))


@dataclass(frozen=True)
class DemodConfig:
    """Demodulator settings.

    ``sample_phase=None`` samples half way through each symbol window (rounded
    down to the grid).  Sampling at the window start places the ZOH edges on
    the sampling instants, which cancels the DT Nyquist bin of ``D H M`` almost
    exactly and makes the equalizer ill-conditioned there.
    """

    equalize: bool = True
    sample_phase: float | None = None
    lpf_gain: float = 2.0

    def phase_steps(self, params: ChainParams) -> int:
        if self.sample_phase is None:
            return params.R // 2
        steps = params.to_steps(self.sample_phase)
        if not 0 <= steps < params.R:
            raise FrameError(f"sample phase {self.sample_phase!r} outside [0, T)")
        return steps

    def phase_seconds(self, params: ChainParams) -> float:
        return self.phase_steps(params) * params.dt


def modulate(u: DtFrame) -> CtFrame:
    """Ideal ZOH modulator ``x(t) = (1/T) Re{exp(j w_c t) u[n]}`` on ``[nT, (n+1)T)``."""
    p = u.params
    carried = mix(zoh(u), p.fc, +1)
    return CtFrame(carried.samples.real / p.T, p)


def distort(x: CtFrame, model: VolterraModel) -> CtFrame:
    if not x.is_real:
        raise FrameError("distort expects a real CT frame")
    p = x.params
    y = np.full(p.ct_length, model.b0, dtype=float)
    for term in model.terms:
        prod = np.ones(p.ct_length)
        for tau in term.delays:
            prod = prod * np.roll(x.samples, p.to_steps(tau))
        y += term.coeff * prod
    return CtFrame(y, p)


def bandselect(y: CtFrame) -> CtFrame:
    p = y.params
    return brickwall(y, p.fc - p.f_nyquist, p.fc + p.f_nyquist, 1.0, EDGE_GAIN)


def _demodulate_raw(q: CtFrame, cfg: DemodConfig) -> np.ndarray:
    p = q.params
    base = mix(q, p.fc, -1)
    base = brickwall(base, 0.0, p.f_nyquist, cfg.lpf_gain, EDGE_GAIN)
    return sample_to_dt(base, cfg.phase_steps(p) * p.dt).samples


def widely_linear_inverse(V: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``V[k] = A[k] U[k] + B[k] conj(U[-k])`` for the spectrum ``U``."""
    neg = (-np.arange(len(V))) % len(V)
    det = A * np.conj(A[neg]) - B * np.conj(B[neg])
    return (np.conj(A[neg]) * V - B * np.conj(V[neg])) / det


@lru_cache(maxsize=32)
def dhm_response(params: ChainParams, cfg: DemodConfig) -> tuple[np.ndarray, np.ndarray]:
    """Measured widely-linear response of the unequalized ``D H M``.

    ``D H M`` is real-linear and shift-invariant by one symbol, so
    ``v = h_a * u + h_b * conj(u)``.  Returns the DFTs ``(A, B)`` of
    ``h_a`` and ``h_b``, measured with a unit and an imaginary unit impulse.
    """
    impulse = np.zeros(params.N, dtype=complex)
    impulse[0] = 1.0
    v_re = _demodulate_raw(bandselect(modulate(DtFrame(impulse, params))), cfg)
    v_im = _demodulate_raw(bandselect(modulate(DtFrame(1j * impulse, params))), cfg)
    A = np.fft.fft((v_re - 1j * v_im) / 2)
    B = np.fft.fft((v_re + 1j * v_im) / 2)
    A.setflags(write=False)
    B.setflags(write=False)
    return A, B


def demodulate(q: CtFrame, cfg: DemodConfig = DemodConfig()) -> DtFrame:
    """Mix down by ``f_c``, low-pass ``|f| < f_N``, sample, optionally equalize."""
    if not q.is_real:
        raise FrameError("demodulate expects a real CT frame")
    p = q.params
    v = _demodulate_raw(q, cfg)
    if cfg.equalize:
        A, B = dhm_response(p, cfg)
        v = np.fft.ifft(widely_linear_inverse(np.fft.fft(v), A, B))
    return DtFrame(v, p)


def chain_S(w: DtFrame, model: VolterraModel, cfg: DemodConfig = DemodConfig()) -> DtFrame:
    return demodulate(bandselect(distort(modulate(w), model)), cfg)


def ideal_compensate(u: DtFrame, model: VolterraModel, cfg: DemodConfig = DemodConfig()) -> DtFrame:
    """Pre-distort with ``2I - S``."""
    v = chain_S(u, model, cfg)
    return DtFrame(2 * u.samples - v.samples, u.params)
