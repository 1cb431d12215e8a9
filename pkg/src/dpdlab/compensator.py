"""Compensator bases, least-squares fitting, significance pruning.

Two model families share one representation, a list of basis elements whose
real output sequences form the columns of a design matrix:

* ``plain``: Volterra monomials in ``i[n-l], q[n-l]`` for ``l = -m1..m2``;
* ``structured``: short-memory monomials each followed by a fixed filter
  ``H0 = 1``, ``H1 = j*Omega``, ``H2 = Omega**2`` (and ``j**k Omega**k`` beyond).

The real and imaginary parts of the output are fitted separately, so a
model with ``K`` basis elements carries ``2K`` coefficients.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .frames import DtFrame, dt_omegas
from .metrics import evm

FORMAT_VERSION = 1


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class MonomialDescriptor:
    """``prod_l i[n-l]**alpha_l * q[n-l]**beta_l`` over ``lags``."""

    lags: tuple[int, ...]
    alpha: tuple[int, ...]
    beta: tuple[int, ...]

    @property
    def degree(self) -> int:
        return sum(self.alpha) + sum(self.beta)

    def evaluate(self, w: np.ndarray) -> np.ndarray:
        out = np.ones(len(w))
        for lag, a, b in zip(self.lags, self.alpha, self.beta):
            if a:
                out = out * np.roll(w.real, lag) ** a
            if b:
                out = out * np.roll(w.imag, lag) ** b
        return out

    def label(self) -> str:
        parts = []
        for lag, a, b in zip(self.lags, self.alpha, self.beta):
            for name, e in (("i", a), ("q", b)):
                if e:
                    parts.append(f"{name}[n{-lag:+d}]" + (f"^{e}" if e > 1 else ""))
        return "*".join(parts) or "1"


@dataclass(frozen=True)
class BasisElement:
    monomial: MonomialDescriptor
    tag: int | None = None  # filter index for structured bases


def _monomials(lags: Sequence[int], degree: int) -> list[MonomialDescriptor]:
    """All monomials of total degree <= ``degree`` in ``2*len(lags)`` variables, graded order."""
    lags = tuple(lags)
    nv = len(lags)
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(2 * nv), d):
            exps = np.bincount(np.asarray(combo, dtype=int), minlength=2 * nv)
            out.append(MonomialDescriptor(lags, tuple(int(e) for e in exps[:nv]), tuple(int(e) for e in exps[nv:])))
    return out


def enumerate_plain(m1: int, m2: int, d: int) -> list[BasisElement]:
    if m1 < 0 or m2 < 0 or d < 1:
        raise FitError(f"need m1, m2 >= 0 and d >= 1, got ({m1}, {m2}, {d})")
    basis = [BasisElement(mono) for mono in _monomials(range(-m1, m2 + 1), d)]
    assert len(basis) == comb(2 * (m1 + m2 + 1) + d, d)
    return basis


def enumerate_structured(memory: int = 1, degree: int = 3, n_filters: int = 3) -> list[BasisElement]:
    if memory < 0 or degree < 0 or n_filters < 1:
        raise FitError(f"invalid structured basis ({memory}, {degree}, {n_filters})")
    monos = _monomials(range(memory + 1), degree)
    return [BasisElement(mono, tag) for tag in range(n_filters) for mono in monos]


def filter_response(tag: int, N: int) -> np.ndarray:
    """``H_tag(e^{jOmega}) = j**(tag % 2) * Omega**tag`` on the N-point grid.

    Odd responses have no conjugate partner at the even-N Nyquist bin, which
    is zeroed so real inputs stay real.
    """
    omega = dt_omegas(N)
    resp = (1j ** (tag % 2)) * omega**tag
    if tag % 2 and N % 2 == 0:
        resp[N // 2] = 0.0
    return resp


def apply_filter_tag(g, tag: int | None):
    """Filter a real (or complex) sequence or DtFrame with ``H_tag``."""
    if isinstance(g, DtFrame):
        return DtFrame(apply_filter_tag(g.samples, tag), g.params)
    g = np.asarray(g)
    if tag is None or tag == 0:
        return g.copy()
    out = np.fft.ifft(np.fft.fft(g) * filter_response(tag, len(g)))
    return out.real if np.isrealobj(g) else out


def _samples(w) -> np.ndarray:
    return np.asarray(w.samples if isinstance(w, DtFrame) else w)


def design_matrix(w, basis: Sequence[BasisElement]) -> np.ndarray:
    """Real N x K matrix; column j is basis element j evaluated on ``w``.

    Used for both the real and the imaginary target.
    """
    if not basis:
        raise FitError("empty basis")
    w = _samples(w)
    N = len(w)
    A = np.empty((N, len(basis)))
    cache: dict = {}
    spectra: dict = {}
    for j, el in enumerate(basis):
        mono = el.monomial
        if mono not in cache:
            cache[mono] = mono.evaluate(w)
        g = cache[mono]
        if el.tag is None or el.tag == 0:
            A[:, j] = g
        else:
            if mono not in spectra:
                spectra[mono] = np.fft.fft(g)
            A[:, j] = np.fft.ifft(spectra[mono] * filter_response(el.tag, N)).real
    return A


def ls_fit(A: np.ndarray, target: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Minimum-norm least squares via column-pivoted QR (LAPACK ``gelsy``).

    ``target`` may hold several right-hand sides as columns.
    """
    A = np.asarray(A, dtype=float)
    rows, cols = A.shape
    if rows < cols:
        raise FitError(
            f"{rows} equations for {cols} unknowns; enlarge N or fit on more frames"
        )
    target = np.asarray(target, dtype=float)
    if ridge > 0:
        A = np.vstack([A, np.sqrt(ridge) * np.eye(cols)])
        pad = np.zeros((cols,) + target.shape[1:])
        target = np.concatenate([target, pad])
    # numpy's rank cutoff; LAPACK's default (eps alone) misses exact duplicates
    cond = max(A.shape) * np.finfo(float).eps
    coeffs, *_ = scipy.linalg.lstsq(A, target, cond=cond, lapack_driver="gelsy")
    return coeffs


@dataclass
class CompensatorModel:
    kind: str
    basis: list[BasisElement]
    coeffs_re: np.ndarray
    coeffs_im: np.ndarray
    residual: float = float("nan")  # relative LS residual on the fit data

    def __post_init__(self):
        if self.kind not in ("structured", "plain"):
            raise FitError(f"unknown model kind {self.kind!r}")
        self.coeffs_re = np.asarray(self.coeffs_re, dtype=float)
        self.coeffs_im = np.asarray(self.coeffs_im, dtype=float)
        if not len(self.coeffs_re) == len(self.coeffs_im) == len(self.basis):
            raise FitError("coefficient vectors must match the basis length")
        tagged = [el.tag is not None for el in self.basis]
        if self.kind == "structured" and not all(tagged):
            raise FitError("structured models need a filter tag on every element")
        if self.kind == "plain" and any(tagged):
            raise FitError("plain models carry no filter tags")

    @property
    def n_coeffs(self) -> int:
        return 2 * len(self.basis)

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.coeffs_re) + np.count_nonzero(self.coeffs_im))

    def with_coeffs(self, re, im) -> "CompensatorModel":
        return CompensatorModel(self.kind, self.basis, re, im)


def model_kind(basis: Sequence[BasisElement]) -> str:
    return "structured" if basis and basis[0].tag is not None else "plain"


def predict(model: CompensatorModel, u) -> np.ndarray:
    A = design_matrix(u, model.basis)
    return A @ model.coeffs_re + 1j * (A @ model.coeffs_im)


def fit_S_hat(w, v, basis: Sequence[BasisElement], ridge: float = 0.0) -> CompensatorModel:
    """Fit Re v and Im v on the design matrix of ``w``.

    ``w`` and ``v`` may be single frames or equal-length sequences of frames;
    several periods are stacked row-wise.
    """
    ws = [w] if isinstance(w, (DtFrame, np.ndarray)) else list(w)
    vs = [v] if isinstance(v, (DtFrame, np.ndarray)) else list(v)
    if len(ws) != len(vs):
        raise FitError("input and output frame counts differ")
    A = np.vstack([design_matrix(wi, basis) for wi in ws])
    y = np.concatenate([_samples(vi) for vi in vs])
    if len(y) != A.shape[0]:
        raise FitError("input and output frames differ in length")
    coeffs = ls_fit(A, np.column_stack([y.real, y.imag]), ridge)
    fitted = A @ coeffs[:, 0] + 1j * (A @ coeffs[:, 1])
    residual = float(np.linalg.norm(y - fitted) / np.linalg.norm(y)) if np.any(y) else 0.0
    return CompensatorModel(model_kind(basis), list(basis), coeffs[:, 0], coeffs[:, 1], residual)


def compensate(model: CompensatorModel, u):
    """``C u = 2u - S_hat u``."""
    s = _samples(u)
    out = 2 * s - predict(model, s)
    return DtFrame(out, u.params) if isinstance(u, DtFrame) else out


@dataclass
class FitReport:
    name: str
    n_coeffs: int
    n_significant: int
    threshold: float
    evm_full: float
    evm_pruned: float
    residual_norm: float = float("nan")
    scan_thresholds: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    scan_evm: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def prune(
    model: CompensatorModel,
    u_val,
    system: Callable[[np.ndarray], np.ndarray],
    epsilon: float = 0.01,
    name: str = "",
) -> tuple[CompensatorModel, FitReport]:
    """Zero every coefficient below the largest admissible magnitude threshold.

    Candidate thresholds are all distinct ``|c_k|`` (both output rails pooled).
    A threshold ``t`` zeroes ``|c_k| < t``; it is admissible when the
    validation EVM of ``system(2u - S_hat_t u)`` exceeds the unpruned value by
    at most ``epsilon * |EVM_full|`` dB.  ``system`` maps a DT sample array to
    the chain output.
    """
    u = _samples(u_val)
    A = design_matrix(u, model.basis)
    K = len(model.basis)
    coeffs = np.concatenate([model.coeffs_re, model.coeffs_im])
    # contribution of coefficient j to the prediction of S_hat u
    def contribution(j):
        return coeffs[j] * A[:, j] if j < K else 1j * coeffs[j] * A[:, j - K]

    pred = A @ model.coeffs_re + 1j * (A @ model.coeffs_im)

    def score(p):
        return evm(u, system(2 * u - p))

    evm_full = score(pred)
    budget = epsilon * abs(evm_full)
    mags = np.abs(coeffs)
    order = np.argsort(mags, kind="stable")
    thresholds = np.unique(mags)
    scan_evm = np.empty(len(thresholds))
    best = thresholds[0]
    cursor = 0
    for n, t in enumerate(thresholds):
        while cursor < len(order) and mags[order[cursor]] < t:
            pred = pred - contribution(order[cursor])
            cursor += 1
        scan_evm[n] = evm_full if cursor == 0 else score(pred)
        if scan_evm[n] - evm_full <= budget:
            best = t
    keep = mags >= best
    pruned = coeffs * keep
    pruned_model = model.with_coeffs(pruned[:K], pruned[K:])
    evm_pruned = score(predict(pruned_model, u))
    report = FitReport(
        name=name,
        n_coeffs=model.n_coeffs,
        n_significant=int(keep.sum()),
        threshold=float(best),
        evm_full=evm_full,
        evm_pruned=evm_pruned,
        residual_norm=model.residual,
        scan_thresholds=thresholds,
        scan_evm=scan_evm,
    )
    return pruned_model, report


def _element_to_dict(el: BasisElement) -> dict:
    m = el.monomial
    return {"lags": list(m.lags), "alpha": list(m.alpha), "beta": list(m.beta), "tag": el.tag}


def dumps_model(model: CompensatorModel) -> str:
    """Self-describing JSON text; floats are written with round-trip precision."""
    doc = {
        "format": "dpdlab-compensator",
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "basis": [_element_to_dict(el) for el in model.basis],
        "coeffs_re": [float(c) for c in model.coeffs_re],
        "coeffs_im": [float(c) for c in model.coeffs_im],
    }
    return json.dumps(doc, indent=1)


def loads_model(text: str) -> CompensatorModel:
    doc = json.loads(text)
    if doc.get("format") != "dpdlab-compensator":
        raise FitError("not a compensator model document")
    if doc.get("version") != FORMAT_VERSION:
        raise FitError(f"unsupported model format version {doc.get('version')}")
    basis = [
        BasisElement(
            MonomialDescriptor(tuple(e["lags"]), tuple(e["alpha"]), tuple(e["beta"])), e["tag"]
        )
        for e in doc["basis"]
    ]
    return CompensatorModel(doc["kind"], basis, doc["coeffs_re"], doc["coeffs_im"])


def save_model(model: CompensatorModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_model(model))


def load_model(path) -> CompensatorModel:
    with open(path) as fh:
        return loads_model(fh.read())
