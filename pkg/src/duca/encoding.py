"""Patch encoding against codebooks.

Two modes:

* ``sparse`` -- the LASSO code ``argmin_f 1/2 ||X f - x||^2 + lam ||f||_1``
  over unit-norm atoms, solved by cyclic coordinate descent;
* ``metric`` -- margins against one exemplar SVM per atom, ``f = W'x + b``.

Codes from every book of a bank are concatenated in bank order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from duca.codebook import Codebook, CodebookBank
from duca.container import read_container, write_container
from duca.errors import ConvergenceError, IntegrityError, InvalidInputError
from duca.svmcore import DEFAULT_MAX_EPOCHS, DEFAULT_TOL, train_many

MODES = ("sparse", "metric")
DEFAULT_ALPHA = 0.1
DEFAULT_KKT_TOL = 1e-6
DEFAULT_MAX_SWEEPS = 1000
MAGIC_ENCODER = b"DUCW"


class MarginWarning(UserWarning):
    """An exemplar SVM could not separate its atom from the others."""


def _atoms(book) -> np.ndarray:
    if isinstance(book, Codebook):
        return book.normalized()
    a = np.asarray(book, dtype=np.float64)
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInputError("atoms must be non-zero")
    return a / norms


def _descriptors(x, dim) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise InvalidInputError(f"descriptor dimension {x.shape[1]} != codebook dimension {dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("descriptor contains non-finite values")
    return x, single


def lambda_max(book, x) -> np.ndarray | float:
    """``||X'x||_inf`` over unit-norm atoms: the smallest penalty giving f = 0."""
    atoms = _atoms(book)
    xs, single = _descriptors(x, atoms.shape[1])
    lm = np.max(np.abs(xs @ atoms.T), axis=1)
    return float(lm[0]) if single else lm


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def lasso_objective(atoms, x, f, lam):
    atoms = _atoms(atoms)
    r = np.atleast_2d(f) @ atoms - np.atleast_2d(x)
    return 0.5 * np.sum(r * r, axis=1) + np.asarray(lam) * np.sum(np.abs(np.atleast_2d(f)), axis=1)


def kkt_violation(atoms, x, f, lam) -> np.ndarray:
    """Largest stationarity violation per code, recomputed from scratch.

    With ``c = X'(x - X f)``: inactive coordinates need ``|c_j| <= lam``,
    active ones ``c_j = lam * sign(f_j)``.
    """
    atoms = _atoms(atoms)
    xs = np.atleast_2d(np.asarray(x, dtype=np.float64))
    fs = np.atleast_2d(np.asarray(f, dtype=np.float64))
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (xs.shape[0],))[:, None]
    c = (xs - fs @ atoms) @ atoms.T
    return _violation(c, fs, lam)


def _violation(c, f, lam):
    inactive = np.maximum(np.abs(c) - lam, 0.0)
    active = np.abs(c - lam * np.sign(f))
    return np.max(np.where(f != 0.0, active, inactive), axis=1)


FINISH_EVERY = 10


def _qp_value(gram_ss, corr_s, f_s, lam):
    return 0.5 * f_s @ gram_ss @ f_s - corr_s @ f_s + lam * np.sum(np.abs(f_s))


def _finish_row(gram, corr, f, lam, tol, max_steps=200):
    """Active-set refinement of one warm-started code: a Newton step on the
    signed support, then a line search over sign crossings. Returns the code
    and its residual correlations, or ``None`` if not certified."""
    f = f.copy()
    for _ in range(max_steps):
        c = corr - gram @ f
        active = f != 0.0
        viol = _violation(c[None], f[None], np.array([[lam]]))[0]
        if viol <= tol:
            return f, c
        signs = np.sign(f)
        act_viol = np.max(np.abs(c[active] - lam * signs[active])) if active.any() else 0.0
        if act_viol <= tol:
            free = np.where(active, 0.0, np.abs(c))
            j = int(np.argmax(free))
            signs[j] = np.sign(c[j])
            active[j] = True
        support = np.flatnonzero(active)
        gss = gram[np.ix_(support, support)]
        target = corr[support] - lam * signs[support]
        try:
            newton = np.linalg.solve(gss, target)
        except np.linalg.LinAlgError:
            newton = np.linalg.lstsq(gss, target, rcond=None)[0]
        cur = f[support]
        step = newton - cur
        ts = [1.0]
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = -cur / step
        ts += [t for t, c0 in zip(cross, cur) if c0 != 0.0 and 0.0 < t < 1.0]
        best, best_t = None, 0.0
        for t in ts:
            val = _qp_value(gss, corr[support], cur + t * step, lam)
            if best is None or val < best:
                best, best_t = val, t
        moved = cur + best_t * step
        if best_t < 1.0:
            # coordinate(s) that reach zero at the chosen crossing
            hit = np.isclose(cross, best_t, rtol=0.0, atol=1e-12) & (cur != 0.0)
            moved[hit] = 0.0
        if np.array_equal(moved, cur):
            return None
        f[support] = moved
    return None


def _finish(gram, corr, r, f, lam, tol, rows):
    for i in rows:
        out = _finish_row(gram, corr[i], f[i], lam[i], tol)
        if out is not None:
            f[i], r[i] = out


@dataclass
class SparseResult:
    codes: np.ndarray
    lam: np.ndarray
    sweeps: int
    violation: np.ndarray
    objective_history: list | None = None


def sparse_encode_batch(book, x, lam=None, alpha: float = DEFAULT_ALPHA,
                        tol: float = DEFAULT_KKT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS,
                        track_objective: bool = False) -> SparseResult:
    """LASSO codes for every row of ``x`` by cyclic coordinate descent.

    ``lam`` may be a scalar or one value per row; when omitted it is
    ``alpha * lambda_max`` per row. Rows are solved together, one coordinate
    at a time, and retire once their KKT violation drops below ``tol``.
    """
    atoms = _atoms(book)
    m = atoms.shape[0]
    xs, _ = _descriptors(x, atoms.shape[1])
    n = xs.shape[0]
    corr = xs @ atoms.T
    if lam is None:
        if not alpha > 0:
            raise InvalidInputError(f"alpha must be positive, got {alpha}")
        lam = alpha * np.max(np.abs(corr), axis=1)
    else:
        lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,)).copy()
        if not np.all(lam > 0):
            raise InvalidInputError("lambda must be positive")
    gram = atoms @ atoms.T
    codes = np.zeros((n, m))
    resid = corr.copy()  # X'(x - X f)
    lam_col = lam[:, None]
    live = np.flatnonzero(_violation(resid, codes, lam_col) > tol)
    history = [lasso_objective(atoms, xs, codes, lam)] if track_objective else None
    sweeps = 0
    while live.size:
        if sweeps == max_sweeps:
            worst = float(_violation(resid[live], codes[live], lam_col[live]).max())
            raise ConvergenceError(
                f"coordinate descent left {live.size} codes unconverged after "
                f"{max_sweeps} sweeps (KKT residual {worst:.3g})",
                residual=worst, iterations=max_sweeps,
            )
        sweeps += 1
        r, f, lv = resid[live], codes[live], lam[live]
        for j in range(m):
            z = r[:, j] + f[:, j]
            new = np.sign(z) * np.maximum(np.abs(z) - lv, 0.0)
            delta = new - f[:, j]
            moved = np.flatnonzero(delta)
            if moved.size == 0:
                continue
            f[moved, j] = new[moved]
            if moved.size == r.shape[0]:
                r -= np.outer(delta, gram[j])
            else:
                r[moved] -= np.outer(delta[moved], gram[j])
        if sweeps % FINISH_EVERY == 0:
            slow = np.flatnonzero(_violation(r, f, lv[:, None]) > tol)
            _finish(gram, corr[live], r, f, lv, tol, slow)
        resid[live], codes[live] = r, f
        if track_objective:
            history.append(lasso_objective(atoms, xs, codes, lam))
        done = _violation(r, f, lam_col[live]) <= tol
        live = live[~done]
    violation = _violation(resid, codes, lam_col)
    return SparseResult(codes, lam, sweeps, violation, history)


def sparse_encode(book, x, lam: float | None = None, alpha: float = DEFAULT_ALPHA,
                  tol: float = DEFAULT_KKT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS) -> np.ndarray:
    """Code for a single descriptor (see ``sparse_encode_batch``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError("sparse_encode takes one descriptor; use sparse_encode_batch")
    return sparse_encode_batch(book, x, lam, alpha, tol, max_sweeps).codes[0]


@dataclass
class MetricEncoder:
    """One exemplar SVM per atom: ``weights`` is (D, m), ``biases`` (m,)."""

    weights: np.ndarray
    biases: np.ndarray
    codebook_digest: str = ""
    C: float = 1.0
    use_bias: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.biases.size:
            raise IntegrityError("metric encoder weights and biases disagree in size")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.biases))):
            raise IntegrityError("metric encoder contains non-finite values")

    @property
    def size(self) -> int:
        return self.weights.shape[1]

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


def train_metric_encoder(book: Codebook, C: float = 1.0, tol: float = DEFAULT_TOL,
                         max_epochs: int = DEFAULT_MAX_EPOCHS, use_bias: bool = True,
                         seed: int = 0) -> MetricEncoder:
    """Train atom ``j`` against the other ``m - 1`` atoms, for every ``j``."""
    atoms = book.atoms.astype(np.float64) if isinstance(book, Codebook) else np.asarray(book, float)
    m = atoms.shape[0]
    if m < 2:
        raise InvalidInputError("metric encoding needs at least two atoms")
    labels = 2.0 * np.eye(m) - 1.0
    try:
        W, b, _ = train_many(atoms, labels, C=C, tol=tol, max_epochs=max_epochs, seed=seed)
    except ConvergenceError as exc:
        atoms_left = (exc.context or {}).get("columns", [])
        raise ConvergenceError(f"exemplar SVMs for atoms {atoms_left[:10]} did not converge: "
                               f"{exc}", residual=exc.residual, iterations=exc.iterations,
                               context={"atoms": atoms_left}) from exc
    margins = labels * (atoms @ W + b)
    weak = np.flatnonzero(margins.min(axis=0) <= 0)
    if weak.size:
        warnings.warn(f"exemplar SVMs for atoms {weak.tolist()[:10]} leave a training atom "
                      "at non-positive margin", MarginWarning, stacklevel=2)
    digest = book.digest() if isinstance(book, Codebook) else ""
    return MetricEncoder(W, b, digest, C, use_bias)


def metric_encode(enc: MetricEncoder, x) -> np.ndarray:
    xs, single = _descriptors(x, enc.dim)
    codes = xs @ enc.weights
    if enc.use_bias:
        codes = codes + enc.biases
    return codes[0] if single else codes


def save_metric_encoder(enc: MetricEncoder, path) -> None:
    matrix = np.hstack([enc.weights.T, enc.biases[:, None]])
    meta = {"codebook_digest": enc.codebook_digest, "C": enc.C, "use_bias": enc.use_bias}
    write_container(path, MAGIC_ENCODER, matrix, meta)


def load_metric_encoder(path) -> MetricEncoder:
    matrix, meta = read_container(path, MAGIC_ENCODER)
    if matrix.shape[1] < 2:
        raise IntegrityError(f"{path}: encoder matrix too narrow")
    return MetricEncoder(matrix[:, :-1].T, matrix[:, -1], meta.get("codebook_digest", ""),
                         float(meta.get("C", 1.0)), bool(meta.get("use_bias", True)))


@dataclass
class EncodingParams:
    mode: str = "sparse"
    alpha: float = DEFAULT_ALPHA
    tol: float = DEFAULT_KKT_TOL
    max_sweeps: int = DEFAULT_MAX_SWEEPS

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown encoding mode {self.mode!r}")


def encode_bank(bank: CodebookBank, x, mode: str = "sparse", params: EncodingParams | None = None,
                encoders: list[MetricEncoder] | None = None) -> np.ndarray:
    """Concatenated per-book codes, length ``sum(m_k)`` per descriptor."""
    params = params or EncodingParams(mode=mode)
    if params.mode != mode:
        params = EncodingParams(mode, params.alpha, params.tol, params.max_sweeps)
    xs, single = _descriptors(x, bank.dim)
    blocks = []
    if mode == "sparse":
        for book in bank.books:
            blocks.append(sparse_encode_batch(book, xs, alpha=params.alpha, tol=params.tol,
                                              max_sweeps=params.max_sweeps).codes)
    else:
        if encoders is None or len(encoders) != len(bank.books):
            raise InvalidInputError("metric mode needs one trained encoder per codebook")
        for book, enc in zip(bank.books, encoders):
            if enc.size != book.size:
                raise InvalidInputError("encoder size does not match its codebook")
            blocks.append(metric_encode(enc, xs))
    codes = np.hstack(blocks)
    return codes[0] if single else codes
