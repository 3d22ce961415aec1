"""L2-regularised squared-hinge linear SVM trained by dual coordinate descent.

Primal::

    min_w  1/2 w'w + C * sum_t max(0, 1 - y_t w'x_t)^2

The bias is learned by appending a constant feature, so it is regularised
along with ``w``. ``train_many`` solves several problems that share the same
samples but differ in labels (the one-vs-all encoders) in lock-step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from duca.errors import ConvergenceError, InvalidInputError

DEFAULT_TOL = 1e-4
DEFAULT_MAX_EPOCHS = 1000


@dataclass(frozen=True)
class BinarySvm:
    w: np.ndarray
    b: float
    C: float
    iterations: int = 0
    gap: float = 0.0
    dual_history: tuple = field(default=(), repr=False)
    alpha: np.ndarray | None = field(default=None, repr=False, compare=False)

    def decision(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.w.shape[0]:
            raise InvalidInputError(
                f"dimension mismatch: input {x.shape[-1]}, model {self.w.shape[0]}"
            )
        return x @ self.w + self.b


def decision(svm: BinarySvm, x):
    return svm.decision(x)


@dataclass(frozen=True)
class SolveInfo:
    epochs: int
    violation: float
    primal: np.ndarray
    dual: np.ndarray
    dual_history: list
    alpha: np.ndarray | None = None


def primal_objective(W, b, X, Y, C, bias_scale=1.0):
    """Per-problem primal value for weight columns ``W`` (d, P) and biases ``b``
    (pass ``b = 0`` and ``bias_scale = inf`` for an unbiased model)."""
    W = np.asarray(W, dtype=np.float64).reshape(np.shape(X)[1], -1)
    Y = np.asarray(Y, dtype=np.float64).reshape(np.shape(X)[0], -1)
    b = np.asarray(b, dtype=np.float64)
    margins = Y * (X @ W + b)
    slack = np.maximum(0.0, 1.0 - margins)
    reg = np.sum(W * W, axis=0) + (b / bias_scale) ** 2
    return 0.5 * reg + C * np.sum(slack * slack, axis=0)


def _validate(X, Y, C):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError(f"samples must form a non-empty 2-D array, got {X.shape}")
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise InvalidInputError(f"{X.shape[0]} samples but {Y.shape[0]} labels")
    if not np.all(np.abs(Y) == 1.0):
        raise InvalidInputError("labels must be +1 or -1")
    if np.any(np.all(Y > 0, axis=0)) or np.any(np.all(Y < 0, axis=0)):
        raise InvalidInputError("each problem needs at least one sample of each label")
    if not C > 0:
        raise InvalidInputError(f"C must be positive, got {C}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("samples contain non-finite values")
    return X, Y


def train_many(X, Y, C: float = 1.0, tol: float = DEFAULT_TOL,
               max_epochs: int = DEFAULT_MAX_EPOCHS, fit_bias: bool = True,
               bias_scale: float = 1.0, seed: int = 0):
    """Solve one SVM per column of the label matrix ``Y`` (n, P).

    Returns ``(W, b, info)`` with ``W`` of shape (d, P). Stops once the largest
    projected-gradient violation over an epoch is below ``tol`` and every
    duality gap is within ``tol * (1 + |primal|)``.
    """
    X, Y = _validate(X, Y, C)
    n, d = X.shape
    P = Y.shape[1]
    Xa = np.hstack([X, np.full((n, 1), bias_scale)]) if fit_bias else X
    diag = 0.5 / C
    qii = np.einsum("ij,ij->i", Xa, Xa) + diag
    alpha = np.zeros((n, P))
    Wa = np.zeros((Xa.shape[1], P))
    rng = np.random.default_rng(seed)
    history = []
    violation = np.full(P, np.inf)
    stuck = np.arange(P)
    for epoch in range(1, max_epochs + 1):
        violation = np.zeros(P)
        for i in rng.permutation(n):
            xi, yi, ai = Xa[i], Y[i], alpha[i]
            g = yi * (xi @ Wa) - 1.0 + diag * ai
            pg = np.where(ai > 0.0, g, np.minimum(g, 0.0))
            violation = np.maximum(violation, np.abs(pg))
            new = np.maximum(ai - g / qii[i], 0.0)
            delta = new - ai
            if np.any(delta):
                alpha[i] = new
                Wa += np.outer(xi, delta * yi)
        W, b = _split(Wa, fit_bias, bias_scale, d)
        dual_min = 0.5 * np.sum(Wa * Wa, axis=0) + 0.5 * diag * np.sum(alpha * alpha, axis=0) \
            - np.sum(alpha, axis=0)
        primal = primal_objective(W, b, X, Y, C, bias_scale if fit_bias else np.inf)
        history.append(dual_min.copy())
        gap = primal + dual_min
        stuck = np.flatnonzero((violation >= tol) | (gap > tol * (1.0 + np.abs(primal))))
        if stuck.size == 0:
            return W, b, SolveInfo(epoch, float(violation.max()), primal, -dual_min, history,
                                   alpha)
    raise ConvergenceError(
        f"dual coordinate descent did not converge in {max_epochs} epochs "
        f"(violation {violation.max():.3g}, columns {stuck.tolist()[:10]})",
        residual=float(violation.max()), iterations=max_epochs,
        context={"columns": stuck.tolist()},
    )


def _split(Wa, fit_bias, bias_scale, d):
    if fit_bias:
        return Wa[:d], Wa[d] * bias_scale
    return Wa, np.zeros(Wa.shape[1])


def train_binary(samples, labels, C: float = 1.0, tol: float = DEFAULT_TOL,
                 max_epochs: int = DEFAULT_MAX_EPOCHS, fit_bias: bool = True,
                 bias_scale: float = 1.0, seed: int = 0) -> BinarySvm:
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size and (np.all(labels > 0) or np.all(labels < 0)):
        raise InvalidInputError("binary SVM needs samples of both labels")
    W, b, info = train_many(samples, labels, C=C, tol=tol, max_epochs=max_epochs,
                            fit_bias=fit_bias, bias_scale=bias_scale, seed=seed)
    return BinarySvm(
        w=W[:, 0].copy(), b=float(b[0]), C=C, iterations=info.epochs,
        gap=float(info.primal[0] - info.dual[0]),
        dual_history=tuple(float(h[0]) for h in info.dual_history),
        alpha=info.alpha[:, 0].copy(),
    )
