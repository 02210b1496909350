"""Least-squares model fitting with a BIC score per model.

Fits are computed from the normal equations via Cholesky factors of the Gram
matrix; a Workspace precomputes the inner products of a candidate pool against
one observation vector so that subset fits cost O(k^2) and one-regressor
extensions update the parent factor instead of refitting.

BIC convention (Gaussian errors, variance profiled out):

    bic = n * ln(max(rss, RSS_FLOOR) / n) + k * ln(n)

where k counts the regressors, the intercept when present, and the noise
variance. The model log likelihood used for averaging is -bic / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack

from .errors import InputError, NumericalError

RSS_FLOOR = 1e-300
CONDITION_LIMIT = 1e10


def bic_from_parts(rss: float, n_obs: int, n_regressors: int, has_intercept: bool) -> float:
    """The BIC of a least-squares fit, from its summary numbers."""
    if n_obs <= 0:
        raise InputError("n_obs must be positive, got %r" % n_obs)
    k = n_regressors + (1 if has_intercept else 0) + 1
    return n_obs * math.log(max(rss, RSS_FLOOR) / n_obs) + k * math.log(n_obs)


@dataclass(frozen=True, eq=False)
class RegressionModel:
    """One fitted subset model.

    `condition` is a 2-norm-style estimate of the design's condition number;
    models above CONDITION_LIMIT are flagged (coefficients still returned) and
    search strategies discard them.
    """

    regressors: tuple
    coefficients: np.ndarray
    intercept: float | None
    rss: float
    n_obs: int
    bic: float
    condition: float
    condition_flag: bool
    _state: object = field(default=None, repr=False)

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=np.float64).copy()
        coef.flags.writeable = False
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "regressors", tuple(self.regressors))

    @property
    def size(self) -> int:
        return len(self.regressors)

    def key(self) -> tuple:
        """Order-free identity of the regressor subset."""
        return tuple(sorted(self.regressors))


def bic(model: RegressionModel) -> float:
    return bic_from_parts(model.rss, model.n_obs, model.size, model.intercept is not None)


def log_likelihood(model: RegressionModel) -> float:
    """Approximate model log likelihood: -bic / 2."""
    return -model.bic / 2.0


@dataclass(frozen=True)
class ModelPrior:
    """Prior over models: uniform, or a positive weight per model size.

    `size_weights[s - 1]` is the (unnormalized) weight of any model with s
    regressors; the intercept does not count toward size.
    """

    size_weights: tuple | None = None

    def __post_init__(self):
        if self.size_weights is not None:
            weights = tuple(float(w) for w in self.size_weights)
            if not weights:
                raise InputError("size_weights must not be empty")
            if any(not math.isfinite(w) or w <= 0 for w in weights):
                raise InputError("size weights must be positive and finite: %r" % (weights,))
            object.__setattr__(self, "size_weights", weights)

    @classmethod
    def uniform(cls) -> "ModelPrior":
        return cls()

    def log_weight(self, size: int) -> float:
        if self.size_weights is None:
            return 0.0
        if not 1 <= size <= len(self.size_weights):
            raise InputError("no prior weight for model size %d (have 1..%d)"
                             % (size, len(self.size_weights)))
        return math.log(self.size_weights[size - 1])


class _State:
    """Factorization attached to a model so extensions can reuse it."""

    __slots__ = ("ws", "sel", "chol", "zvec")

    def __init__(self, ws, sel, chol, zvec):
        self.ws = ws
        self.sel = sel
        self.chol = chol
        self.zvec = zvec


class Workspace:
    """Inner products of a fixed candidate pool against one observation vector.

    Column j of `X` is the candidate named `names[j]`. When `with_intercept`
    is set, a constant column is implicitly prepended to every design and its
    coefficient reported separately; the intercept is never a candidate.
    """

    def __init__(self, y, X, names=None, with_intercept: bool = False):
        y = np.asarray(y, dtype=np.float64)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] == 0:
            raise InputError("X must be 2-D with at least one column, got shape %r"
                             % (X.shape,))
        if y.ndim != 1 or y.size != X.shape[0]:
            raise InputError("y has length %d but X has %d rows"
                             % (y.size, X.shape[0]))
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InputError("y and X must be finite")
        if names is None:
            names = tuple("x%d" % j for j in range(X.shape[1]))
        else:
            names = tuple(str(n) for n in names)
            if len(names) != X.shape[1]:
                raise InputError("%d names for %d columns" % (len(names), X.shape[1]))
            if len(set(names)) != len(names):
                raise InputError("regressor names must be unique")
        self.y = y
        self.X = X
        self.names = names
        self.with_intercept = bool(with_intercept)
        self.n_obs = y.size
        off = 1 if self.with_intercept else 0
        aug = np.column_stack([np.ones(self.n_obs), X]) if off else X
        self.gram = aug.T @ aug
        self.xty = aug.T @ y
        self.yty = float(y @ y)
        self._off = off

    @property
    def n_candidates(self) -> int:
        return len(self.names)

    def _check_size(self, n_sel: int):
        k = n_sel + self._off + 1
        if k >= self.n_obs:
            raise InputError("model with %d parameters needs more than %d observations"
                             % (k, self.n_obs))

    def _design(self, sel) -> np.ndarray:
        cols = self.X[:, list(sel)]
        if self._off:
            cols = np.column_stack([np.ones(self.n_obs), cols])
        return cols

    def _model(self, sel, beta, rss, cond, chol, zvec) -> RegressionModel:
        rss = max(float(rss), 0.0)
        flagged = not math.isfinite(cond) or cond > CONDITION_LIMIT
        state = _State(self, tuple(sel), chol, zvec)
        return RegressionModel(
            regressors=tuple(self.names[j] for j in sel),
            coefficients=beta[self._off:],
            intercept=float(beta[0]) if self._off else None,
            rss=rss,
            n_obs=self.n_obs,
            bic=bic_from_parts(rss, self.n_obs, len(sel), self.with_intercept),
            condition=float(cond),
            condition_flag=flagged,
            _state=state,
        )

    def fit_subset(self, sel) -> RegressionModel:
        """Fit the candidates at indices `sel` (plus the intercept if any)."""
        sel = tuple(int(j) for j in sel)
        if not sel:
            raise InputError("a model needs at least one regressor")
        if len(set(sel)) != len(sel):
            raise InputError("repeated regressor indices: %r" % (sel,))
        if any(not 0 <= j < self.n_candidates for j in sel):
            raise InputError("regressor index out of range: %r" % (sel,))
        self._check_size(len(sel))
        didx = ([0] + [j + 1 for j in sel]) if self._off else list(sel)
        sub = self.gram[np.ix_(didx, didx)]
        rhs = self.xty[didx]
        chol, info = lapack.dpotrf(sub, lower=1)
        if info != 0:
            return self._fallback(sel)
        zvec, _ = lapack.dtrtrs(chol, rhs, lower=1)
        beta, _ = lapack.dtrtrs(chol, zvec, lower=1, trans=1)
        rss = self.yty - float(zvec @ zvec)
        return self._model(sel, beta, rss, _condition(chol), chol, zvec)

    def extend(self, parent: RegressionModel, j: int) -> RegressionModel:
        """Fit parent's regressors plus candidate j by updating its factor."""
        st = parent._state
        if st is None or st.ws is not self:
            raise InputError("parent model was not fitted from this workspace")
        j = int(j)
        if j in st.sel:
            raise InputError("regressor %r is already in the model" % self.names[j])
        if not 0 <= j < self.n_candidates:
            raise InputError("regressor index out of range: %r" % j)
        if st.chol is None:  # degenerate parent, no factor to update
            return self.fit_subset(st.sel + (j,))
        self._check_size(len(st.sel) + 1)
        dj = j + self._off
        didx = ([0] + [i + 1 for i in st.sel]) if self._off else list(st.sel)
        cross = self.gram[didx, dj]
        w, _ = lapack.dtrtrs(st.chol, cross, lower=1)
        pivot = self.gram[dj, dj] - float(w @ w)
        if pivot <= 0 or pivot <= 1e-14 * self.gram[dj, dj]:
            return self.fit_subset(st.sel + (j,))  # numerically dependent column
        m = st.chol.shape[0]
        chol = np.zeros((m + 1, m + 1))
        chol[:m, :m] = st.chol
        chol[m, :m] = w
        chol[m, m] = math.sqrt(pivot)
        znew = (self.xty[dj] - float(w @ st.zvec)) / chol[m, m]
        zvec = np.append(st.zvec, znew)
        beta, _ = lapack.dtrtrs(chol, zvec, lower=1, trans=1)
        rss = parent.rss - znew * znew
        return self._model(st.sel + (j,), beta, rss, _condition(chol), chol, zvec)

    def _fallback(self, sel) -> RegressionModel:
        """Rank-deficient design: minimum-norm solution, flagged."""
        design = self._design(sel)
        beta, _, _, _ = np.linalg.lstsq(design, self.y, rcond=None)
        resid = self.y - design @ beta
        return self._model(sel, beta, float(resid @ resid), math.inf, None, None)

    def add_column(self, column, name=None) -> "Workspace":
        """A new workspace whose pool has one extra trailing candidate."""
        column = np.asarray(column, dtype=np.float64)
        if column.shape != (self.n_obs,):
            raise InputError("new column must have length %d" % self.n_obs)
        if not np.all(np.isfinite(column)):
            raise InputError("new column must be finite")
        if name is None:
            name = "x%d" % self.n_candidates
        if name in self.names:
            raise InputError("regressor name %r already in pool" % name)
        ws = object.__new__(Workspace)
        ws.y = self.y
        ws.X = np.column_stack([self.X, column])
        ws.names = self.names + (str(name),)
        ws.with_intercept = self.with_intercept
        ws.n_obs = self.n_obs
        ws._off = self._off
        aug_dot = np.concatenate([[column.sum()] if self._off else [],
                                  self.X.T @ column, [column @ column]])
        m = self.gram.shape[0]
        gram = np.zeros((m + 1, m + 1))
        gram[:m, :m] = self.gram
        gram[m, :] = aug_dot
        gram[:, m] = aug_dot
        ws.gram = gram
        ws.xty = np.append(self.xty, column @ self.y)
        ws.yty = self.yty
        return ws


def _condition(chol: np.ndarray) -> float:
    """Condition estimate of the design via its Cholesky factor."""
    rcond, info = lapack.dtrcon(chol, norm='1', uplo='L', diag='N')
    if info != 0 or rcond <= 0:
        return math.inf
    return 1.0 / rcond


def fit(y, X, names=None, with_intercept: bool = False) -> RegressionModel:
    """Least-squares fit of y on every column of X.

    Returns the fitted model with its BIC; degenerate designs are fitted with
    a minimum-norm solution and flagged rather than raised.
    """
    ws = Workspace(y, X, names, with_intercept)
    return ws.fit_subset(range(ws.n_candidates))


def refit_extend(model: RegressionModel, new_column, name=None) -> RegressionModel:
    """Refit with one extra regressor, reusing the parent factorization."""
    st = model._state
    if st is None:
        raise InputError("model carries no fit state; refit from data instead")
    ws = st.ws.add_column(new_column, name)
    child = RegressionModel(model.regressors, model.coefficients, model.intercept,
                            model.rss, model.n_obs, model.bic, model.condition,
                            model.condition_flag,
                            _state=_State(ws, st.sel, st.chol, st.zvec))
    return ws.extend(child, ws.n_candidates - 1)


def check_residual(model: RegressionModel) -> float:
    """Max |column . residual| scaled by column and response norms.

    Diagnostic for the normal-equations solution; near zero for healthy fits.
    """
    st = model._state
    if st is None:
        raise InputError("model carries no fit state")
    design = st.ws._design(st.sel)
    beta = model.coefficients if model.intercept is None \
        else np.concatenate([[model.intercept], model.coefficients])
    resid = st.ws.y - design @ beta
    ynorm = max(float(np.linalg.norm(st.ws.y)), RSS_FLOOR)
    worst = 0.0
    for col in design.T:
        cnorm = max(float(np.linalg.norm(col)), RSS_FLOOR)
        worst = max(worst, abs(float(col @ resid)) / (cnorm * ynorm))
    return worst
