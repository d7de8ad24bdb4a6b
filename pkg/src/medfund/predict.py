"""Early prediction of final shared counts and donated amounts.

Every model minimizes the relative square error ``(y_hat / y - 1) ** 2``.
The linear models (SH on the cumulative early value, ML on per-bin
increments) are solved exactly as weighted least squares with weights
``1 / y**2``; the two-layer ReLU network is trained with Adam.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

TARGETS = ("shared", "donated")


def rse(y_hat, y):
    """Relative square error; works elementwise on arrays."""
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("rse is undefined for non-positive targets")
    out = (y_hat / y - 1.0) ** 2
    return float(out) if out.ndim == 0 else out


def mrse(y_hat, y) -> float:
    return float(np.mean(rse(y_hat, y)))


def time_split(cases: Sequence, start_time=None):
    """Chronological 80/10/10 split (ties broken by case_id).

    ``start_time`` maps a case to its publication time; by default
    ``case.profile.start_time`` is used.
    """
    n = len(cases)
    if n < 10:
        raise ValueError(f"need at least 10 cases to split, got {n}")
    if start_time is None:
        start_time = lambda c: c.profile.start_time  # noqa: E731
    case_id = lambda c: c.profile.case_id if hasattr(c, "profile") else c.case_id  # noqa: E731
    ordered = sorted(cases, key=lambda c: (start_time(c), case_id(c)))
    n_train = (8 * n) // 10
    n_val = n // 10
    return ordered[:n_train], ordered[n_train:n_train + n_val], ordered[n_train + n_val:]


class _RSERegressor(RegressorMixin, BaseEstimator):
    """Shared predict/score for the RSE-trained regressors."""

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.maximum(self._raw_predict(X), 0.0)

    def score(self, X, y, sample_weight=None):
        """Negative mRSE, so that larger is better as sklearn expects."""
        return -mrse(self.predict(X), y)


def _check_targets(X, y):
    X, y = check_X_y(X, y, dtype=float, y_numeric=True)
    if np.any(y <= 0):
        raise ValueError("targets must be positive (exclude zero-final cases first)")
    return X, y


def _weighted_lstsq(A: np.ndarray, ridge: float, penalized: np.ndarray) -> np.ndarray:
    """Minimize mean((A @ beta - 1)**2) + ridge * ||beta[penalized]||**2."""
    n, k = A.shape
    rows = [A]
    target = [np.ones(n)]
    if ridge > 0 and penalized.any():
        P = np.zeros((int(penalized.sum()), k))
        P[np.arange(P.shape[0]), np.flatnonzero(penalized)] = math.sqrt(n * ridge)
        rows.append(P)
        target.append(np.zeros(P.shape[0]))
    beta, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(target), rcond=None)
    return beta


class SHRegressor(_RSERegressor):
    """``y_hat = alpha * sum(increments) + b``.

    ``X`` holds per-bin increments (or a single cumulative column); rows are
    summed before fitting.  If every training case has the same early value
    the line is not identifiable: an all-zero early value gives the
    intercept-only optimum, otherwise the through-origin ratio fit is used.
    ``degenerate_`` records either case.
    """

    def fit(self, X, y):
        X, y = _check_targets(X, y)
        self.n_features_in_ = X.shape[1]
        x = X.sum(axis=1)
        self.degenerate_ = bool(np.all(x == x[0]))
        if self.degenerate_:
            if x[0] == 0:
                self.alpha_ = 0.0
                self.intercept_ = float(np.sum(1 / y) / np.sum(1 / y**2))
            else:
                self.alpha_ = float(np.sum(x / y) / np.sum((x / y) ** 2))
                self.intercept_ = 0.0
        else:
            A = np.column_stack([x / y, 1 / y])
            alpha, b = _weighted_lstsq(A, 0.0, np.zeros(2, bool))
            self.alpha_, self.intercept_ = float(alpha), float(b)
        return self

    def _raw_predict(self, X):
        return self.alpha_ * X.sum(axis=1) + self.intercept_

    def get_state(self) -> dict:
        return {"alpha": self.alpha_, "intercept": self.intercept_,
                "degenerate": self.degenerate_, "n_features_in": self.n_features_in_}

    def set_state(self, state: dict) -> "SHRegressor":
        self.alpha_, self.intercept_ = state["alpha"], state["intercept"]
        self.degenerate_, self.n_features_in_ = state["degenerate"], state["n_features_in"]
        return self


class MLRegressor(_RSERegressor):
    """``y_hat = theta . increments + b`` with ridge damping on theta."""

    def __init__(self, ridge: float = 1e-8):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = _check_targets(X, y)
        self.n_features_in_ = X.shape[1]
        A = np.column_stack([X / y[:, None], 1 / y])
        penalized = np.r_[np.ones(X.shape[1], bool), False]
        beta = _weighted_lstsq(A, self.ridge, penalized)
        self.coef_ = beta[:-1]
        self.intercept_ = float(beta[-1])
        return self

    def _raw_predict(self, X):
        return X @ self.coef_ + self.intercept_

    def get_state(self) -> dict:
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_,
                "n_features_in": self.n_features_in_}

    def set_state(self, state: dict) -> "MLRegressor":
        self.coef_ = np.array(state["coef"], dtype=float)
        self.intercept_ = state["intercept"]
        self.n_features_in_ = state["n_features_in"]
        return self


def normal_equation_residual(model, X, y) -> float:
    """Max |gradient| of the (ridged) mean-RSE objective at the fitted parameters."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(model, SHRegressor):
        A = np.column_stack([X.sum(axis=1) / y, 1 / y])
        beta = np.array([model.alpha_, model.intercept_])
        penalty = np.zeros(2)
    else:
        A = np.column_stack([X / y[:, None], 1 / y])
        beta = np.r_[model.coef_, model.intercept_]
        penalty = model.ridge * np.r_[model.coef_, 0.0]
    grad = A.T @ (A @ beta - 1) / len(y) + penalty
    return float(np.max(np.abs(grad)))


# -- two-layer network -------------------------------------------------------------

def init_params(n_in: int, hidden: int, rng: np.random.Generator) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.

    ``n_in`` may be 0 (every input dropped as constant); the network is then
    a learned constant.
    """
    b1 = 1 / math.sqrt(max(n_in, 1))
    b2 = 1 / math.sqrt(hidden)
    return {
        "W1": rng.uniform(-b1, b1, (n_in, hidden)),
        "b1": rng.uniform(-b1, b1, hidden),
        "W2": rng.uniform(-b2, b2, hidden),
        "b2": rng.uniform(-b2, b2, 1),
    }


def forward(params: dict, X: np.ndarray) -> np.ndarray:
    hidden = np.maximum(X @ params["W1"] + params["b1"], 0.0)
    return hidden @ params["W2"] + params["b2"][0]


def loss_and_grad(params: dict, X: np.ndarray, t: np.ndarray, weight_decay: float = 0.0):
    """Mean RSE of ``forward(params, X)`` against ``t`` plus ``weight_decay/2 * ||params||^2``."""
    z = X @ params["W1"] + params["b1"]
    h = np.maximum(z, 0.0)
    out = h @ params["W2"] + params["b2"][0]
    ratio = out / t - 1.0
    loss = float(np.mean(ratio**2))
    g_out = 2.0 * ratio / t / len(t)
    g_h = np.outer(g_out, params["W2"]) * (z > 0)
    grads = {
        "W1": X.T @ g_h,
        "b1": g_h.sum(axis=0),
        "W2": h.T @ g_out,
        "b2": np.array([g_out.sum()]),
    }
    if weight_decay:
        for name, value in params.items():
            loss += 0.5 * weight_decay * float(np.sum(value**2))
            grads[name] = grads[name] + weight_decay * value
    return loss, grads


class ANNRegressor(_RSERegressor):
    """Linear -> ReLU -> linear network trained on mean RSE with Adam.

    Inputs are z-scored with training statistics, weighted by 1/y^2 like the
    loss unless ``weighted_scaling=False``; features with zero training
    variance are dropped (``kept_features_``).  Targets are divided
    by a fixed positive scale before training, which leaves the RSE loss
    unchanged.  When a validation set is passed to ``fit`` the parameters
    from the epoch with the lowest validation mRSE are kept.
    """

    def __init__(self, hidden: int = 64, learning_rate: float = 0.01, weight_decay: float = 1e-4,
                 epochs: int = 200, batch_size: int = 64, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weighted_scaling: bool = True,
                 groups: Optional[Sequence[str]] = None, random_state: int = 0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weighted_scaling = weighted_scaling
        self.groups = groups
        self.random_state = random_state

    def _pool(self, std):
        """Share one scale across columns of a group (e.g. the bins of one increment block)."""
        groups = np.asarray(self.groups)
        if groups.shape != std.shape:
            raise ValueError(f"groups has {groups.size} labels for {std.size} features")
        pooled = std.copy()
        for g in np.unique(groups):
            cols = groups == g
            live = cols & (std > 0)
            if live.any():
                # columns constant in training stay dropped
                pooled[live] = np.sqrt(np.mean(std[live] ** 2))
        return pooled

    def _normalize(self, X):
        return (X[:, self.kept_features_] - self.mean_) / self.std_

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = _check_targets(X, y)
        self.n_features_in_ = X.shape[1]
        # RSE weights each case by 1/y^2, so by default the input statistics do too;
        # plain statistics let a few huge campaigns set the scale for everyone
        w = 1 / y**2 if self.weighted_scaling else np.ones_like(y)
        w = w / w.sum()
        mean = w @ X
        std = np.sqrt(w @ (X - mean) ** 2)
        std[np.ptp(X, axis=0) == 0] = 0.0  # exact test; the weighted sums leave rounding residue
        if self.groups is not None:
            std = self._pool(std)
        self.kept_features_ = np.flatnonzero(std > 0)
        self.mean_ = mean[self.kept_features_]
        self.std_ = std[self.kept_features_]
        # RSE-optimal constant; the network then learns a multiplier near 1
        self.target_scale_ = float(np.sum(1 / y) / np.sum(1 / y**2))

        if X_val is not None:
            X_val, y_val = _check_targets(X_val, y_val)

        rng = np.random.default_rng(self.random_state)
        Xn = self._normalize(X)
        t = y / self.target_scale_
        params = init_params(Xn.shape[1], self.hidden, rng)
        m = {k: np.zeros_like(v) for k, v in params.items()}
        v = {k: np.zeros_like(p) for k, p in params.items()}
        step = 0
        best = (math.inf, -1, None)
        self.history_ = []

        for epoch in range(self.epochs):
            order = rng.permutation(len(t))
            for start in range(0, len(t), self.batch_size):
                idx = order[start:start + self.batch_size]
                loss, grads = loss_and_grad(params, Xn[idx], t[idx])
                if not math.isfinite(loss):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                step += 1
                for k in params:
                    g = grads[k] + self.weight_decay * params[k]
                    m[k] = self.beta1 * m[k] + (1 - self.beta1) * g
                    v[k] = self.beta2 * v[k] + (1 - self.beta2) * g * g
                    m_hat = m[k] / (1 - self.beta1**step)
                    v_hat = v[k] / (1 - self.beta2**step)
                    params[k] = params[k] - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

            self.params_ = params
            train_loss = mrse(forward(params, Xn) * self.target_scale_, y)
            if not math.isfinite(train_loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            val_loss = mrse(self.predict(X_val), y_val) if X_val is not None else train_loss
            self.history_.append((train_loss, val_loss))
            if val_loss < best[0]:
                best = (val_loss, epoch, {k: p.copy() for k, p in params.items()})

        self.best_epoch_ = best[1]
        self.best_score_ = best[0]
        self.params_ = best[2]
        return self

    def _raw_predict(self, X):
        return forward(self.params_, self._normalize(X)) * self.target_scale_

    def get_state(self) -> dict:
        return {
            "params": {k: p.tolist() for k, p in self.params_.items()},
            "kept_features": self.kept_features_.tolist(),
            "mean": self.mean_.tolist(),
            "std": self.std_.tolist(),
            "target_scale": self.target_scale_,
            "best_epoch": self.best_epoch_,
            "best_score": self.best_score_,
            "n_features_in": self.n_features_in_,
        }

    def set_state(self, state: dict) -> "ANNRegressor":
        self.params_ = {k: np.array(p, dtype=float) for k, p in state["params"].items()}
        self.kept_features_ = np.array(state["kept_features"], dtype=int)
        self.mean_ = np.array(state["mean"], dtype=float)
        self.std_ = np.array(state["std"], dtype=float)
        self.target_scale_ = state["target_scale"]
        self.best_epoch_ = state["best_epoch"]
        self.best_score_ = state["best_score"]
        self.n_features_in_ = state["n_features_in"]
        return self


def fit_sh(X, y) -> SHRegressor:
    return SHRegressor().fit(X, y)


def fit_ml(X, y, ridge: float = 1e-8) -> MLRegressor:
    return MLRegressor(ridge=ridge).fit(X, y)


def fit_ann(X, y, X_val, y_val, **config) -> ANNRegressor:
    if X_val is None or len(X_val) == 0:
        raise ValueError("fit_ann needs a non-empty validation set")
    return ANNRegressor(**config).fit(X, y, X_val, y_val)
