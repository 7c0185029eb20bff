"""Multinomial-logit transition models fitted to ecological data.

Transition rows are parameterized on the log-odds scale against the last
column::

    log(pi[u, i, j] / pi[u, i, C-1]) = alpha[i, j] + sum_k beta[i, j, k] * z[u, i, j, k]

and the model-implied new-election shares of a unit are
``yhat[u] = x[u] @ pi[u]``.  Two fitters are provided: size-weighted least
squares on the shares (``fit_logit_ols``) and iteratively reweighted least
squares with an overdispersed multinomial working covariance
(``fit_logit_wls``).

Design entries may also target the reference column; such a term is added
to ``eta[u, i, C-1]`` while the intercept there stays fixed at 0.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logit as _logit

from .errors import (
    DimensionMismatch,
    MissingCovariate,
    NonConvergence,
    RankDeficient,
    SingularWeightWarning,
    TooFewUnits,
    ValidationError,
)
from .tables import MarginArrays, UnitMargins, stack_margins

logger = logging.getLogger(__name__)

TRANSFORMS = ("identity", "centered", "logit")


@dataclass(frozen=True)
class DesignEntry:
    cell: tuple[int, int]
    source: str
    transform: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "cell", tuple(int(c) for c in self.cell))
        kind, _, arg = self.source.partition(":")
        if kind not in ("row_margin", "external") or not arg:
            raise ValidationError(f"bad covariate source {self.source!r}")
        if kind == "row_margin" and not arg.isdigit():
            raise ValidationError(f"bad row_margin index in {self.source!r}")
        if self.transform is None:
            object.__setattr__(self, "transform", "centered" if kind == "row_margin" else "identity")
        if self.transform not in TRANSFORMS:
            raise ValidationError(f"unknown transform {self.transform!r}")

    @property
    def kind(self) -> str:
        return self.source.partition(":")[0]

    @property
    def arg(self):
        a = self.source.partition(":")[2]
        return int(a) if self.kind == "row_margin" else a


@dataclass(frozen=True)
class CovariateDesign:
    """Which cells depend on which unit-level covariates."""

    entries: tuple[DesignEntry, ...] = ()

    def __post_init__(self):
        entries = tuple(e if isinstance(e, DesignEntry) else DesignEntry(**e) for e in self.entries)
        keys = [(e.cell, e.source) for e in entries]
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate (cell, source) pairs in design")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def check_shape(self, R: int, C: int):
        for e in self.entries:
            i, j = e.cell
            if not (0 <= i < R and 0 <= j < C):
                raise DimensionMismatch(f"design cell {e.cell} outside {R} x {C} table")
            if e.kind == "row_margin" and not 0 <= e.arg < R:
                raise DimensionMismatch(f"design source {e.source!r} outside {R} rows")

    def raw_values(self, m: MarginArrays) -> np.ndarray:
        """Transformed, uncentered covariates as an (N, E) array."""
        x = m.x
        cols = []
        for e in self.entries:
            if e.kind == "row_margin":
                v = x[:, e.arg]
            else:
                if e.arg not in m.covariates:
                    raise MissingCovariate(f"covariate {e.arg!r} missing from at least one unit")
                v = np.asarray(m.covariates[e.arg], dtype=float)
            if e.transform == "logit":
                v = _logit(np.clip(v, 1e-6, 1 - 1e-6))
            cols.append(v)
        if not cols:
            return np.zeros((m.n_units, 0))
        return np.column_stack(cols)

    def centers_for(self, raw: np.ndarray) -> np.ndarray:
        mask = np.array([e.transform == "centered" for e in self.entries], dtype=bool)
        centers = np.zeros(len(self.entries))
        if raw.shape[0] and mask.any():
            centers[mask] = raw[:, mask].mean(axis=0)
        return centers

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"cell": list(e.cell), "source": e.source, "transform": e.transform}
                for e in self.entries
            ]
        }

    @classmethod
    def from_dict(cls, d) -> "CovariateDesign":
        entries = d["entries"] if isinstance(d, dict) else d
        try:
            return cls(tuple(DesignEntry(**e) for e in entries))
        except TypeError as exc:
            raise ValidationError(f"bad design entry: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "CovariateDesign":
        return cls.from_dict(json.loads(text))


@dataclass
class LogitModel:
    """Fitted or user-supplied logit transition model.

    ``centers`` are the shifts subtracted from the design covariates; they
    are fixed at fit time so the model can be evaluated on new units.
    """

    alpha: np.ndarray
    beta: np.ndarray
    centers: np.ndarray | None = None
    phi: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.centers = (
            np.zeros_like(self.beta) if self.centers is None else np.asarray(self.centers, float).reshape(-1)
        )
        if self.alpha.ndim != 2:
            raise DimensionMismatch(f"alpha must be R x (C-1), got shape {self.alpha.shape}")
        if self.centers.shape != self.beta.shape:
            raise DimensionMismatch("centers and beta differ in length")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
            raise ValidationError("model parameters must be finite")
        if self.phi is not None and not self.phi >= 0:
            raise ValidationError(f"phi must be non-negative, got {self.phi}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape[0], self.alpha.shape[1] + 1

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.alpha.ravel(), self.beta])

    @classmethod
    def from_theta(cls, theta, shape, centers, **kw) -> "LogitModel":
        R, C = shape
        k = R * (C - 1)
        return cls(alpha=np.reshape(theta[:k], (R, C - 1)), beta=theta[k:], centers=centers, **kw)

    @classmethod
    def constant(cls, table) -> "LogitModel":
        """Covariate-free model reproducing a strictly positive table."""
        t = np.asarray(table, dtype=float)
        return cls(alpha=np.log(t[:, :-1] / t[:, -1:]), beta=np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "centers": self.centers.tolist(),
            "phi": self.phi,
            "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool, type(None)))},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LogitModel":
        return cls(
            alpha=d["alpha"], beta=d.get("beta", []), centers=d.get("centers"), phi=d.get("phi"),
            info=dict(d.get("info", {})),
        )


# -- evaluation ----------------------------------------------------------------


def _softmax(eta: np.ndarray) -> np.ndarray:
    eta = eta - eta.max(axis=-1, keepdims=True)
    p = np.exp(eta)
    return p / p.sum(axis=-1, keepdims=True)


def _eta(theta: np.ndarray, Z: np.ndarray, design: CovariateDesign, R: int, C: int) -> np.ndarray:
    N = Z.shape[0]
    k = R * (C - 1)
    eta = np.zeros((N, R, C))
    eta[:, :, :-1] = theta[:k].reshape(R, C - 1)
    for e, (b, z) in enumerate(zip(theta[k:], Z.T)):
        i, j = design.entries[e].cell
        eta[:, i, j] += b * z
    return eta


def _covariates(model: LogitModel, design: CovariateDesign, m: MarginArrays) -> np.ndarray:
    if len(design) != model.beta.size:
        raise DimensionMismatch(f"design has {len(design)} entries, model has {model.beta.size} slopes")
    R, C = m.shape
    if model.shape != (R, C):
        raise DimensionMismatch(f"model shape {model.shape} does not match data shape {(R, C)}")
    design.check_shape(R, C)
    return design.raw_values(m) - model.centers


def unit_probs(model: LogitModel, design: CovariateDesign, data) -> np.ndarray:
    """Transition tables of every unit as an (N, R, C) array."""
    m = stack_margins(data)
    Z = _covariates(model, design, m)
    R, C = m.shape
    return _softmax(_eta(model.theta, Z, design, R, C))


def transition_probs(model: LogitModel, design: CovariateDesign, u: UnitMargins) -> np.ndarray:
    return unit_probs(model, design, [u])[0]


def predicted_shares(model: LogitModel, design: CovariateDesign, u: UnitMargins) -> np.ndarray:
    """Model-implied new-election shares ``x[u] @ pi[u]`` of one unit."""
    return u.x @ transition_probs(model, design, u)


# -- objectives ----------------------------------------------------------------


class SharesObjective:
    """Quadratic loss on predicted shares, ``sum_u r_u' W_u r_u``.

    ``r_u = y_u - yhat_u(theta)``.  ``W`` is either a length-N vector of
    scalar weights (identity metric in every unit) or an (N, C, C) array of
    per-unit weight matrices.
    """

    def __init__(self, m: MarginArrays, design: CovariateDesign, Z: np.ndarray, W: np.ndarray):
        self.m = m
        self.design = design
        self.Z = Z
        self.shape = m.shape
        self.x = m.x
        self.y = m.y
        self.W = W
        self.n_params = self.shape[0] * (self.shape[1] - 1) + len(design)
        self._idx = [e.cell for e in design.entries]

    def probs(self, theta: np.ndarray) -> np.ndarray:
        R, C = self.shape
        return _softmax(_eta(theta, self.Z, self.design, R, C))

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        pi = self.probs(theta)
        return self.y - np.einsum("ui,uij->uj", self.x, pi)

    def _weighted(self, r: np.ndarray) -> np.ndarray:
        if self.W.ndim == 1:
            return self.W[:, None] * r
        return np.einsum("ujk,uk->uj", self.W, r)

    def value(self, theta: np.ndarray) -> float:
        r = self.residuals(theta)
        return float(np.sum(r * self._weighted(r)))

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        R, C = self.shape
        pi = self.probs(theta)
        r = self.y - np.einsum("ui,uij->uj", self.x, pi)
        Wr = self._weighted(r)
        f = float(np.sum(r * Wr))
        G = -2.0 * Wr  # d f / d yhat
        # d yhat_j / d eta_ij' = x_i pi_ij (delta_jj' - pi_ij')
        inner = np.einsum("uj,uij->ui", G, pi)
        g_eta = self.x[:, :, None] * pi * (G[:, None, :] - inner[:, :, None])
        grad = np.empty(self.n_params)
        k = R * (C - 1)
        grad[:k] = g_eta[:, :, :-1].sum(axis=0).ravel()
        for e, (i, j) in enumerate(self._idx):
            grad[k + e] = g_eta[:, i, j] @ self.Z[:, e]
        return f, grad

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.value_and_grad(theta)[1]


@dataclass
class OptimizerOptions:
    """Settings shared by the logit fitters.

    ``tol`` bounds the max-abs gradient relative to ``1 + objective``.
    Restart 0 starts from the Goodman estimate with zero slopes; later
    restarts add Gaussian jitter of scale ``jitter``.
    """

    tol: float = 1e-7
    max_iter: int = 2000
    restarts: int = 5
    seed: int = 0
    jitter: float = 0.5
    size_weights: bool = True
    # WLS only
    covariance: str = "multinomial"
    phi: float | None = None
    max_outer: int = 50
    outer_tol: float = 1e-7


def _prepare(data, design: CovariateDesign):
    m = stack_margins(data)
    R, C = m.shape
    design.check_shape(R, C)
    raw = design.raw_values(m)
    centers = design.centers_for(raw)
    Z = raw - centers
    p = R * (C - 1) + len(design)
    if m.n_units < p:
        raise TooFewUnits(f"{p} parameters need at least {p} units, got {m.n_units}")
    return m, Z, centers


def _size_weights(m: MarginArrays, use_sizes: bool) -> np.ndarray:
    w = m.sizes if use_sizes else np.ones(m.n_units)
    return w / w.sum()


def _goodman_start(m: MarginArrays) -> np.ndarray:
    from .goodman import fit_goodman

    R, C = m.shape
    try:
        t = fit_goodman(m).table
    except (RankDeficient, TooFewUnits):
        return np.zeros((R, C - 1))
    t = np.clip(t, 0.02, None)
    t = t / t.sum(axis=1, keepdims=True)
    return np.log(t[:, :-1] / t[:, -1:])


def _starts(m: MarginArrays, design: CovariateDesign, opts: OptimizerOptions) -> list[np.ndarray]:
    alpha0 = _goodman_start(m).ravel()
    theta0 = np.concatenate([alpha0, np.zeros(len(design))])
    rng = np.random.default_rng(opts.seed)
    starts = [theta0]
    for _ in range(max(opts.restarts, 1) - 1):
        starts.append(theta0 + rng.normal(0.0, opts.jitter, theta0.size))
    return starts


def _minimize(obj: SharesObjective, theta0: np.ndarray, opts: OptimizerOptions):
    """BFGS from one start; returns (theta, value, grad_norm, trace, n_iter)."""
    trace = [obj.value(theta0)]

    def cb(intermediate_result):
        trace.append(float(intermediate_result.fun))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(
            obj.value_and_grad,
            theta0,
            jac=True,
            method="BFGS",
            callback=cb,
            options={"gtol": opts.tol, "maxiter": opts.max_iter},
        )
    f, g = obj.value_and_grad(res.x)
    gnorm = float(np.max(np.abs(g))) / (1.0 + abs(f)) if g.size else 0.0
    return res.x, f, gnorm, trace, int(res.nit)


def _best_of(obj: SharesObjective, starts, opts: OptimizerOptions):
    best = None
    for s in starts:
        out = _minimize(obj, s, opts)
        if best is None or out[1] < best[1]:
            best = out
    return best


def fit_logit_ols(data: Sequence[UnitMargins], design: CovariateDesign = CovariateDesign(),
                  opts: OptimizerOptions | None = None) -> LogitModel:
    """Least-squares fit of the logit model to the observed shares.

    Minimizes ``sum_u w_u sum_j (y[u, j] - yhat[u, j])**2`` with ``w_u``
    proportional to unit size (normalized to sum to 1), keeping the best of
    ``opts.restarts`` quasi-Newton runs.

    Raises
    ------
    NonConvergence
        If the best run still has a gradient above ``opts.tol``; the best
        model is attached as ``exc.best``.
    """
    opts = opts or OptimizerOptions()
    m, Z, centers = _prepare(data, design)
    obj = SharesObjective(m, design, Z, _size_weights(m, opts.size_weights))
    theta, f, gnorm, trace, nit = _best_of(obj, _starts(m, design, opts), opts)
    model = LogitModel.from_theta(
        theta, m.shape, centers,
        info={"method": "king-ols", "objective": f, "grad_norm": gnorm, "n_iter": nit,
              "converged": gnorm <= opts.tol},
    )
    model.info["trace"] = trace
    if gnorm > opts.tol:
        raise NonConvergence(
            f"OLS gradient norm {gnorm:.3g} above tolerance {opts.tol:.3g}", model, f, gnorm
        )
    return model


def _covariance_blocks(yhat: np.ndarray, sizes: np.ndarray, phi: float) -> np.ndarray:
    """Working covariances (1/n_u + phi) [Diag(yhat) - yhat yhat'] on C-1 coords."""
    q = yhat[:, :-1]
    V = np.einsum("uj,jk->ujk", q, np.eye(q.shape[1])) - q[:, :, None] * q[:, None, :]
    return (1.0 / sizes + phi)[:, None, None] * V


def _inverse_blocks(S: np.ndarray) -> tuple[np.ndarray, int]:
    eig = np.linalg.eigvalsh(S)
    scale = np.maximum(eig[:, -1], 1e-300)
    bad = eig[:, 0] <= 1e-10 * scale
    n_bad = int(bad.sum())
    if n_bad:
        ridge = 1e-8 * np.trace(S[bad], axis1=1, axis2=2) + 1e-300
        S = S.copy()
        S[bad] += ridge[:, None, None] * np.eye(S.shape[1])
    return np.linalg.inv(S), n_bad


def _embed(Winv: np.ndarray, C: int) -> np.ndarray:
    N = Winv.shape[0]
    W = np.zeros((N, C, C))
    W[:, :-1, :-1] = Winv
    return W


def pearson_phi(resid: np.ndarray, yhat: np.ndarray, sizes: np.ndarray, n_params: int) -> float:
    """Moment estimate of the overdispersion ``phi``.

    Solves ``sum_u r_u' S_u(phi)^-1 r_u = N (C-1) - p`` on the first C-1
    coordinates; returns 0 when the statistic is already below target at
    ``phi = 0``.
    """
    N, C = yhat.shape
    target = N * (C - 1) - n_params
    if target <= 0:
        return 0.0
    V = _covariance_blocks(yhat, np.ones(N), 0.0)  # plain multinomial kernel
    Vinv, _ = _inverse_blocks(V)
    q = np.einsum("uj,ujk,uk->u", resid[:, :-1], Vinv, resid[:, :-1])

    def excess(phi):
        return float(np.sum(q / (1.0 / sizes + phi))) - target

    if excess(0.0) <= 0:
        return 0.0
    hi = 1.0
    while excess(hi) > 0:
        hi *= 10.0
        if hi > 1e12:
            return hi
    return float(brentq(excess, 0.0, hi, xtol=1e-14, rtol=1e-12))


def wls_objective(data, design: CovariateDesign, yhat: np.ndarray, phi: float) -> SharesObjective:
    """Weighted objective with working covariances frozen at ``yhat``."""
    m, Z, _ = _prepare(data, design)
    S = _covariance_blocks(yhat, m.sizes, phi)
    Winv, _ = _inverse_blocks(S)
    return SharesObjective(m, design, Z, _embed(Winv, m.shape[1]) / m.n_units)


def fit_logit_wls(data: Sequence[UnitMargins], design: CovariateDesign = CovariateDesign(),
                  opts: OptimizerOptions | None = None) -> LogitModel:
    """Iteratively reweighted least squares with overdispersed covariance.

    Starting from the OLS solution, alternate (a) freezing the working
    covariance ``(1/n_u + phi) [Diag(yhat_u) - yhat_u yhat_u']`` at the
    current fit, (b) minimizing the weighted objective, and (c) updating
    ``phi`` by the Pearson moment equation, until the parameters settle.

    ``opts.covariance = "identity"`` replaces the covariance by the OLS
    metric; ``opts.phi`` fixes ``phi`` instead of estimating it.
    """
    opts = opts or OptimizerOptions()
    if opts.covariance not in ("multinomial", "identity"):
        raise ValidationError(f"unknown covariance {opts.covariance!r}")
    m, Z, centers = _prepare(data, design)
    R, C = m.shape
    try:
        start = fit_logit_ols(m, design, opts)
    except NonConvergence as exc:
        start = exc.best
    theta = start.theta
    phi = 0.0 if opts.phi is None else float(opts.phi)
    n_params = theta.size
    n_singular = 0
    inner: SharesObjective | None = None
    f = gnorm = math.nan
    converged = False
    trace = []
    for outer in range(1, opts.max_outer + 1):
        obj_ols = SharesObjective(m, design, Z, np.ones(m.n_units))
        yhat = m.y - obj_ols.residuals(theta)
        if opts.covariance == "identity":
            inner = SharesObjective(m, design, Z, _size_weights(m, opts.size_weights))
        else:
            S = _covariance_blocks(yhat, m.sizes, phi)
            Winv, n_bad = _inverse_blocks(S)
            if n_bad:
                n_singular = max(n_singular, n_bad)
                warnings.warn(
                    f"{n_bad} singular working covariances; using a ridge inverse",
                    SingularWeightWarning,
                    stacklevel=2,
                )
            inner = SharesObjective(m, design, Z, _embed(Winv, C) / m.n_units)
        new_theta, f, gnorm, tr, _ = _minimize(inner, theta, opts)
        trace.extend(tr)
        new_phi = phi
        if opts.phi is None and opts.covariance == "multinomial":
            r = inner.residuals(new_theta)
            new_yhat = m.y - r
            new_phi = pearson_phi(r, new_yhat, m.sizes, n_params)
        step = float(np.max(np.abs(new_theta - theta)))
        dphi = abs(new_phi - phi)
        theta, phi = new_theta, new_phi
        logger.debug("wls outer %d: step %.3g phi %.6g f %.6g", outer, step, phi, f)
        if step < opts.outer_tol and dphi <= opts.outer_tol * max(1.0, phi):
            converged = True
            break
    model = LogitModel.from_theta(
        theta, (R, C), centers, phi=phi,
        info={"method": "bp-wls", "objective": f, "grad_norm": gnorm, "n_outer": outer,
              "converged": converged and gnorm <= opts.tol, "singular_weights": n_singular},
    )
    model.info["trace"] = trace
    if gnorm > opts.tol or not converged:
        raise NonConvergence(
            f"WLS stopped after {outer} reweighting steps (gradient {gnorm:.3g})", model, f, gnorm
        )
    return model
