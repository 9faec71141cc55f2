"""Joint estimation of the decision model and the verbal map via EM.

The latent variable is the log-odds Z^(k) behind each probed answer.  The
decision model supplies a Gaussian prior N(theta'x, sigma_theta^2) on Z; the
verbal response supplies a Gaussian observation logit(phi(V)) ~ N(Z,
sigma_phi^2).  Conjugacy gives a closed-form E-step; the M-step alternates a
proximal-gradient update of theta (least squares + margin-ranking hinge +
elastic net on interactions) with a per-level recalibration of phi projected
into its monotone bounds.

Because the theta update minimizes a *penalized* objective, the quantity that
provably never decreases across iterations is the penalized complete-data
objective (Q minus the scaled penalty), tracked here as ``objective_values``;
the raw Q sequence is recorded alongside and checked for monotonicity, with
any violation flagged in the diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    DecisionParams,
    FactorSet,
    design_matrix,
    feature_dim,
    params_from_vector,
    params_to_vector,
    sigmoid,
)
from .errors import DimensionError, NumericalError, ValidationError
from .hashing import content_hash
from .probing import BehavioralDataset
from .verbal import MonotoneBounds, VerbalMap, canonical_map, default_bounds, enforce_monotone, verbal_logits

MODEL_FORMAT_VERSION = 1

ABLATIONS = ("none", "no-em", "no-inter")

# Slack for the Q-monotonicity check; EM theory guarantees the penalized
# objective is non-decreasing, so violations beyond float noise are flagged.
MONOTONE_SLACK = 1e-9

_MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class EmConfig:
    """Estimation hyperparameters; defaults follow the reference setup."""

    sigma_theta_sq: float = 1.0
    sigma_phi_sq: float = 1.0
    lambda1: float = 0.01
    lambda2: float = 0.001
    lambda_mr: float = 0.1
    margin_eps: float = 0.05
    learning_rate: float = 0.05
    inner_steps: int = 200
    convergence_tol: float = 1e-4
    max_iters: int = 100
    bounds: MonotoneBounds = field(default_factory=default_bounds)
    seed: int = 0

    def __post_init__(self):
        positives = {
            "sigma_theta_sq": self.sigma_theta_sq,
            "sigma_phi_sq": self.sigma_phi_sq,
            "margin_eps": self.margin_eps,
            "learning_rate": self.learning_rate,
            "convergence_tol": self.convergence_tol,
        }
        for name, value in positives.items():
            if not value > 0:
                raise ValidationError(f"{name} must be > 0, got {value}")
        for name, value in {
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda_mr": self.lambda_mr,
        }.items():
            if value < 0:
                raise ValidationError(f"{name} must be >= 0, got {value}")
        if self.inner_steps < 1:
            raise ValidationError(f"inner_steps must be >= 1, got {self.inner_steps}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")

    def to_dict(self) -> dict:
        return {
            "sigma_theta_sq": self.sigma_theta_sq,
            "sigma_phi_sq": self.sigma_phi_sq,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda_mr": self.lambda_mr,
            "margin_eps": self.margin_eps,
            "learning_rate": self.learning_rate,
            "inner_steps": self.inner_steps,
            "convergence_tol": self.convergence_tol,
            "max_iters": self.max_iters,
            "bounds": {"lower": list(self.bounds.lower), "upper": list(self.bounds.upper)},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmConfig":
        d = dict(d)
        bounds = d.pop("bounds")
        return cls(bounds=MonotoneBounds(tuple(bounds["lower"]), tuple(bounds["upper"])), **d)


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """E-step output: posterior means of the latent logits, shared variance."""

    means: np.ndarray
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))


@dataclass(frozen=True)
class TrainedModel:
    """Fitted decision model, calibration map, and fit diagnostics."""

    factor_set: FactorSet
    params: DecisionParams
    map: VerbalMap
    em_config: EmConfig
    diagnostics: dict
    dataset_hash: str
    edit_history: tuple = ()

    def __post_init__(self):
        if self.params.n != self.factor_set.n:
            raise DimensionError(
                f"params are for N={self.params.n}, factor set has N={self.factor_set.n}"
            )
        if self.diagnostics.get("converged"):
            q = self.diagnostics.get("q_values", [])
            for a, b in zip(q, q[1:]):
                if b < a - MONOTONE_SLACK:
                    raise ValidationError(
                        "converged model carries a decreasing Q sequence"
                    )

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "factor_set": self.factor_set.to_dict(),
            "params": self.params.to_dict(),
            "map": self.map.to_list(),
            "em_config": self.em_config.to_dict(),
            "diagnostics": self.diagnostics,
            "dataset_hash": self.dataset_hash,
            "edit_history": list(self.edit_history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedModel":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValidationError(
                f"unsupported model format version {d.get('format_version')!r}"
            )
        return cls(
            factor_set=FactorSet.from_dict(d["factor_set"]),
            params=DecisionParams.from_dict(d["params"]),
            map=VerbalMap.from_list(d["map"]),
            em_config=EmConfig.from_dict(d["em_config"]),
            diagnostics=d["diagnostics"],
            dataset_hash=d["dataset_hash"],
            edit_history=tuple(d.get("edit_history", ())),
        )

    def with_params(self, params: DecisionParams, edit_entry: dict) -> "TrainedModel":
        """New model with edited params and the edit appended to history."""
        return replace(
            self, params=params, edit_history=self.edit_history + (edit_entry,)
        )


# --- E-step -------------------------------------------------------------------


def e_step(params: DecisionParams, vmap: VerbalMap, dataset: BehavioralDataset,
           cfg: EmConfig) -> PosteriorSummary:
    """Posterior mean/variance of each latent logit by Gaussian conjugacy."""
    if params.n != dataset.n:
        raise DimensionError(f"params N={params.n}, dataset N={dataset.n}")
    st, sp = cfg.sigma_theta_sq, cfg.sigma_phi_sq
    lam = sp / (st + sp)
    model_logits = design_matrix(dataset.config_matrix()) @ params_to_vector(params)
    verbal = verbal_logits(vmap, dataset.ordinals())
    means = lam * model_logits + (1.0 - lam) * verbal
    variance = st * sp / (st + sp)
    return PosteriorSummary(means=means, variance=variance)


# --- M-step for theta ------------------------------------------------------------


def _gamma_slice(n: int) -> slice:
    return slice(1 + n, feature_dim(n))


def smooth_objective(w: np.ndarray, X: np.ndarray, z_tilde: np.ndarray,
                     signs: np.ndarray, cfg: EmConfig, gamma_sl: slice) -> float:
    """MSE + margin-ranking hinge + L2(gamma): the differentiable part."""
    K = len(z_tilde)
    resid = X @ w - z_tilde
    mse = float(resid @ resid) / K
    margin = np.maximum(0.0, -signs * (sigmoid(X @ w) - 0.5) + cfg.margin_eps)
    margin[signs == 0] = 0.0
    mr = float(margin.sum()) / K
    g = w[gamma_sl]
    return mse + cfg.lambda_mr * mr + cfg.lambda2 * float(g @ g)


def smooth_gradient(w: np.ndarray, X: np.ndarray, z_tilde: np.ndarray,
                    signs: np.ndarray, cfg: EmConfig, gamma_sl: slice) -> np.ndarray:
    """Analytic gradient of smooth_objective."""
    K = len(z_tilde)
    logits = X @ w
    grad = (2.0 / K) * (X.T @ (logits - z_tilde))
    if cfg.lambda_mr > 0:
        p = sigmoid(logits)
        active = ((-signs * (p - 0.5) + cfg.margin_eps) > 0) & (signs != 0)
        if np.any(active):
            coeff = -signs[active] * p[active] * (1.0 - p[active])
            grad += (cfg.lambda_mr / K) * (X[active].T @ coeff)
    if cfg.lambda2 > 0:
        grad[gamma_sl] += 2.0 * cfg.lambda2 * w[gamma_sl]
    return grad


def soft_threshold(values: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def _full_objective(w, X, z_tilde, signs, cfg, gamma_sl) -> float:
    return smooth_objective(w, X, z_tilde, signs, cfg, gamma_sl) + cfg.lambda1 * float(
        np.abs(w[gamma_sl]).sum()
    )


def _prox_descent(w0: np.ndarray, X: np.ndarray, z_tilde: np.ndarray,
                  signs: np.ndarray, cfg: EmConfig) -> np.ndarray:
    """Proximal gradient descent with halving backtracking.

    Within one call, interaction coefficients that are (or become) exactly
    zero stay zero — the sparse set never shrinks mid-update.
    """
    gamma_sl = _gamma_slice_for(X)
    w = w0.copy()
    freeze = cfg.lambda1 > 0
    frozen = np.zeros(len(w), dtype=bool)
    if freeze:
        g = np.zeros(len(w), dtype=bool)
        g[gamma_sl] = True
        frozen = g & (w == 0.0)
    f_cur = _full_objective(w, X, z_tilde, signs, cfg, gamma_sl)
    for it in range(cfg.inner_steps):
        grad = smooth_gradient(w, X, z_tilde, signs, cfg, gamma_sl)
        if not np.all(np.isfinite(grad)):
            raise NumericalError(
                "non-finite gradient in proximal descent", iteration=it
            )
        eta = cfg.learning_rate
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            cand = w - eta * grad
            cand[gamma_sl] = soft_threshold(cand[gamma_sl], eta * cfg.lambda1)
            if freeze:
                cand[frozen] = 0.0
            f_cand = _full_objective(cand, X, z_tilde, signs, cfg, gamma_sl)
            if f_cand <= f_cur + 1e-15 * max(1.0, abs(f_cur)):
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            break  # no descent direction at float resolution: done
        w = cand
        f_cur = f_cand
        if freeze:
            g = np.zeros(len(w), dtype=bool)
            g[gamma_sl] = True
            frozen |= g & (w == 0.0)
    return w


def _gamma_slice_for(X: np.ndarray) -> slice:
    """Gamma columns of a design matrix with or without interaction columns."""
    D = X.shape[1]
    # D = 1 + n (+ n(n-1)/2): solve for n from the main-effect block
    for n in range(0, 21):
        if 1 + n == D:
            return slice(D, D)  # no interaction columns present
        if feature_dim(n) == D:
            return slice(1 + n, D)
    raise DimensionError(f"design matrix width {D} matches no factor count")


def m_step_params(posterior: PosteriorSummary, dataset: BehavioralDataset,
                  params_init: DecisionParams, directional_signs: np.ndarray,
                  cfg: EmConfig) -> DecisionParams:
    """Penalized least-squares update of theta by proximal gradient descent."""
    X = design_matrix(dataset.config_matrix())
    signs = np.asarray(directional_signs, dtype=float)
    if signs.shape != (dataset.size,):
        raise DimensionError("directional_signs must have one entry per observation")
    w = _prox_descent(params_to_vector(params_init), X, posterior.means, signs, cfg)
    return params_from_vector(w, dataset.n)


# --- M-step for phi ---------------------------------------------------------------


def m_step_map(posterior: PosteriorSummary, dataset: BehavioralDataset,
               prev_map: VerbalMap, cfg: EmConfig) -> VerbalMap:
    """Per-level recalibration: sigmoid of the mean posterior logit, clipped
    into the monotone bounds; levels with no observations keep their value."""
    ordinals = dataset.ordinals()
    candidate = list(prev_map.values)
    for m in range(1, 8):
        mask = ordinals == m
        if mask.any():
            mean_z = float(np.clip(posterior.means[mask].mean(), -30.0, 30.0))
            candidate[m - 1] = sigmoid(mean_z)
    return enforce_monotone(candidate, cfg.bounds)


# --- objectives ----------------------------------------------------------------------


def q_value(params: DecisionParams, vmap: VerbalMap, posterior: PosteriorSummary,
            dataset: BehavioralDataset, cfg: EmConfig) -> float:
    """Expected complete-data log-likelihood under the posterior."""
    st, sp = cfg.sigma_theta_sq, cfg.sigma_phi_sq
    K = dataset.size
    model_logits = design_matrix(dataset.config_matrix()) @ params_to_vector(params)
    verbal = verbal_logits(vmap, dataset.ordinals())
    z, v2 = posterior.means, posterior.variance
    prior_term = -0.5 * K * np.log(2 * np.pi * st) - (
        float(((z - model_logits) ** 2).sum()) + K * v2
    ) / (2 * st)
    like_term = -0.5 * K * np.log(2 * np.pi * sp) - (
        float(((verbal - z) ** 2).sum()) + K * v2
    ) / (2 * sp)
    return float(prior_term + like_term)


def marginal_log_likelihood(params: DecisionParams, vmap: VerbalMap,
                            dataset: BehavioralDataset, cfg: EmConfig) -> float:
    """Observed-data log-likelihood with the latent logit integrated out."""
    s = cfg.sigma_theta_sq + cfg.sigma_phi_sq
    K = dataset.size
    model_logits = design_matrix(dataset.config_matrix()) @ params_to_vector(params)
    resid = verbal_logits(vmap, dataset.ordinals()) - model_logits
    return float(-0.5 * K * np.log(2 * np.pi * s) - float(resid @ resid) / (2 * s))


def _penalty(params: DecisionParams, dataset: BehavioralDataset, signs: np.ndarray,
             cfg: EmConfig) -> float:
    """Margin-ranking + elastic-net penalty exactly as the M-step sees it."""
    X = design_matrix(dataset.config_matrix())
    w = params_to_vector(params)
    gamma_sl = _gamma_slice(dataset.n)
    K = dataset.size
    margin = np.maximum(0.0, -signs * (sigmoid(X @ w) - 0.5) + cfg.margin_eps)
    margin[signs == 0] = 0.0
    mr = float(margin.sum()) / K
    g = w[gamma_sl]
    return cfg.lambda_mr * mr + cfg.lambda1 * float(np.abs(g).sum()) + cfg.lambda2 * float(g @ g)


def penalized_objective(params: DecisionParams, vmap: VerbalMap,
                        dataset: BehavioralDataset, signs: np.ndarray,
                        cfg: EmConfig) -> float:
    """Q at the self-consistent posterior minus the scaled M-step penalty.

    This is the quantity the EM alternation provably never decreases (each
    step is a coordinate ascent on it), so it drives convergence tracking.
    """
    posterior = e_step(params, vmap, dataset, cfg)
    q = q_value(params, vmap, posterior, dataset, cfg)
    scale = dataset.size / (2.0 * cfg.sigma_theta_sq)
    return q - scale * _penalty(params, dataset, signs, cfg)


# --- initialization and the full fit ---------------------------------------------------


def _initial_params(X: np.ndarray, targets: np.ndarray, n: int,
                    ridge: float = 1e-6) -> np.ndarray:
    """Ridge-stabilized least squares in logit space."""
    D = X.shape[1]
    A = X.T @ X + ridge * np.eye(D)
    return np.linalg.solve(A, X.T @ targets)


def fit(dataset: BehavioralDataset, cfg: EmConfig | None = None,
        ablation: str = "none") -> TrainedModel:
    """Run the full EM alternation on a behavioral dataset.

    ``ablation="no-em"`` freezes the verbal map at its canonical values
    (skipping the phi update); ``ablation="no-inter"`` drops interaction
    terms so gamma is identically zero.
    """
    if cfg is None:
        cfg = EmConfig()
    if ablation not in ABLATIONS:
        raise ValidationError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    n = dataset.n
    K = dataset.size
    f_mat = dataset.config_matrix()
    X_full = design_matrix(f_mat)
    X = X_full[:, : 1 + n] if ablation == "no-inter" else X_full

    vmap = canonical_map()
    initial_verbal = verbal_logits(vmap, dataset.ordinals())
    signs = np.sign(np.array([vmap.values[o - 1] for o in dataset.ordinals()]) - 0.5)

    w = _initial_params(X, initial_verbal, n)
    params = _params_from_design_vector(w, n, ablation)

    rank = int(np.linalg.matrix_rank(X))
    rank_deficient = rank < X.shape[1]

    def tracked(p: DecisionParams, m: VerbalMap) -> tuple[float, float]:
        # The tracked Q is the penalized complete-data objective: raw Q minus
        # the scaled M-step penalty.  The E-step maximizes it over the
        # posterior, the map update maximizes it per level, and the proximal
        # descent never decreases it, so the sequence is non-decreasing; the
        # raw Q alone carries no such guarantee once the penalties are active.
        posterior = e_step(p, m, dataset, cfg)
        q_raw = q_value(p, m, posterior, dataset, cfg)
        scale = K / (2.0 * cfg.sigma_theta_sq)
        return q_raw - scale * _penalty(p, dataset, signs, cfg), q_raw

    j0, q0 = tracked(params, vmap)
    q_values = [j0]
    q_unpenalized = [q0]
    converged = False
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        posterior = e_step(params, vmap, dataset, cfg)
        w = _prox_descent(params_to_vector_for(params, n, ablation), X,
                          posterior.means, signs, cfg)
        params = _params_from_design_vector(w, n, ablation)
        if ablation != "no-em":
            vmap = m_step_map(posterior, dataset, vmap, cfg)
        j_t, q_t = tracked(params, vmap)
        q_values.append(j_t)
        q_unpenalized.append(q_t)
        if abs(q_values[-1] - q_values[-2]) < cfg.convergence_tol:
            converged = True
            break

    violation_at = None
    for i in range(1, len(q_values)):
        if q_values[i] < q_values[i - 1] - MONOTONE_SLACK:
            violation_at = i
            converged = False
            break

    diagnostics = {
        "q_values": q_values,
        "q_unpenalized": q_unpenalized,
        "marginal_log_likelihood": marginal_log_likelihood(params, vmap, dataset, cfg),
        "iterations": iterations,
        "converged": converged,
        "monotonicity_violation_iteration": violation_at,
        "rank": rank,
        "n_design_columns": X.shape[1],
        "rank_deficient": rank_deficient,
        "ablation": ablation,
        "dataset_size": K,
    }
    return TrainedModel(
        factor_set=dataset.factor_set,
        params=params,
        map=vmap,
        em_config=cfg,
        diagnostics=diagnostics,
        dataset_hash=content_hash(dataset.to_dict()),
    )


def params_to_vector_for(params: DecisionParams, n: int, ablation: str) -> np.ndarray:
    vec = params_to_vector(params)
    if ablation == "no-inter":
        return vec[: 1 + n]
    return vec


def _params_from_design_vector(w: np.ndarray, n: int, ablation: str) -> DecisionParams:
    if ablation == "no-inter":
        return DecisionParams(alpha=float(w[0]), beta=tuple(float(b) for b in w[1 : 1 + n]), gamma={})
    return params_from_vector(w, n)
