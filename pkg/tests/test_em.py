"""EM estimator: posterior arithmetic, M-step optimality, and full-fit behavior."""

import numpy as np
import pytest

from factorlens.core import (
    DecisionParams,
    FactorConfiguration,
    all_configs,
    design_matrix,
    logits_matrix,
    params_to_vector,
    sigmoid,
)
from factorlens.em import (
    EmConfig,
    PosteriorSummary,
    TrainedModel,
    e_step,
    fit,
    m_step_map,
    m_step_params,
    marginal_log_likelihood,
    q_value,
    smooth_gradient,
    smooth_objective,
    soft_threshold,
)
from factorlens.errors import DimensionError, NumericalError, ValidationError
from factorlens.oracle import SyntheticBackend, SyntheticOracleSpec
from factorlens.probing import BehavioralDataset, Observation, collect_dataset, plan_configurations
from factorlens.verbal import VerbalLevel, VerbalMap, canonical_map

from conftest import build_factor_set, build_synthetic


def zero_params(n):
    return DecisionParams(alpha=0.0, beta=(0.0,) * n, gamma={})


def make_dataset(levels, n=2):
    """Dataset over n factors with the given level ordinals, configs cycling."""
    fs = build_factor_set(n)
    space = [FactorConfiguration(tuple(int(b) for b in np.binary_repr(v, n)))
             for v in range(2**n)]
    obs = tuple(
        Observation(config=space[i % len(space)], level=VerbalLevel.from_ordinal(o))
        for i, o in enumerate(levels)
    )
    return BehavioralDataset(factor_set=fs, observations=obs)


def exhaustive_dataset(params, vmap=None, seed=0, label_noise=0.0):
    n = params.n
    backend = build_synthetic(params=params, vmap=vmap, rng_seed=seed, label_noise=label_noise)
    return collect_dataset(backend, build_factor_set(n), plan_configurations(n, budget=256))


# --- E-step -----------------------------------------------------------------


def test_e_step_balances_model_and_verbal_at_equal_variances():
    # model logit 0 everywhere, verbal logit 2 at the probed level
    vmap_values = list(canonical_map().values)
    vmap_values[5] = 0.8807970779778823  # sigmoid(2.0)
    ds = make_dataset([6, 6, 6])
    post = e_step(zero_params(2), VerbalMap(tuple(vmap_values)), ds, EmConfig())
    assert np.allclose(post.means, 1.0, atol=1e-12)


def test_e_step_agreement_is_a_fixed_point():
    params = DecisionParams(alpha=-0.847297860387203, beta=(0.9, 0.7), gamma={})
    ds = make_dataset([2, 3, 4, 5], n=2)
    model_logits = design_matrix(ds.config_matrix()) @ params_to_vector(params)
    values = list(canonical_map().values)
    for obs_logit, ordinal in zip(model_logits, ds.ordinals()):
        values[ordinal - 1] = float(sigmoid(obs_logit))
    values.sort()
    post = e_step(params, VerbalMap(tuple(values)), ds, EmConfig())
    assert np.allclose(np.sort(post.means), np.sort(model_logits), atol=1e-12)


def test_e_step_huge_verbal_variance_returns_model_logits():
    params = DecisionParams(alpha=0.3, beta=(1.0, -0.5, 0.25), gamma={(0, 2): 0.4})
    ds = make_dataset([1, 4, 7, 2, 6], n=3)
    model_logits = design_matrix(ds.config_matrix()) @ params_to_vector(params)
    post = e_step(params, canonical_map(), ds, EmConfig(sigma_phi_sq=1e9))
    assert np.allclose(post.means, model_logits, atol=1e-6)


def test_posterior_variance_identity_exact():
    ds = make_dataset([4])
    for st, sp in [(1.0, 1.0), (0.5, 2.0), (3.0, 0.25), (1e-3, 1e3)]:
        post = e_step(zero_params(2), canonical_map(), ds, EmConfig(sigma_theta_sq=st, sigma_phi_sq=sp))
        assert abs(post.variance * (st + sp) - st * sp) < 1e-12


def test_e_step_rejects_mismatched_dimensions():
    ds = make_dataset([4], n=3)
    with pytest.raises(DimensionError):
        e_step(zero_params(2), canonical_map(), ds, EmConfig())


# --- gradients and the theta M-step -----------------------------------------


def test_smooth_gradient_matches_central_differences():
    rng = np.random.default_rng(42)
    n = 4
    X = design_matrix(all_configs(n))
    z = rng.normal(size=X.shape[0])
    signs = rng.choice([-1.0, 0.0, 1.0], size=X.shape[0])
    cfg = EmConfig()
    gamma_sl = slice(1 + n, X.shape[1])
    for _ in range(5):
        w = rng.normal(scale=0.8, size=X.shape[1])
        g = smooth_gradient(w, X, z, signs, cfg, gamma_sl)
        h = 1e-6
        for i in rng.choice(X.shape[1], size=6, replace=False):
            e = np.zeros_like(w)
            e[i] = h
            fd = (smooth_objective(w + e, X, z, signs, cfg, gamma_sl)
                  - smooth_objective(w - e, X, z, signs, cfg, gamma_sl)) / (2 * h)
            denom = max(1.0, abs(fd))
            assert abs(g[i] - fd) / denom < 1e-5


def test_m_step_params_matches_normal_equations_without_penalties():
    rng = np.random.default_rng(7)
    n = 3
    f = all_configs(n)
    X = design_matrix(f)
    z = rng.normal(scale=1.5, size=X.shape[0])
    ds = make_dataset(list(rng.integers(1, 8, size=X.shape[0])), n=n)
    # observations must carry the exhaustive configs so the design matches X
    obs = tuple(
        Observation(config=FactorConfiguration(tuple(int(b) for b in row)), level=o.level)
        for row, o in zip(f, ds.observations)
    )
    ds = ds.with_observations(obs)
    cfg = EmConfig(lambda1=0.0, lambda2=0.0, lambda_mr=0.0,
                   inner_steps=5000, learning_rate=0.5)
    post = PosteriorSummary(means=z, variance=0.5)
    signs = np.zeros(X.shape[0])
    fitted = m_step_params(post, ds, zero_params(n), signs, cfg)
    w_ls = np.linalg.solve(X.T @ X, X.T @ z)
    assert np.allclose(params_to_vector(fitted), w_ls, atol=1e-6)


def test_huge_l1_wipes_all_interactions():
    params = DecisionParams(alpha=0.1, beta=(1.0, -1.0, 0.5), gamma={(0, 1): 0.9, (1, 2): -0.7})
    ds = exhaustive_dataset(params)
    post = e_step(params, canonical_map(), ds, EmConfig())
    signs = np.zeros(ds.size)
    fitted = m_step_params(post, ds, params, signs, EmConfig(lambda1=1e6))
    assert fitted.gamma == {}


def test_soft_threshold_shrinks_and_zeroes():
    v = np.array([0.5, -0.3, 0.05, -0.01, 0.0])
    out = soft_threshold(v, 0.1)
    assert np.allclose(out, [0.4, -0.2, 0.0, 0.0, 0.0])


def test_m_step_objective_never_increased_by_descent():
    rng = np.random.default_rng(11)
    n = 4
    params = DecisionParams(alpha=0.0, beta=tuple(rng.uniform(-1.5, 1.5, n)), gamma={(0, 3): 0.8})
    ds = exhaustive_dataset(params)
    cfg = EmConfig()
    vmap = canonical_map()
    post = e_step(params, vmap, ds, cfg)
    signs = np.sign(np.array([vmap.values[o - 1] for o in ds.ordinals()]) - 0.5)
    X = design_matrix(ds.config_matrix())

    def full_objective(p):
        w = params_to_vector(p)
        gamma_sl = slice(1 + n, X.shape[1])
        return (smooth_objective(w, X, post.means, signs, cfg, gamma_sl)
                + cfg.lambda1 * np.abs(w[gamma_sl]).sum())

    start = zero_params(n)
    fitted = m_step_params(post, ds, start, signs, cfg)
    assert full_objective(fitted) <= full_objective(start) + 1e-12


def test_non_finite_posterior_raises_numerical_error_with_context():
    ds = make_dataset([4, 4, 4, 4], n=2)
    post = PosteriorSummary(means=np.array([np.inf, 0.0, 0.0, 0.0]), variance=0.5)
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericalError) as err:
            m_step_params(post, ds, zero_params(2), np.zeros(4), EmConfig())
    assert err.value.iteration is not None


# --- map M-step ---------------------------------------------------------------


def test_m_step_map_takes_per_level_posterior_means():
    levels = [1, 4, 7] * 4
    means = {1: [-3.0, -2.9, -2.95, -2.93], 4: [-0.1, 0.1, 0.05, -0.05], 7: [2.9, 3.0, 2.95, 2.97]}
    z = []
    counters = {1: 0, 4: 0, 7: 0}
    for lv in levels:
        z.append(means[lv][counters[lv]])
        counters[lv] += 1
    ds = make_dataset(levels)
    post = PosteriorSummary(means=np.array(z), variance=0.5)
    out = m_step_map(post, ds, canonical_map(), EmConfig())
    assert abs(out.values[0] - 0.04997335823706753) < 1e-12  # sigmoid(mean -2.945)
    assert abs(out.values[3] - 0.5) < 1e-12
    assert abs(out.values[6] - 0.9504992710835376) < 1e-12  # sigmoid(mean 2.955)
    # untouched levels keep their previous values
    for m in (1, 2, 4, 5):
        assert out.values[m] == canonical_map().values[m]


def test_m_step_map_zero_means_give_half_within_bounds():
    ds = make_dataset([4, 4, 4])
    post = PosteriorSummary(means=np.zeros(3), variance=0.5)
    out = m_step_map(post, ds, canonical_map(), EmConfig())
    assert out.values[3] == 0.5


def test_m_step_map_clips_into_level_band():
    ds = make_dataset([4, 4])
    post = PosteriorSummary(means=np.array([2.0, 2.0]), variance=0.5)  # wants 0.88 for "neutral"
    cfg = EmConfig()
    out = m_step_map(post, ds, canonical_map(), cfg)
    assert out.values[3] == cfg.bounds.upper[3]
    assert all(a < b for a, b in zip(out.values, out.values[1:]))


def test_m_step_map_empty_levels_keep_previous_values():
    prev_values = tuple(v + 0.001 for v in canonical_map().values)
    prev = VerbalMap(prev_values)
    ds = make_dataset([4])
    post = PosteriorSummary(means=np.array([0.0]), variance=0.5)
    out = m_step_map(post, ds, prev, EmConfig())
    for m in range(7):
        if m != 3:
            assert out.values[m] == prev_values[m]


# --- Q and marginal likelihood -----------------------------------------------


def test_q_value_single_agreeing_observation():
    # z equal to both anchors, unit variances: Q = -log(2*pi) - posterior variance
    ds = make_dataset([4])
    params = zero_params(2)
    post = e_step(params, canonical_map(), ds, EmConfig())
    assert np.allclose(post.means, [0.0])
    q = q_value(params, canonical_map(), post, ds, EmConfig())
    assert abs(q - (-2.3378770664093453)) < 1e-12


def test_q_value_decreases_with_displacement():
    ds = make_dataset([4])
    params = zero_params(2)
    cfg = EmConfig()
    qs = [q_value(params, canonical_map(), PosteriorSummary(np.array([d]), 0.5), ds, cfg)
          for d in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(qs, qs[1:]))


def test_q_value_invariant_under_observation_order():
    params = DecisionParams(alpha=0.2, beta=(0.8, -0.6), gamma={})
    cfg = EmConfig()
    ds1 = make_dataset([2, 5, 6, 3])
    post1 = e_step(params, canonical_map(), ds1, cfg)
    ds2 = make_dataset([3, 6, 5, 2])
    obs = tuple(reversed([Observation(o.config, o.level) for o in ds1.observations]))
    ds2 = ds2.with_observations(obs)
    post2 = e_step(params, canonical_map(), ds2, cfg)
    assert abs(q_value(params, canonical_map(), post1, ds1, cfg)
               - q_value(params, canonical_map(), post2, ds2, cfg)) < 1e-12


def test_marginal_likelihood_peak_at_perfect_agreement():
    # five observations whose verbal logits equal the model logits exactly
    params = zero_params(2)
    values = list(canonical_map().values)
    values[3] = 0.5
    ds = make_dataset([4, 4, 4, 4, 4])
    ll = marginal_log_likelihood(params, VerbalMap(tuple(values)), ds, EmConfig())
    assert abs(ll - (-6.327560617423227)) < 1e-12  # -(K/2) log(2 pi (st+sp))


def test_marginal_likelihood_incremental_residual():
    params = zero_params(2)
    vmap = canonical_map()
    cfg = EmConfig()
    base = make_dataset([4, 4, 4])
    bigger = make_dataset([4, 4, 4, 6])
    delta = (marginal_log_likelihood(params, vmap, bigger, cfg)
             - marginal_log_likelihood(params, vmap, base, cfg))
    r = np.log(vmap.values[5] / (1 - vmap.values[5]))  # residual of the new observation
    s = cfg.sigma_theta_sq + cfg.sigma_phi_sq
    assert abs(delta - (-0.5 * np.log(2 * np.pi * s) - r**2 / (2 * s))) < 1e-12


def test_marginal_likelihood_never_beats_agreement_bound():
    rng = np.random.default_rng(3)
    cfg = EmConfig()
    ds = make_dataset(list(rng.integers(1, 8, size=12)), n=3)
    bound = -0.5 * ds.size * np.log(2 * np.pi * (cfg.sigma_theta_sq + cfg.sigma_phi_sq))
    for _ in range(10):
        params = DecisionParams(alpha=float(rng.normal()), beta=tuple(rng.normal(size=3)), gamma={})
        assert marginal_log_likelihood(params, canonical_map(), ds, cfg) <= bound + 1e-12


def test_q_self_consistency_identity_with_marginal_likelihood():
    # at the self-consistent posterior, Q = LL - (K/2) log(2 pi e var)
    params = DecisionParams(alpha=0.1, beta=(0.9, -0.4, 0.2), gamma={(0, 1): 0.3})
    ds = exhaustive_dataset(params)
    cfg = EmConfig()
    post = e_step(params, canonical_map(), ds, cfg)
    q = q_value(params, canonical_map(), post, ds, cfg)
    ll = marginal_log_likelihood(params, canonical_map(), ds, cfg)
    entropy = 0.5 * ds.size * np.log(2 * np.pi * np.e * post.variance)
    assert abs(q - (ll - entropy)) < 1e-9


# --- full fit -----------------------------------------------------------------


def test_fit_recovers_synthetic_truth_n4():
    truth = DecisionParams(alpha=0.0, beta=(1.1, -0.9, 0.6, -1.4), gamma={(0, 2): 0.8})
    ds = exhaustive_dataset(truth)
    model = fit(ds)
    f = all_configs(4)
    p_true = sigmoid(logits_matrix(truth, f))
    p_fit = sigmoid(logits_matrix(model.params, f))
    assert float(np.sqrt(np.mean((p_true - p_fit) ** 2))) <= 0.05
    assert all(a < b for a, b in zip(model.map.values, model.map.values[1:]))


def test_fit_tracked_q_is_monotone_and_converges():
    truth = DecisionParams(alpha=0.0, beta=(1.3, -0.7, 0.4, 0.9, -1.1), gamma={(1, 3): -0.6})
    model = fit(exhaustive_dataset(truth))
    q = model.diagnostics["q_values"]
    assert all(b >= a - 1e-9 for a, b in zip(q, q[1:]))
    assert model.diagnostics["converged"]
    assert model.diagnostics["iterations"] <= 100
    assert model.diagnostics["monotonicity_violation_iteration"] is None
    assert len(model.diagnostics["q_unpenalized"]) == len(q)


def test_fit_is_deterministic():
    truth = DecisionParams(alpha=0.0, beta=(0.8, -1.2, 0.5), gamma={(0, 1): 0.7})
    ds = exhaustive_dataset(truth)
    a, b = fit(ds), fit(ds)
    assert a.to_dict() == b.to_dict()


def test_fit_flags_rank_deficiency_on_degenerate_dataset():
    fs = build_factor_set(3)
    config = FactorConfiguration((1, 0, 1))
    obs = tuple(Observation(config=config, level=VerbalLevel.from_ordinal(5)) for _ in range(6))
    ds = BehavioralDataset(factor_set=fs, observations=obs)
    model = fit(ds)
    assert model.diagnostics["rank_deficient"]
    assert model.diagnostics["rank"] < model.diagnostics["n_design_columns"]


def test_fit_sparsity_increases_with_l1():
    truth = DecisionParams(alpha=0.0, beta=(1.5, -1.0, 0.8, 0.3),
                           gamma={(0, 1): 0.05, (1, 2): -0.04, (2, 3): 0.6})
    ds = exhaustive_dataset(truth)
    zero_counts = []
    for lam in (0.1, 0.01, 0.001):
        model = fit(ds, EmConfig(lambda1=lam))
        n_pairs = 4 * 3 // 2
        zero_counts.append(n_pairs - len(model.params.gamma))
    assert zero_counts[0] >= zero_counts[1] >= zero_counts[2]


def test_fit_no_em_keeps_canonical_map():
    truth = DecisionParams(alpha=0.0, beta=(1.0, -0.8, 0.5), gamma={})
    model = fit(exhaustive_dataset(truth), ablation="no-em")
    assert model.map == canonical_map()
    assert model.diagnostics["ablation"] == "no-em"


def test_fit_no_inter_yields_empty_gamma():
    truth = DecisionParams(alpha=0.0, beta=(1.0, -0.8, 0.5), gamma={(0, 1): 0.9})
    model = fit(exhaustive_dataset(truth), ablation="no-inter")
    assert model.params.gamma == {}


def test_fit_rejects_unknown_ablation():
    truth = DecisionParams(alpha=0.0, beta=(1.0, -0.8), gamma={})
    ds = exhaustive_dataset(truth)
    with pytest.raises(ValidationError):
        fit(ds, ablation="no-such-thing")


def test_fit_label_noise_degrades_gracefully():
    truth = DecisionParams(alpha=0.0, beta=(1.2, -0.9, 0.7, -0.5), gamma={(0, 3): 0.6})
    f = all_configs(4)
    p_true = sigmoid(logits_matrix(truth, f))

    def rmse_at(eps):
        ds = exhaustive_dataset(truth, seed=5, label_noise=eps)
        model = fit(ds)
        return float(np.sqrt(np.mean((p_true - sigmoid(logits_matrix(model.params, f))) ** 2)))

    assert rmse_at(0.1) <= 2.5 * rmse_at(0.0) + 0.02


# --- TrainedModel and EmConfig -----------------------------------------------


def test_trained_model_round_trips():
    truth = DecisionParams(alpha=0.0, beta=(0.9, -0.6, 0.3), gamma={(1, 2): 0.5})
    model = fit(exhaustive_dataset(truth))
    again = TrainedModel.from_dict(model.to_dict())
    assert again.params == model.params
    assert again.map == model.map
    assert again.em_config == model.em_config
    assert again.dataset_hash == model.dataset_hash


def test_trained_model_rejects_decreasing_q_when_converged():
    truth = DecisionParams(alpha=0.0, beta=(0.9, -0.6), gamma={})
    model = fit(exhaustive_dataset(truth))
    bad = dict(model.diagnostics)
    bad["q_values"] = [0.0, -1.0]
    bad["converged"] = True
    with pytest.raises(ValidationError):
        TrainedModel(
            factor_set=model.factor_set,
            params=model.params,
            map=model.map,
            em_config=model.em_config,
            diagnostics=bad,
            dataset_hash=model.dataset_hash,
        )


def test_em_config_validation_and_round_trip():
    cfg = EmConfig(lambda1=0.2, inner_steps=50)
    assert EmConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        EmConfig(sigma_theta_sq=0.0)
    with pytest.raises(ValidationError):
        EmConfig(lambda1=-0.1)
    with pytest.raises(ValidationError):
        EmConfig(max_iters=0)


def test_with_params_appends_edit_history():
    truth = DecisionParams(alpha=0.0, beta=(0.9, -0.6), gamma={})
    model = fit(exhaustive_dataset(truth))
    edited = model.with_params(zero_params(2), {"op": "exclude", "factor": 0})
    assert edited.edit_history == ({"op": "exclude", "factor": 0},)
    assert model.edit_history == ()
