"""Inference pipeline: condition partitioning, joint sampling, marginalization."""

import itertools
import math

import numpy as np
import pytest

from factorlens.core import DecisionParams, FactorConfiguration, predict
from factorlens.em import EmConfig, TrainedModel
from factorlens.errors import DimensionError, ProtocolError, ValidationError
from factorlens.inference import (
    ConditionPartition,
    InferenceResult,
    determine_factors,
    infer,
    marginalize,
    sample_joint_completions,
)
from factorlens.prompts import FACTOR_DETERMINATION, MONTE_CARLO_SAMPLING
from factorlens.verbal import canonical_map

from conftest import ScriptedBackend, build_factor_set, build_synthetic


def random_params(n, seed):
    rng = np.random.default_rng(seed)
    beta = tuple(float(b) for b in rng.uniform(-2.0, 2.0, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = rng.choice(len(pairs), size=min(2, len(pairs)), replace=False)
    gamma = {pairs[i]: float(rng.uniform(-1.5, 1.5)) for i in chosen}
    return DecisionParams(alpha=float(rng.uniform(-0.5, 0.5)), beta=beta, gamma=gamma)


def make_model(params=None, n=3):
    if params is None:
        params = DecisionParams(alpha=0.0, beta=(1.2, -0.8, 0.5), gamma={(0, 1): 0.6})
    return TrainedModel(
        factor_set=build_factor_set(params.n),
        params=params,
        map=canonical_map(),
        em_config=EmConfig(),
        diagnostics={"converged": False},
        dataset_hash="test",
    )


def completion_law(m, rho):
    """Exact distribution of the synthetic sampler's m uncertain bits.

    The sampler flips one shared fair coin, then each bit copies it with
    probability sqrt(rho) and is an independent fair coin otherwise, so
    conditional on the coin the bits are iid with P(1 | coin=1) = (1+s)/2
    and P(1 | coin=0) = (1-s)/2 where s = sqrt(rho).
    """
    s = math.sqrt(rho)
    p1, p0 = (1 + s) / 2, (1 - s) / 2
    law = {}
    for pattern in itertools.product((0, 1), repeat=m):
        k = sum(pattern)
        law[pattern] = 0.5 * p1 ** k * (1 - p1) ** (m - k) \
            + 0.5 * p0 ** k * (1 - p0) ** (m - k)
    return law


def exact_marginal(params, partition, rho):
    """Full enumeration of completions weighted by the sampler's law."""
    uncertain = sorted(partition.uncertain)
    total = 0.0
    for pattern, weight in completion_law(len(uncertain), rho).items():
        values = [0] * partition.n
        for fid, bit in partition.observed.items():
            values[fid] = bit
        for fid, bit in zip(uncertain, pattern):
            values[fid] = bit
        total += weight * predict(params, FactorConfiguration(tuple(values)))
    return total


def synthetic_with_determinations(params, condition, table, **kwargs):
    return build_synthetic(params=params, determinations={condition: table}, **kwargs)


class TestConditionPartition:
    def test_round_trip(self):
        part = ConditionPartition(n=4, observed={0: 1, 3: 0},
                                  uncertain=frozenset({1, 2}),
                                  condition_text="late payment on record")
        again = ConditionPartition.from_dict(part.to_dict())
        assert again == part
        assert not part.fully_observed

    def test_rejects_overlap(self):
        with pytest.raises(ValidationError):
            ConditionPartition(n=3, observed={0: 1, 1: 0},
                               uncertain=frozenset({1, 2}), condition_text="x")

    def test_rejects_gap_in_coverage(self):
        with pytest.raises(ValidationError):
            ConditionPartition(n=3, observed={0: 1},
                               uncertain=frozenset({2}), condition_text="x")

    def test_rejects_bad_bit(self):
        with pytest.raises(ValidationError):
            ConditionPartition(n=2, observed={0: 2},
                               uncertain=frozenset({1}), condition_text="x")

    def test_observed_config_requires_full_observation(self):
        full = ConditionPartition(n=2, observed={0: 1, 1: 0},
                                  uncertain=frozenset(), condition_text="x")
        assert full.observed_config() == FactorConfiguration((1, 0))
        partial = ConditionPartition(n=2, observed={0: 1},
                                     uncertain=frozenset({1}), condition_text="x")
        with pytest.raises(ValidationError):
            partial.observed_config()


class TestInferenceResult:
    def test_rejects_probability_mean_mismatch(self):
        part = ConditionPartition(n=1, observed={0: 1}, uncertain=frozenset(),
                                  condition_text="")
        with pytest.raises(ValidationError):
            InferenceResult(probability=0.9, samples_used=2, standard_error=0.0,
                            per_sample_probs=(0.4, 0.6), partition=part)

    def test_rejects_length_mismatch(self):
        part = ConditionPartition(n=1, observed={0: 1}, uncertain=frozenset(),
                                  condition_text="")
        with pytest.raises(ValidationError):
            InferenceResult(probability=0.5, samples_used=3, standard_error=0.0,
                            per_sample_probs=(0.5, 0.5), partition=part)


class TestDetermineFactors:
    def test_partition_matches_scripted_table(self):
        condition = "the applicant has stable income"
        backend = synthetic_with_determinations(None, condition, {0: 1, 2: 0})
        fs = build_factor_set(3)
        part = determine_factors(backend, fs, condition)
        assert part.observed == {0: 1, 2: 0}
        assert part.uncertain == frozenset({1})
        assert part.condition_text == condition
        # one three-way query per factor, no more
        det = [t for t in backend.transcripts if t.template_id == FACTOR_DETERMINATION.id]
        assert len(det) == 3

    def test_all_factors_determined(self):
        condition = "everything is pinned down"
        backend = synthetic_with_determinations(None, condition, {0: 1, 1: 1, 2: 0})
        part = determine_factors(backend, build_factor_set(3), condition)
        assert part.fully_observed
        assert part.observed_config() == FactorConfiguration((1, 1, 0))

    def test_unparseable_answer_names_the_factor(self):
        # factor_0 answers cleanly; factor_1 is garbage twice (initial ask plus
        # one reprompt), which must surface as a protocol error naming it.
        backend = ScriptedBackend(script={
            FACTOR_DETERMINATION.id: ["true", "it depends", "hard to say"],
        })
        with pytest.raises(ProtocolError, match="factor_1"):
            determine_factors(backend, build_factor_set(2), "ambiguous condition")


class TestSampleJointCompletions:
    def test_rejects_nonpositive_count(self):
        part = ConditionPartition(n=3, observed={0: 1}, uncertain=frozenset({1, 2}),
                                  condition_text="x")
        with pytest.raises(ValidationError):
            sample_joint_completions(build_synthetic(), build_factor_set(3), part, 0)

    def test_rejects_dimension_mismatch(self):
        part = ConditionPartition(n=2, observed={0: 1}, uncertain=frozenset({1}),
                                  condition_text="x")
        with pytest.raises(DimensionError):
            sample_joint_completions(build_synthetic(), build_factor_set(3), part, 5)

    def test_fully_observed_shortcut_skips_oracle(self):
        part = ConditionPartition(n=3, observed={0: 1, 1: 0, 2: 1},
                                  uncertain=frozenset(), condition_text="x")
        backend = build_synthetic()
        samples = sample_joint_completions(backend, build_factor_set(3), part, 4)
        assert samples == [FactorConfiguration((1, 0, 1))] * 4
        assert backend.transcripts == []

    def test_observed_bits_never_altered(self):
        part = ConditionPartition(n=4, observed={1: 0, 3: 1},
                                  uncertain=frozenset({0, 2}), condition_text="x")
        backend = build_synthetic(params=random_params(4, 7),
                                  completion_correlation=0.3, rng_seed=11)
        samples = sample_joint_completions(backend, build_factor_set(4), part, 200)
        assert len(samples) == 200
        for config in samples:
            assert config.values[1] == 0
            assert config.values[3] == 1

    def test_full_correlation_locks_bits_together(self):
        part = ConditionPartition(n=3, observed={}, uncertain=frozenset({0, 1, 2}),
                                  condition_text="x")
        backend = build_synthetic(completion_correlation=1.0, rng_seed=5)
        for config in sample_joint_completions(backend, build_factor_set(3), part, 100):
            assert len(set(config.values)) == 1

    def test_pairwise_correlation_matches_requested_rho(self):
        # Copy-through-a-shared-coin with copy probability sqrt(rho) makes the
        # realized pairwise correlation rho itself: corr = 4 E[b_i b_j] - 1
        # for fair marginals.
        rho = 0.5
        part = ConditionPartition(n=3, observed={}, uncertain=frozenset({0, 1, 2}),
                                  condition_text="x")
        backend = build_synthetic(completion_correlation=rho, rng_seed=97)
        bits = np.array([
            c.values
            for c in sample_joint_completions(backend, build_factor_set(3), part, 5000)
        ], dtype=float)
        assert abs(bits.mean() - 0.5) < 0.03
        for i, j in [(0, 1), (0, 2), (1, 2)]:
            corr = 4.0 * float((bits[:, i] * bits[:, j]).mean()) - 1.0
            assert abs(corr - rho) <= 0.05


class TestMarginalize:
    def test_rejects_empty_sample_list(self):
        with pytest.raises(ValidationError):
            marginalize(make_model(), [])

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            marginalize(make_model(), [FactorConfiguration((1, 0))])

    def test_identical_samples_give_zero_se(self):
        model = make_model()
        config = FactorConfiguration((1, 0, 1))
        result = marginalize(model, [config] * 6)
        assert result.probability == predict(model.params, config)
        assert result.standard_error == 0.0
        assert result.samples_used == 6

    def test_single_sample_has_no_se(self):
        model = make_model()
        result = marginalize(model, [FactorConfiguration((0, 1, 0))])
        assert result.standard_error is None
        assert result.samples_used == 1

    def test_two_sample_hand_average(self):
        model = make_model()
        a, b = FactorConfiguration((1, 1, 0)), FactorConfiguration((0, 0, 1))
        pa, pb = predict(model.params, a), predict(model.params, b)
        result = marginalize(model, [a, b])
        assert abs(result.probability - (pa + pb) / 2) < 1e-12
        # sample std with the unbiased divisor is |pa-pb|/sqrt(2); SE divides
        # by sqrt(2) again.
        assert abs(result.standard_error - abs(pa - pb) / 2) < 1e-12

    def test_permutation_invariance(self):
        model = make_model()
        rng = np.random.default_rng(3)
        samples = [FactorConfiguration(tuple(rng.integers(0, 2, 3))) for _ in range(40)]
        base = marginalize(model, samples)
        rng.shuffle(samples)
        shuffled = marginalize(model, samples)
        assert abs(base.probability - shuffled.probability) < 1e-12
        assert abs(base.standard_error - shuffled.standard_error) < 1e-12

    def test_partition_reconstructed_from_agreement(self):
        model = make_model()
        samples = [FactorConfiguration((1, 0, 0)), FactorConfiguration((1, 1, 0)),
                   FactorConfiguration((1, 0, 0))]
        result = marginalize(model, samples)
        assert result.partition.observed == {0: 1, 2: 0}
        assert result.partition.uncertain == frozenset({1})


class TestMonteCarloAccuracy:
    def test_law_oracle_is_a_distribution(self):
        for rho in (0.0, 0.3, 1.0):
            law = completion_law(3, rho)
            assert abs(sum(law.values()) - 1.0) < 1e-12
        uniform = completion_law(2, 0.0)
        assert all(abs(w - 0.25) < 1e-12 for w in uniform.values())

    @pytest.mark.parametrize("n,seed", [(4, 21), (6, 22)])
    def test_estimate_within_3se_of_exhaustive(self, n, seed):
        rho = 0.5
        params = random_params(n, seed)
        model = make_model(params)
        condition = "partially specified case"
        backend = synthetic_with_determinations(
            params, condition, {0: 1, 1: 0},
            completion_correlation=rho, rng_seed=seed,
        )
        result = infer(model, backend, condition, t=400)
        exact = exact_marginal(params, result.partition, rho)
        assert result.standard_error is not None and result.standard_error > 0
        assert abs(result.probability - exact) <= 3 * result.standard_error

    def test_batch_means_unbiased_against_enumeration(self):
        # Surrogate for unbiasedness: the grand mean of R independent batch
        # estimates must sit within 4 pooled-SE/sqrt(R) of the enumerated value.
        n, rho, t, reps = 4, 0.0, 25, 200
        params = random_params(n, 13)
        model = make_model(params)
        part = ConditionPartition(n=n, observed={0: 1},
                                  uncertain=frozenset({1, 2, 3}),
                                  condition_text="x")
        backend = build_synthetic(params=params, rng_seed=31)
        estimates, variances = [], []
        for _ in range(reps):
            samples = sample_joint_completions(backend, model.factor_set, part, t)
            result = marginalize(model, samples, part)
            estimates.append(result.probability)
            variances.append(result.standard_error ** 2)
        pooled_se = math.sqrt(float(np.mean(variances)))
        exact = exact_marginal(params, part, rho)
        assert abs(float(np.mean(estimates)) - exact) <= 4 * pooled_se / math.sqrt(reps)

    def test_se_shrinks_like_root_t(self):
        # Quadrupling the sample count should halve the standard error; the
        # ratio of mean SEs over 50 repetitions must land within 25% of 2.
        params = random_params(3, 17)
        model = make_model(params)
        condition = "one bit known"
        backend = synthetic_with_determinations(params, condition, {0: 1},
                                                rng_seed=1234)
        se_small, se_large = [], []
        for _ in range(50):
            se_small.append(infer(model, backend, condition, t=10).standard_error)
            se_large.append(infer(model, backend, condition, t=40).standard_error)
        ratio = float(np.mean(se_small)) / float(np.mean(se_large))
        assert 1.5 <= ratio <= 2.5


class TestInfer:
    def test_fully_determined_condition_is_exact_and_t_independent(self):
        params = random_params(3, 5)
        model = make_model(params)
        condition = "all three bits pinned"
        table = {0: 1, 1: 0, 2: 1}
        expected = predict(params, FactorConfiguration((1, 0, 1)))
        for t in (7, 50):
            backend = synthetic_with_determinations(params, condition, table)
            result = infer(model, backend, condition, t=t)
            assert result.probability == expected
            assert result.standard_error == 0.0
            sampling = [tr for tr in backend.transcripts
                        if tr.template_id == MONTE_CARLO_SAMPLING.id]
            assert sampling == []

    def test_deterministic_given_backend_seed(self):
        params = random_params(4, 9)
        model = make_model(params)
        condition = "two bits open"
        table = {0: 0, 3: 1}

        def run():
            backend = synthetic_with_determinations(
                params, condition, table, completion_correlation=0.2, rng_seed=77,
            )
            return infer(model, backend, condition, t=30).to_dict()

        assert run() == run()

    def test_rejects_unknown_ablation(self):
        with pytest.raises(ValidationError):
            infer(make_model(), build_synthetic(), "x", ablation="mc-off")

    def test_no_mc_output_is_t_independent(self):
        params = random_params(3, 11)
        model = make_model(params)
        condition = "one bit known"
        table = {1: 1}
        results = []
        for t in (3, 400):
            backend = synthetic_with_determinations(params, condition, table)
            results.append(infer(model, backend, condition, t=t, ablation="no-mc"))
        assert results[0].to_dict() == results[1].to_dict()
        assert results[0].samples_used == 1
        assert results[0].standard_error is None

    def test_no_mc_uses_seeded_fair_coin_assignment(self):
        params = random_params(3, 11)
        model = make_model(params)
        condition = "one bit known"
        backend = synthetic_with_determinations(params, condition, {1: 1})
        result = infer(model, backend, condition, ablation="no-mc", seed=4)
        rng = np.random.default_rng(4)
        bits = {1: 1}
        for fid in (0, 2):  # sorted uncertain ids
            bits[fid] = int(rng.integers(0, 2))
        expected = FactorConfiguration(tuple(bits[i] for i in range(3)))
        assert result.probability == predict(params, expected)
        # no sampling prompts were issued
        sampling = [tr for tr in backend.transcripts
                    if tr.template_id == MONTE_CARLO_SAMPLING.id]
        assert sampling == []
