import math

import numpy as np
import pytest

from jcas_lab.bayes import (
    Belief,
    DiscreteJcasModel,
    belief_predict,
    belief_update,
    bruteforce_open_loop_tradeoff,
    bruteforce_posterior,
    capacity_objective,
    load_discrete_model,
    optimal_estimate,
    sensing_cost,
)
from jcas_lab.errors import EnumerationLimitError, EvidenceError, SchemaError

from conftest import random_discrete_model, toy_model_path


@pytest.fixture(scope="module")
def toy():
    return load_discrete_model(toy_model_path())


def uniform_channel_model(markov, initial, distortion):
    """2-state model whose measurement carries no information."""
    channel = np.full((2, 2, 2, 2), 0.25)
    return DiscreteJcasModel(
        channel=channel, markov=markov, initial=initial, distortion=distortion
    )


HAMMING = np.array([[0.0, 1.0], [1.0, 0.0]])


class TestBeliefOps:
    def test_predict_identity_kernel(self, toy):
        b = Belief(np.array([0.3, 0.7]))
        out = belief_predict(b, toy)
        np.testing.assert_allclose(out.probabilities, [0.3, 0.7], atol=1e-15)
        assert out.time_index == 1

    def test_predict_doubly_stochastic_preserves_uniform(self):
        model = uniform_channel_model(
            np.array([[0.6, 0.4], [0.4, 0.6]]), np.array([0.5, 0.5]), HAMMING
        )
        out = belief_predict(Belief(np.array([0.5, 0.5])), model)
        np.testing.assert_allclose(out.probabilities, [0.5, 0.5], atol=1e-15)

    def test_predict_matrix_vector_oracle(self):
        model = uniform_channel_model(
            np.array([[0.9, 0.1], [0.2, 0.8]]), np.array([0.5, 0.5]), HAMMING
        )
        out = belief_predict(Belief(np.array([1.0, 0.0])), model)
        np.testing.assert_allclose(out.probabilities, [0.9, 0.1], atol=1e-15)

    def test_update_uninformative_likelihood(self):
        model = uniform_channel_model(np.eye(2), np.array([0.5, 0.5]), HAMMING)
        b = Belief(np.array([0.3, 0.7]))
        out = belief_update(b, 0, 1, model)
        np.testing.assert_allclose(out.probabilities, [0.3, 0.7], atol=1e-15)

    def test_update_uniform_prior_takes_likelihood(self, toy):
        # toy x=0 reveals the state: likelihood rows are (1,0)/(0,1)
        out = belief_update(Belief(np.array([0.5, 0.5])), 0, 0, toy)
        np.testing.assert_allclose(out.probabilities, [1.0, 0.0], atol=1e-15)

    def test_update_bayes_rule_oracle(self):
        # likelihoods (0.5, 1.0) against prior (0.9, 0.1)
        channel = np.zeros((1, 2, 1, 2))
        channel[0, 0] = [[0.5, 0.5]]
        channel[0, 1] = [[0.0, 1.0]]
        model = DiscreteJcasModel(
            channel=channel, markov=np.eye(2), initial=np.array([0.9, 0.1]), distortion=HAMMING
        )
        out = belief_update(Belief(np.array([0.9, 0.1])), 0, 1, model)
        np.testing.assert_allclose(out.probabilities, [0.45 / 0.55, 0.10 / 0.55], atol=1e-12)

    def test_update_zero_evidence_raises(self, toy):
        with pytest.raises(EvidenceError):
            belief_update(Belief(np.array([1.0, 0.0])), 0, 1, toy)


class TestOptimalEstimate:
    def test_hamming_picks_mode(self, toy):
        idx, cost = optimal_estimate(Belief(np.array([0.2, 0.8])), toy)
        assert idx == 1
        assert cost == pytest.approx(0.2, abs=1e-15)

    def test_point_mass(self, toy):
        idx, cost = optimal_estimate(Belief(np.array([0.0, 1.0])), toy)
        assert idx == 1 and cost == 0.0

    def test_asymmetric_cost_oracle(self):
        model = uniform_channel_model(
            np.eye(2), np.array([0.5, 0.5]), np.array([[0.0, 1.0], [4.0, 0.0]])
        )
        idx, cost = optimal_estimate(Belief(np.array([0.6, 0.4])), model)
        assert idx == 1  # 0.6 beats 1.6
        assert cost == pytest.approx(0.6, abs=1e-15)

    def test_tie_breaks_to_smallest_index(self):
        model = uniform_channel_model(np.eye(2), np.array([0.5, 0.5]), HAMMING)
        idx, _ = optimal_estimate(Belief(np.array([0.5, 0.5])), model)
        assert idx == 0

    def test_never_beaten_by_fixed_alternative(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            model = random_discrete_model(rng)
            b = rng.random(model.ns) + 0.01
            belief = Belief(b / b.sum())
            idx, cost = optimal_estimate(belief, model)
            for alt in range(model.n_estimates):
                assert cost <= belief.probabilities @ model.distortion[:, alt] + 1e-15


class TestBruteforcePosterior:
    def test_empty_sequences_return_prior(self, toy):
        out = bruteforce_posterior([], [], toy)
        np.testing.assert_allclose(out.probabilities, toy.initial, atol=1e-15)

    def test_deterministic_chain_point_mass(self, toy):
        # identity kernel + noiseless sensing input pins the state
        out = bruteforce_posterior([0, 0], [1, 1], toy)
        np.testing.assert_allclose(out.probabilities, [0.0, 1.0], atol=1e-15)

    def test_matches_recursive_composition(self):
        rng = np.random.default_rng(31)
        worst = 0.0
        for _ in range(30):
            model = random_discrete_model(rng)
            steps = int(rng.integers(1, 6))
            xs = rng.integers(0, model.nx, steps).tolist()
            zs = rng.integers(0, model.nz, steps).tolist()
            brute = bruteforce_posterior(xs, zs, model)
            belief = Belief(model.initial.copy(), 0)
            for x, z in zip(xs, zs):
                belief = belief_update(belief_predict(belief, model), x, z, model)
            worst = max(worst, float(np.max(np.abs(belief.probabilities - brute.probabilities))))
        assert worst < 1e-12

    def test_capacity_error_on_oversized_instance(self):
        channel = np.full((2, 6, 2, 2), 0.25)
        markov = np.full((6, 6), 1.0 / 6.0)
        initial = np.full(6, 1.0 / 6.0)
        model = DiscreteJcasModel(
            channel=channel, markov=markov, initial=initial, distortion=np.zeros((6, 6))
        )
        with pytest.raises(EnumerationLimitError):
            bruteforce_posterior([0], [0], model)
        with pytest.raises(EnumerationLimitError):
            bruteforce_posterior([0] * 9, [0] * 9, random_discrete_model(np.random.default_rng(0)))


class TestSensingCost:
    def test_zero_distortion_function(self):
        model = uniform_channel_model(np.eye(2), np.array([0.5, 0.5]), np.zeros((2, 2)))
        assert sensing_cost([0, 1], model) == 0.0

    def test_uninformative_input_costs_half(self, toy):
        # talking symbol: mode-guess risk 1/2 at every index
        assert sensing_cost([1], toy) == pytest.approx(0.5, abs=1e-12)
        assert sensing_cost([1, 1], toy) == pytest.approx(0.5, abs=1e-12)

    def test_noiseless_sensing_leaves_only_prior_term(self, toy):
        # d_1 = d_2 = 0 exactly; only E[d_0] = 1/2 survives the average
        assert sensing_cost([0, 0], toy) == pytest.approx(0.5 / 3.0, abs=1e-12)

    def test_mixed_sequence(self, toy):
        # sense then talk: d_0 = .5, d_1 = 0, d_2 = 0 (state frozen, already known)
        assert sensing_cost([0, 1], toy) == pytest.approx(0.5 / 3.0, abs=1e-12)

    def test_invariant_to_y_relabeling(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            model = random_discrete_model(rng)
            perm = rng.permutation(model.ny)
            relabeled = DiscreteJcasModel(
                channel=model.channel[:, :, perm, :],
                markov=model.markov,
                initial=model.initial,
                distortion=model.distortion,
            )
            xs = rng.integers(0, model.nx, 2).tolist()
            assert sensing_cost(xs, model) == pytest.approx(
                sensing_cost(xs, relabeled), abs=1e-14
            )

    def test_oversized_instance_rejected(self):
        rng = np.random.default_rng(1)
        model = random_discrete_model(rng, max_size=3)
        with pytest.raises(EnumerationLimitError):
            sensing_cost([0] * 12, model)


class TestCapacityObjective:
    def test_output_independent_of_input_is_zero(self):
        model = uniform_channel_model(np.eye(2), np.array([0.5, 0.5]), HAMMING)
        assert capacity_objective([[0.5, 0.5]], model, 1) == pytest.approx(0.0, abs=1e-15)

    def test_identity_channel_gives_ln2(self):
        channel = np.zeros((2, 2, 2, 2))
        for x in range(2):
            for s in range(2):
                channel[x, s, x, :] = 0.5  # y = x, z uniform
        model = DiscreteJcasModel(
            channel=channel, markov=np.eye(2), initial=np.array([0.5, 0.5]), distortion=HAMMING
        )
        got = capacity_objective([[0.5, 0.5]], model, 1)
        assert got == pytest.approx(math.log(2.0), abs=1e-12)

    def test_binary_symmetric_channel_oracle(self):
        # ln 2 - Hb(0.1) = 0.3680642071684971 nats
        eps = 0.1
        channel = np.zeros((2, 2, 2, 2))
        for x in range(2):
            for s in range(2):
                channel[x, s, x, :] = (1 - eps) / 2.0
                channel[x, s, 1 - x, :] = eps / 2.0
        model = DiscreteJcasModel(
            channel=channel, markov=np.eye(2), initial=np.array([0.5, 0.5]), distortion=HAMMING
        )
        got = capacity_objective(np.array([0.5, 0.5]), model, 3)
        assert got == pytest.approx(0.3680642071684971, abs=1e-12)

    def test_concave_along_random_segments(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            model = random_discrete_model(rng)
            p = rng.random(model.nx) + 0.01
            q = rng.random(model.nx) + 0.01
            p /= p.sum()
            q /= q.sum()
            mid = capacity_objective([(p + q) / 2.0], model, 1)
            ends = 0.5 * (
                capacity_objective([p], model, 1) + capacity_objective([q], model, 1)
            )
            assert mid >= ends - 1e-9


class TestGridTradeoff:
    def test_budget_above_worst_case_is_unconstrained(self, toy):
        # costs are 0.25 and 0.5, so D = 0.6 frees the search entirely
        res = bruteforce_open_loop_tradeoff(toy, 0.6, 1, 0.05)
        assert res.feasible
        assert res.rate == pytest.approx(math.log(1.25), abs=1e-12)
        assert res.input_distributions[0][1] == pytest.approx(0.6, abs=1e-12)

    def test_binding_budget_lands_on_half(self, toy):
        # cost(p) = 0.25 + 0.25 p binds at p = 0.5 for D = 0.375
        res = bruteforce_open_loop_tradeoff(toy, 0.375, 1, 0.001)
        assert res.feasible
        assert res.input_distributions[0][1] == pytest.approx(0.5, abs=1e-9)
        assert res.rate == pytest.approx(0.21576155433883565, abs=1e-12)

    def test_budget_below_floor_is_infeasible(self, toy):
        res = bruteforce_open_loop_tradeoff(toy, 0.1, 1, 0.05)
        assert not res.feasible
        assert res.rate is None and res.n_feasible == 0

    def test_rate_nondecreasing_in_budget(self, toy):
        budgets = [0.26, 0.3, 0.35, 0.4, 0.5, 0.6]
        rates = []
        for d in budgets:
            res = bruteforce_open_loop_tradeoff(toy, d, 1, 0.05)
            assert res.feasible
            rates.append(res.rate)
        assert all(r1 <= r2 + 1e-12 for r1, r2 in zip(rates, rates[1:]))

    def test_two_step_search_runs(self, toy):
        res = bruteforce_open_loop_tradeoff(toy, 0.4, 2, 0.25)
        assert res.feasible
        assert res.input_distributions.shape == (2, 2)

    def test_n_out_of_range(self, toy):
        with pytest.raises(EnumerationLimitError):
            bruteforce_open_loop_tradeoff(toy, 0.5, 4, 0.1)


class TestModelLoading:
    def test_toy_tables(self, toy):
        assert (toy.nx, toy.ns, toy.ny, toy.nz) == (2, 2, 2, 2)
        np.testing.assert_allclose(toy.markov, np.eye(2), atol=1e-15)
        np.testing.assert_allclose(toy.initial, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(toy.z_likelihood()[0, 0], [1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(toy.y_likelihood()[1, 0], [0.0, 1.0], atol=1e-15)

    def test_row_sum_error_names_row(self, tmp_path):
        bad = toy_model_path()
        text = open(bad).read().replace("0 1 : 0.0 0.5 0.0 0.5", "0 1 : 0.0 0.5 0.0 0.48")
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(SchemaError, match=r"channel row \(x=0, s=1\)"):
            load_discrete_model(path)

    def test_missing_section(self, tmp_path):
        path = tmp_path / "missing.txt"
        path.write_text("[alphabets]\nX = 2\nS = 2\nZ = 2\nY = 2\n")
        with pytest.raises(SchemaError, match="missing"):
            load_discrete_model(path)

    def test_content_before_section(self, tmp_path):
        path = tmp_path / "stray.txt"
        path.write_text("X = 2\n")
        with pytest.raises(SchemaError, match="line 1"):
            load_discrete_model(path)

    def test_ctor_rejects_negative_probability(self):
        channel = np.full((1, 2, 1, 2), 0.5)
        channel[0, 0, 0, 0] = -0.1
        channel[0, 0, 0, 1] = 1.1
        with pytest.raises(SchemaError, match="negative"):
            DiscreteJcasModel(
                channel=channel, markov=np.eye(2), initial=np.array([0.5, 0.5]), distortion=HAMMING
            )

    def test_belief_must_normalize(self):
        with pytest.raises(Exception):
            Belief(np.array([0.5, 0.4]))
