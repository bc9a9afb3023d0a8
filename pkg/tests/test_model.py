import math

import numpy as np
import pytest

from chainmix import (
    CategorySet,
    ChainParams,
    ConvergenceError,
    MixtureModel,
    Sequence,
    SequenceDataset,
    corpus_log_likelihood,
    log_prob_matrix,
    mixture_log_prob,
    sequence_log_prob,
    stationary_distribution,
)
from conftest import make_seq, random_dataset, random_model
from oracles import mixture_probability, sequence_probability, two_state_stationary

TWO_STATE = ChainParams([0.5, 0.5], [[0.9, 0.1], [0.2, 0.8]])


class TestSequenceLogProb:
    def test_uniform_chain_is_length_times_log_uniform(self):
        chain = ChainParams([0.25] * 4, np.full((4, 4), 0.25))
        got = sequence_log_prob(chain, make_seq((2, 0, 3)))
        assert got == pytest.approx(3 * math.log(0.25), abs=1e-12)

    def test_hand_product(self):
        got = sequence_log_prob(TWO_STATE, make_seq((0, 0, 1)))
        assert got == pytest.approx(math.log(0.5 * 0.9 * 0.1), abs=1e-12)
        assert got == pytest.approx(math.log(0.045), abs=1e-12)

    def test_length_one_sequence_is_start_prob_only(self):
        assert sequence_log_prob(TWO_STATE, make_seq((1,))) == math.log(0.5)

    def test_zero_start_factor_gives_neg_inf(self):
        chain = ChainParams([1.0, 0.0], [[0.5, 0.5], [0.5, 0.5]])
        assert sequence_log_prob(chain, make_seq((1, 0))) == -np.inf

    def test_zero_transition_factor_gives_neg_inf(self):
        chain = ChainParams([0.5, 0.5], [[1.0, 0.0], [0.5, 0.5]])
        assert sequence_log_prob(chain, make_seq((0, 1))) == -np.inf

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError, match="state"):
            sequence_log_prob(TWO_STATE, make_seq((0, 3)))

    def test_matches_oracle_on_random_chain(self, rng):
        model = random_model(rng, 1, 4, floor=0.05)
        chain = model.clusters[0]
        states = (1, 3, 3, 0, 2, 1)
        expected = math.log(
            sequence_probability(chain.start_probs.tolist(), chain.trans_probs.tolist(), states)
        )
        assert sequence_log_prob(chain, make_seq(states)) == pytest.approx(expected, abs=1e-12)


class TestMixtureLogProb:
    def test_single_cluster_degenerates_to_chain(self):
        model = MixtureModel(CategorySet(("x", "y")), [1.0], (TWO_STATE,))
        seq = make_seq((0, 1, 1))
        assert mixture_log_prob(model, seq) == pytest.approx(
            sequence_log_prob(TWO_STATE, seq), abs=1e-12
        )

    def test_mixture_of_identical_chains(self):
        model = MixtureModel(CategorySet(("x", "y")), [0.5, 0.5], (TWO_STATE, TWO_STATE))
        seq = make_seq((0, 0, 1))
        assert mixture_log_prob(model, seq) == pytest.approx(
            sequence_log_prob(TWO_STATE, seq), abs=1e-12
        )

    def test_hand_total_probability(self):
        # Chain probabilities for (0, 1) are 0.5 * 0.09 = 0.045 and 0.5 * 0.004 = 0.002.
        chain_a = ChainParams([0.5, 0.5], [[0.91, 0.09], [0.5, 0.5]])
        chain_b = ChainParams([0.5, 0.5], [[0.996, 0.004], [0.5, 0.5]])
        model = MixtureModel(CategorySet(("x", "y")), [0.3, 0.7], (chain_a, chain_b))
        got = mixture_log_prob(model, make_seq((0, 1)))
        assert got == pytest.approx(math.log(0.3 * 0.045 + 0.7 * 0.002), abs=1e-12)
        assert got == pytest.approx(math.log(0.0149), abs=1e-10)

    def test_all_clusters_zero_gives_neg_inf(self):
        dead = ChainParams([1.0, 0.0], [[1.0, 0.0], [0.5, 0.5]])
        model = MixtureModel(CategorySet(("x", "y")), [0.5, 0.5], (dead, dead))
        assert mixture_log_prob(model, make_seq((1,))) == -np.inf

    def test_bounds_from_components(self, rng):
        model = random_model(rng, 3, 4, floor=0.05)
        seq = make_seq((0, 2, 1, 3, 3))
        parts = np.array(
            [
                math.log(model.weights[i]) + sequence_log_prob(model.clusters[i], seq)
                for i in range(3)
            ]
        )
        got = mixture_log_prob(model, seq)
        assert parts.max() - 1e-12 <= got <= parts.max() + math.log(3) + 1e-12


class TestCorpusLogLikelihood:
    def test_single_sequence_equals_mixture_log_prob(self, rng):
        model = random_model(rng, 2, 3, floor=0.05)
        seq = make_seq((0, 2, 1))
        data = SequenceDataset(model.categories, (seq,))
        assert corpus_log_likelihood(model, data) == pytest.approx(
            mixture_log_prob(model, seq), abs=1e-12
        )

    def test_duplicated_corpus_doubles_value(self, rng):
        model = random_model(rng, 2, 3, floor=0.05)
        data = random_dataset(rng, 3, 6)
        doubled = SequenceDataset(model.categories, data.sequences + data.sequences)
        base = corpus_log_likelihood(model, SequenceDataset(model.categories, data.sequences))
        assert corpus_log_likelihood(model, doubled) == pytest.approx(2 * base, rel=1e-12)

    def test_uniform_model_counts_factors(self, rng):
        n_cats = 4
        uniform = ChainParams(np.full(n_cats, 0.25), np.full((n_cats, n_cats), 0.25))
        model = MixtureModel(
            CategorySet(tuple("wxyz")), [0.5, 0.5], (uniform, uniform)
        )
        data = random_dataset(rng, n_cats, 9)
        total_factors = sum(len(seq) for seq in data.sequences)
        assert corpus_log_likelihood(model, data) == pytest.approx(
            total_factors * math.log(0.25), rel=1e-12
        )

    def test_empty_dataset_raises(self, cats4):
        model = MixtureModel(
            cats4, [1.0], (ChainParams(np.full(4, 0.25), np.full((4, 4), 0.25)),)
        )
        with pytest.raises(ValueError, match="empty"):
            corpus_log_likelihood(model, SequenceDataset(cats4, ()))

    def test_matches_plain_python_oracle(self, rng):
        model = random_model(rng, 3, 4, floor=0.05)
        data = random_dataset(rng, 4, 15)
        chains = [(c.start_probs.tolist(), c.trans_probs.tolist()) for c in model.clusters]
        expected = sum(
            math.log(mixture_probability(model.weights.tolist(), chains, seq.states))
            for seq in data.sequences
        )
        assert corpus_log_likelihood(model, data) == pytest.approx(expected, rel=1e-12)


class TestLogProbMatrix:
    def test_matches_scalar_path(self, rng):
        model = random_model(rng, 3, 4, floor=0.02)
        data = random_dataset(rng, 4, 20)
        matrix = log_prob_matrix(model, data)
        for s, seq in enumerate(data.sequences):
            for i, chain in enumerate(model.clusters):
                assert matrix[s, i] == pytest.approx(sequence_log_prob(chain, seq), abs=1e-12)

    def test_neg_inf_where_zero_factor_exercised(self):
        chain = ChainParams([1.0, 0.0], [[0.5, 0.5], [1.0, 0.0]])
        model = MixtureModel(CategorySet(("x", "y")), [1.0], (chain,))
        data = SequenceDataset(model.categories, (make_seq((0, 1)), make_seq((1, 0))))
        matrix = log_prob_matrix(model, data)
        assert np.isfinite(matrix[0, 0])  # start 0, transition 0->1 both positive
        assert matrix[1, 0] == -np.inf  # start state 1 has probability zero

    def test_threaded_evaluation_agrees(self, rng):
        model = random_model(rng, 3, 5, floor=0.02)
        data = random_dataset(rng, 5, 64)
        single = corpus_log_likelihood(model, data, threads=1)
        multi = corpus_log_likelihood(model, data, threads=4)
        assert multi == pytest.approx(single, abs=1e-10)

    def test_vocabulary_size_mismatch_raises(self, rng):
        model = random_model(rng, 2, 3, floor=0.05)
        data = random_dataset(rng, 4, 3)
        with pytest.raises(ValueError, match="categories"):
            log_prob_matrix(model, data)


class TestStationaryDistribution:
    def test_uniform_rows_give_uniform(self):
        chain = ChainParams(np.full(5, 0.2), np.full((5, 5), 0.2))
        assert stationary_distribution(chain) == pytest.approx(np.full(5, 0.2), abs=1e-12)

    def test_two_state_hand_solution(self):
        got = stationary_distribution(TWO_STATE, tol=1e-12)
        assert got == pytest.approx([2 / 3, 1 / 3], abs=1e-10)
        assert got == pytest.approx(
            two_state_stationary([[0.9, 0.1], [0.2, 0.8]]), abs=1e-10
        )

    def test_periodic_permutation_chain_raises(self):
        swap = ChainParams([0.5, 0.5], [[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ConvergenceError) as excinfo:
            stationary_distribution(swap, max_iters=500)
        err = excinfo.value
        assert err.residual > 1e-10
        assert err.last_iterate.shape == (2,)

    def test_identity_chain_returns_a_fixed_point(self):
        chain = ChainParams([0.5, 0.5], np.eye(2))
        got = stationary_distribution(chain)
        assert np.max(np.abs(got @ chain.trans_probs - got)) <= 1e-10

    def test_random_ergodic_chains_satisfy_residual(self, rng):
        for _ in range(25):
            n_cats = int(rng.integers(2, 9))
            trans = rng.random((n_cats, n_cats)) + 0.05
            trans /= trans.sum(axis=1, keepdims=True)
            chain = ChainParams(np.full(n_cats, 1.0 / n_cats), trans)
            pi = stationary_distribution(chain, tol=1e-10)
            assert np.max(np.abs(pi @ trans - pi)) <= 1e-10
            assert abs(pi.sum() - 1.0) <= 1e-12

    def test_bad_tol_raises(self):
        with pytest.raises(ValueError, match="tol"):
            stationary_distribution(TWO_STATE, tol=0.0)


class TestTypeInvariants:
    def test_category_names_must_be_unique(self):
        with pytest.raises(ValueError, match="unique"):
            CategorySet(("a", "a", "b"))

    def test_category_names_must_be_non_empty(self):
        with pytest.raises(ValueError, match="non-empty"):
            CategorySet(("a", "", "b"))

    def test_at_least_two_categories(self):
        with pytest.raises(ValueError, match="at least 2"):
            CategorySet(("solo",))

    def test_sequence_must_have_states(self):
        with pytest.raises(ValueError, match="at least one"):
            Sequence(user="u", city="c", week="2010-W01", states=())

    def test_dataset_rejects_out_of_range_states(self, cats4):
        with pytest.raises(ValueError, match="state"):
            SequenceDataset(cats4, (make_seq((0, 4)),))

    def test_chain_rejects_bad_row_sums(self):
        with pytest.raises(ValueError, match="sums to"):
            ChainParams([0.6, 0.6], [[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ValueError, match="sums to"):
            ChainParams([0.5, 0.5], [[0.7, 0.5], [0.5, 0.5]])

    def test_chain_rejects_out_of_range_entries(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            ChainParams([1.5, -0.5], [[0.5, 0.5], [0.5, 0.5]])

    def test_mixture_rejects_bad_weights(self, cats4):
        chain = ChainParams(np.full(4, 0.25), np.full((4, 4), 0.25))
        with pytest.raises(ValueError, match="sums to"):
            MixtureModel(cats4, [0.6, 0.6], (chain, chain))
        with pytest.raises(ValueError, match="per mixing weight"):
            MixtureModel(cats4, [0.5, 0.5], (chain,))

    def test_mixture_rejects_dimension_mismatch(self, cats4):
        chain = ChainParams([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(ValueError, match="vocabulary"):
            MixtureModel(cats4, [1.0], (chain,))

    def test_arrays_are_read_only(self):
        with pytest.raises(ValueError):
            TWO_STATE.trans_probs[0, 0] = 0.0


class TestModelJson:
    def test_round_trip_is_exact(self, rng):
        model = random_model(rng, 3, 5)
        restored = MixtureModel.from_json(model.to_json())
        assert restored.categories.names == model.categories.names
        assert np.array_equal(restored.weights, model.weights)
        for got, expected in zip(restored.clusters, model.clusters):
            assert np.array_equal(got.start_probs, expected.start_probs)
            assert np.array_equal(got.trans_probs, expected.trans_probs)

    def test_documented_keys(self, rng):
        import json

        doc = json.loads(random_model(rng, 2, 3).to_json())
        assert set(doc) == {"categories", "K", "p", "clusters"}
        assert set(doc["clusters"][0]) == {"f", "T"}

    def test_inconsistent_cluster_count_rejected(self, rng):
        import json

        doc = json.loads(random_model(rng, 2, 3).to_json())
        doc["K"] = 3
        with pytest.raises(ValueError, match="K=3"):
            MixtureModel.from_json(json.dumps(doc))
