"""
Tests for Bayesian phonon estimation in src/ionsplit/estimate.py
"""

import math

import numpy as np
import pytest

from ionsplit.errors import IdentifiabilityError
from ionsplit.estimate import (
    PARAMETER_NAMES,
    McmcConfig,
    PriorSpec,
    RabiDataset,
    RabiParameters,
    RabiRecord,
    coverage_study,
    log_likelihood,
    run_mcmc,
    synthesize_dataset,
)
from ionsplit.phonons import RabiModel

OMEGA = 2 * math.pi * 100e3
TRUTH = RabiParameters(n_th=2.0, n_coh=5.0, omega=OMEGA)
TIMES = np.linspace(0.0, 60e-6, 31)


@pytest.fixture
def model():
    return RabiModel(omega=OMEGA, eta=0.23)


@pytest.fixture
def priors():
    return PriorSpec.around(OMEGA, cap=200.0)


@pytest.fixture(scope="module")
def expected_data():
    return synthesize_dataset(TRUTH, (0, 1, -1), TIMES, expected=True)


class TestDataTypes:
    """Tests for Rabi records, datasets and priors"""

    def test_record_validation(self):
        with pytest.raises(ValueError):
            RabiRecord(dn=0, t=1e-6, successes=201, shots=200)
        with pytest.raises(ValueError):
            RabiRecord(dn=0, t=-1e-6, successes=1)
        with pytest.raises(ValueError):
            RabiRecord(dn=0, t=1e-6, successes=0, shots=0)

    def test_grouping(self):
        data = RabiDataset(
            (
                RabiRecord(dn=1, t=2e-6, successes=3),
                RabiRecord(dn=0, t=1e-6, successes=5),
                RabiRecord(dn=1, t=4e-6, successes=7),
            )
        )
        assert len(data) == 3
        assert data.transitions == (0, 1)
        times, successes, shots = data.grouped()[1]
        np.testing.assert_array_equal(times, [2e-6, 4e-6])
        np.testing.assert_array_equal(successes, [3.0, 7.0])
        np.testing.assert_array_equal(shots, [200.0, 200.0])

    def test_parameters_array_round_trip(self):
        assert RabiParameters.from_array(TRUTH.as_array()) == TRUTH
        assert TRUTH.state.mean == 7.0

    def test_prior_around(self):
        priors = PriorSpec.around(OMEGA, cap=50.0, spread=0.1)
        assert priors.n_th == (0.0, 50.0)
        assert priors.omega[0] == pytest.approx(0.9 * OMEGA)
        assert priors.contains(np.array([1.0, 1.0, OMEGA]))
        assert not priors.contains(np.array([-1.0, 1.0, OMEGA]))
        with pytest.raises(ValueError):
            PriorSpec(n_th=(5.0, 1.0))

    def test_chain_longer_than_burn_in(self):
        with pytest.raises(ValueError):
            McmcConfig(seed=0, n_steps=10, burn_in=0.95)
        assert McmcConfig(seed=0, n_steps=1000).burn_in_steps == 200


class TestSynthesis:
    """Tests for synthetic datasets"""

    def test_layout(self, expected_data):
        assert len(expected_data) == 3 * len(TIMES)
        assert expected_data.transitions == (-1, 0, 1)
        assert expected_data.records[0].dn == 0

    def test_seeded_draws_repeat(self):
        first = synthesize_dataset(TRUTH, (0, 1), TIMES, seed=7)
        second = synthesize_dataset(TRUTH, (0, 1), TIMES, seed=7)
        assert first == second
        assert all(float(r.successes).is_integer() for r in first.records)

    def test_expected_counts_are_fractional(self, expected_data):
        assert any(not float(r.successes).is_integer() for r in expected_data.records)


class TestLikelihood:
    """Tests for the binomial log-likelihood"""

    def test_empty_dataset(self, model):
        assert log_likelihood(TRUTH, RabiDataset(), model) == 0.0

    def test_truth_beats_wrong_parameters(self, expected_data, model):
        at_truth = log_likelihood(TRUTH, expected_data, model)
        hotter = log_likelihood(RabiParameters(8.0, 5.0, OMEGA), expected_data, model)
        faster = log_likelihood(RabiParameters(2.0, 5.0, 1.1 * OMEGA), expected_data, model)
        assert at_truth > hotter
        assert at_truth > faster


class TestRunMcmc:
    """Tests for the Metropolis sampler"""

    def test_single_transition_not_identifiable(self, model, priors):
        data = synthesize_dataset(TRUTH, (1,), TIMES, expected=True)
        with pytest.raises(IdentifiabilityError):
            run_mcmc(data, priors, McmcConfig(seed=0, n_steps=200), model)

    def test_seed_reproducible(self, expected_data, model, priors):
        cfg = McmcConfig(seed=3, n_steps=200)
        first = run_mcmc(expected_data, priors, cfg, model)
        second = run_mcmc(expected_data, priors, cfg, model)
        np.testing.assert_array_equal(first.samples, second.samples)
        assert first.samples.shape == (160, 3)

    def test_posterior_payload(self, expected_data, model, priors):
        posterior = run_mcmc(expected_data, priors, McmcConfig(seed=1, n_steps=200), model)
        payload = posterior.to_dict(include_samples=10)
        assert set(payload["parameters"]) == set(PARAMETER_NAMES)
        assert payload["n_samples"] == 160
        assert payload["seed"] == 1
        assert payload["burn_in_steps"] == 40
        assert len(payload["samples"]) == 10
        lower, upper = posterior.interval("n_coh")
        assert lower <= upper

    @pytest.mark.slow
    def test_recovers_truth(self, expected_data, model, priors):
        """Test noiseless counts put the posterior on the generating parameters"""
        posterior = run_mcmc(expected_data, priors, McmcConfig(seed=0, n_steps=3000), model)
        assert posterior.mean("n_th") == pytest.approx(2.0, rel=0.25)
        assert posterior.mean("n_coh") == pytest.approx(5.0, rel=0.25)
        assert posterior.mean("omega") == pytest.approx(OMEGA, rel=0.02)
        assert 0.0 < posterior.acceptance_rate < 1.0

    @pytest.mark.slow
    def test_coverage_study(self, model, priors):
        report = coverage_study(
            TRUTH,
            (0, 1, -1),
            TIMES,
            priors,
            McmcConfig(seed=10, n_steps=400),
            model,
            n_datasets=2,
        )
        assert report.n_datasets == 2
        assert set(report.to_dict()["coverage"]) == set(PARAMETER_NAMES)
        assert all(0.0 <= report.fraction(name) <= 1.0 for name in PARAMETER_NAMES)


class TestLikelihoodRoutes:
    """Tests for the displaced thermal route behind the likelihood"""

    def test_auto_matches_explicit_routes(self, expected_data, model):
        params = RabiParameters(n_th=4.0, n_coh=6.0, omega=OMEGA)
        auto = log_likelihood(params, expected_data, model)
        assert auto == log_likelihood(params, expected_data, model, method="direct")
        assert auto == pytest.approx(
            log_likelihood(params, expected_data, model, method="eigen"), rel=1e-6
        )

    def test_hot_state_uses_kernel_route(self, model):
        """Test a 20.7-phonon thermal state with a small displacement evaluates on the auto route"""
        data = synthesize_dataset(
            RabiParameters(n_th=20.7, n_coh=0.0, omega=OMEGA), (0, 1, -1), TIMES, expected=True
        )
        params = RabiParameters(n_th=20.7, n_coh=0.5, omega=OMEGA)
        auto = log_likelihood(params, data, model)
        assert math.isfinite(auto)
        assert auto == log_likelihood(params, data, model, method="eigen")


@pytest.mark.slow
class TestEstimatorRoundTrip:
    """Tests for posterior recovery of thermal, coherent and near-ground states"""

    def test_thermal_state(self, model, priors):
        truth = RabiParameters(n_th=20.7, n_coh=0.0, omega=OMEGA)
        data = synthesize_dataset(truth, (0, 1, -1), TIMES, expected=True)
        posterior = run_mcmc(data, priors, McmcConfig(seed=0, n_steps=6000), model)
        mean, std = posterior.mean("n_th"), posterior.std("n_th")
        assert abs(mean - 20.7) <= 2.0 * std
        assert std / mean <= 0.2

    def test_coherent_state_with_second_red_sideband(self, model, priors):
        truth = RabiParameters(n_th=0.0, n_coh=82.0, omega=OMEGA)
        data = synthesize_dataset(truth, (0, 1, -1, -2), TIMES, expected=True)
        assert data.transitions == (-2, -1, 0, 1)
        posterior = run_mcmc(data, priors, McmcConfig(seed=0, n_steps=6000), model)
        mean, std = posterior.mean("n_coh"), posterior.std("n_coh")
        assert abs(mean - 82.0) <= 2.0 * std
        assert std / mean <= 0.2

    def test_near_ground_state(self, model, priors):
        """Test the combined mean of a 2-phonon state is recovered to a few percent"""
        truth = RabiParameters(n_th=1.0, n_coh=1.0, omega=OMEGA)
        data = synthesize_dataset(truth, (0, 1, -1), TIMES, expected=True)
        posterior = run_mcmc(data, priors, McmcConfig(seed=0, n_steps=6000), model)
        combined = posterior.samples[:, 0] + posterior.samples[:, 1]
        assert combined.mean() == pytest.approx(2.0, rel=0.1)
        assert combined.std(ddof=1) / combined.mean() <= 0.1
