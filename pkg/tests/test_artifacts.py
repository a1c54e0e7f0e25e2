import logging
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import signal as scipy_signal

import artifacts
from artifacts import (artifact_magnitude, dose_response_bins, fastica,
                       identify_artifact_components, region_of, regional_correlations,
                       regional_groups, remove_components)
from errors import (AllSparse, InsufficientData, LengthMismatch, NonFiniteInput, NotConverged,
                    RankDeficient, SolverFailure, TooFewChannels, ValidationError)
from models import EpochSet, IcaModel
from stats import pearson


def _best_match(sources, truth):
    """max |r| between each true source and any recovered source"""
    return [max(abs(np.corrcoef(s, t)[0, 1]) for s in sources) for t in truth]


def test_fastica_recovers_sine_and_sawtooth():
    t = np.linspace(0, 8, 4000)
    truth = np.vstack([np.sin(2 * np.pi * 1.3 * t), scipy_signal.sawtooth(2 * np.pi * 0.7 * t)])
    recovered = 0
    for seed in range(20):
        mixing = np.random.default_rng(100 + seed).uniform(0.2, 1.0, size=(2, 2))
        model = fastica(mixing @ truth, seed=seed)
        sources = model.sources(mixing @ truth)
        if min(_best_match(sources, truth)) > 0.95:
            recovered += 1
    assert recovered >= 19


def test_fastica_is_deterministic_per_seed(rng):
    data = rng.laplace(size=(3, 2000))
    first = fastica(data, seed=7)
    second = fastica(data, seed=7)
    assert np.array_equal(first.unmixing, second.unmixing)
    assert first.seed == 7


def test_fastica_drops_null_dimensions(rng):
    base = rng.laplace(size=(2, 2000))
    data = np.vstack([base, base.sum(axis=0, keepdims=True)])
    assert fastica(data).n_components == 2
    with pytest.raises(RankDeficient):
        fastica(data, n_components=3)
    with pytest.raises(RankDeficient):
        fastica(np.zeros((3, 100)))


def test_fastica_warns_when_not_converged(rng):
    with pytest.warns(NotConverged):
        model = fastica(rng.laplace(size=(4, 1000)), max_iter=1, tol=1e-30)
    assert not model.converged
    assert model.n_iter == 1


def test_gaussian_sources_are_flagged_unidentifiable(rng):
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', NotConverged)
        model = fastica(rng.normal(size=(2, 20000)), max_iter=50)
    assert not model.identifiable


def test_removing_every_component_leaves_the_channel_means(rng):
    data = rng.laplace(size=(3, 1000)) + np.array([[1.0], [2.0], [3.0]])
    model = fastica(data)
    cleaned = remove_components(model, data, range(model.n_components))
    assert_allclose(cleaned, np.repeat(model.means[:, None], 1000, axis=1), atol=1e-9)
    assert_allclose(remove_components(model, data, []), data)


def test_remove_components_rejects_bad_indices(rng):
    data = rng.laplace(size=(2, 500))
    model = fastica(data)
    with pytest.raises(ValidationError):
        remove_components(model, data, [5])


def _blink_data(rng, n=4000):
    blink = np.zeros(n)
    for start in range(100, n - 100, 400):
        blink[start:start + 40] = np.hanning(40) * 10
    s2, s3 = rng.laplace(size=(2, n))
    data = np.vstack([5 * blink + 0.1 * s2, s2 + 0.1 * s3, s3])
    return data, blink


def test_identify_flags_the_frontal_component(rng):
    data, blink = _blink_data(rng)
    model = fastica(data, seed=0)
    flagged = identify_artifact_components(model, data, frontal_idx=[0], threshold=0.30)

    assert len(flagged) == 1
    source = model.sources(data)[flagged[0]]
    assert abs(np.corrcoef(source, blink)[0, 1]) > 0.9

    cleaned = remove_components(model, data, flagged)
    assert abs(np.corrcoef(cleaned[0], blink)[0, 1]) < 0.1


def test_identify_threshold_above_one_flags_nothing(rng):
    data, _ = _blink_data(rng)
    model = fastica(data)
    assert identify_artifact_components(model, data, [0], threshold=1.01) == []


def _correlated_pair(rng, r, n=1000):
    s1, s2 = rng.normal(size=(2, n))
    s1 -= s1.mean()
    s1 /= np.linalg.norm(s1)
    s2 -= s2.mean()
    s2 -= (s2 @ s1) * s1
    s2 /= np.linalg.norm(s2)
    return np.vstack([r * s1 + np.sqrt(1 - r ** 2) * s2, s1])


def _identity_model(n):
    eye = np.eye(n)
    return IcaModel(whitening=eye, unmixing=eye, mixing=eye, means=np.zeros(n), n_iter=0, seed=0)


def test_identify_threshold_is_inclusive(rng):
    data = _correlated_pair(rng, 0.29)
    model = _identity_model(2)
    assert identify_artifact_components(model, data, [0], threshold=0.30) == [0]

    exact = abs(pearson(data[1], data[0]).r)
    assert exact == pytest.approx(0.29)
    assert identify_artifact_components(model, data, [0], threshold=exact) == [0, 1]


def test_identify_needs_a_frontal_channel(rng):
    data, _ = _blink_data(rng)
    with pytest.raises(TooFewChannels):
        identify_artifact_components(fastica(data), data, [])


def _epochs(data, channels, fs=100.0):
    n_times = data.shape[2]
    return EpochSet(data=data, fs=fs, tmin=0.0, tmax=(n_times - 1) / fs,
                    labels=('target',) * data.shape[0], channel_labels=channels)


def test_artifact_magnitude_of_constant_signal():
    data = np.full((2, 3, 50), 2.0)
    series = artifact_magnitude(_epochs(data, ('Fp1', 'Fp2', 'Cz')), ['Fp1', 'Fp2'], 5)
    assert series.values.shape == (2, 50)
    assert_allclose(series.values, 2.0)
    assert series.channels == ('Fp1', 'Fp2')


def test_artifact_magnitude_needs_known_channels():
    epochs = _epochs(np.zeros((1, 2, 10)), ('Cz', 'Pz'))
    with pytest.raises(TooFewChannels):
        artifact_magnitude(epochs, ['Fp1'], 3)
    with pytest.raises(TooFewChannels):
        artifact_magnitude(epochs, [], 3)


@pytest.mark.parametrize('label,region', [
    ('Fp1', 'frontal'), ('AF3', 'frontal'), ('F4', 'frontal'), ('EEG Fp2-REF', 'frontal'),
    ('T7', 'temporal'), ('FT8', 'temporal'), ('O1', 'occipital'), ('PO4', 'occipital'),
    ('Cz', 'other'), ('Pz', 'other'), ('FC3', 'other'), ('ECG', None),
])
def test_region_of(label, region):
    assert region_of(label) == region


def test_regional_groups_warns_on_unknown_labels(caplog):
    with caplog.at_level(logging.WARNING, logger='artifacts'):
        groups = regional_groups(['Fp1', 'T7', 'O2', 'Cz', 'EOG'])
    assert groups == {'frontal': ['Fp1'], 'temporal': ['T7'], 'occipital': ['O2'],
                      'other': ['Cz', 'EOG']}
    assert 'EOG' in caplog.text


def test_regional_correlations_follow_the_injected_region(rng):
    n_trials, n_times = 30, 100
    envelope = np.abs(np.sin(np.linspace(0, np.pi, n_times)))[None, :] * rng.uniform(
        0.5, 2.0, size=(n_trials, 1))
    per_trial = envelope + 0.05 * rng.normal(size=(n_trials, n_times))
    data = 0.2 * rng.normal(size=(n_trials, 3, n_times))
    data[:, 0] += envelope * np.sin(np.linspace(0, 60 * np.pi, n_times))
    epochs = _epochs(data, ('Fp1', 'T7', 'O1'))
    groups = regional_groups(epochs.channel_labels)

    result = regional_correlations(epochs, per_trial, groups, 5, np.ones(n_times, dtype=bool))
    assert set(result) == {'frontal', 'temporal', 'occipital'}
    assert result['frontal']['mean_r'] > result['temporal']['mean_r']
    assert result['frontal']['mean_r'] > result['occipital']['mean_r']
    assert result['frontal']['n_trials'] == n_trials


def test_dose_response_quantile_bins(rng):
    amplitudes = np.arange(40.0)
    bins = dose_response_bins(amplitudes, rng.normal(size=40), rng.normal(size=40),
                              n_bins=4, min_trials=10)
    assert [b.n for b in bins] == [10, 10, 10, 10]
    assert not any(b.sparse for b in bins)
    assert bins[0].lower == 0.0 and bins[-1].upper == 39.0
    assert all(b.corr is not None and b.corr.n == 10 for b in bins)


def test_dose_response_sparse_bins(rng):
    # ties at the median push every tied trial into the upper bin
    amplitudes = np.concatenate([np.zeros(20), np.arange(1.0, 11.0)])
    bins = dose_response_bins(amplitudes, rng.normal(size=30), rng.normal(size=30),
                              n_bins=2, min_trials=10)
    assert [b.n for b in bins] == [0, 30]
    assert [b.sparse for b in bins] == [True, False]
    assert bins[0].corr is None


def test_dose_response_errors(rng):
    with pytest.raises(AllSparse):
        dose_response_bins(np.arange(8.0), rng.normal(size=8), rng.normal(size=8), min_trials=10)
    with pytest.raises(InsufficientData):
        dose_response_bins(np.arange(8.0), rng.normal(size=8), rng.normal(size=8), n_bins=1)


def test_dose_response_of_no_trials_is_empty():
    assert dose_response_bins([], [], []) == []


def test_dose_response_rejects_bad_inputs(rng):
    with pytest.raises(LengthMismatch):
        dose_response_bins(np.arange(40.0), rng.normal(size=39), rng.normal(size=40))
    amplitudes = np.arange(40.0)
    amplitudes[3] = np.nan
    with pytest.raises(NonFiniteInput) as excinfo:
        dose_response_bins(amplitudes, rng.normal(size=40), rng.normal(size=40))
    assert excinfo.value.exit_code == 3


def test_fastica_rejects_non_finite_samples(rng):
    data = rng.laplace(size=(3, 500))
    data[1, 10] = np.inf
    with pytest.raises(NonFiniteInput) as excinfo:
        fastica(data)
    assert excinfo.value.exit_code == 3


def test_fastica_wraps_eigensolver_failures(rng, monkeypatch):
    def failing_eigh(matrix):
        raise np.linalg.LinAlgError("eigenvalues did not converge")

    monkeypatch.setattr(artifacts.linalg, 'eigh', failing_eigh)
    with pytest.raises(SolverFailure) as excinfo:
        fastica(rng.laplace(size=(3, 500)))
    assert excinfo.value.exit_code == 3
    assert 'covariance' in str(excinfo.value)
