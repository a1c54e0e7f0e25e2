import numpy as np
import pytest
from numpy.testing import assert_allclose

import dsp
from errors import (EmptyInput, EvenTaps, InvalidBand, SignalTooShort, TooFewTaps,
                    WaveletTooWide)
from models import EpochSet
from stats import cross_correlation_lag
from utils import wrap_phase


def test_fft_of_impulse_is_flat():
    x = np.zeros(7)
    x[0] = 1.0
    assert_allclose(dsp.fft(x), np.ones(7))
    assert_allclose(dsp.ifft(dsp.fft(x)).real, x, atol=1e-15)


def test_fft_matches_a_direct_dft(rng):
    n = 1000
    x = rng.normal(size=n)
    k = np.arange(n)
    direct = np.exp(-2j * np.pi * np.outer(k, k) / n) @ x
    X = dsp.fft(x)

    assert_allclose(X, direct, rtol=1e-9, atol=1e-9)
    assert_allclose(dsp.ifft(X).real, x, rtol=1e-10, atol=1e-12)
    energy = np.sum(x ** 2)
    assert abs(np.sum(np.abs(X) ** 2) - n * energy) <= 1e-10 * n * energy


def test_fft_rejects_empty_input():
    with pytest.raises(EmptyInput):
        dsp.fft([])
    with pytest.raises(EmptyInput):
        dsp.ifft(np.zeros((3, 0)))


@pytest.mark.parametrize('fs,expected', [(256.0, 423), (250.0, 413), (512.0, 845)])
def test_default_tap_count(fs, expected):
    assert dsp.default_n_taps(fs, 2.0) == expected


def test_fir_design_is_odd_and_symmetric():
    fir = dsp.design_fir_bandpass(4.0, 30.0, 256.0)
    assert fir.n_taps == 423
    assert np.array_equal(fir.coefficients, fir.coefficients[::-1])
    assert fir.band == (4.0, 30.0)


def test_fir_frequency_response():
    fir = dsp.design_fir_bandpass(8.0, 13.0, 256.0)
    gain = np.abs(fir.frequency_response([10.5, 40.0, 1.0]))
    assert abs(gain[0] - 1.0) < 0.02
    assert gain[1] < 0.01
    assert gain[2] < 0.01


def test_fir_design_errors():
    with pytest.raises(InvalidBand):
        dsp.design_fir_bandpass(0.0, 30.0, 256.0)
    with pytest.raises(InvalidBand):
        dsp.design_fir_bandpass(30.0, 4.0, 256.0)
    with pytest.raises(InvalidBand):
        dsp.design_fir_bandpass(4.0, 128.0, 256.0)
    with pytest.raises(EvenTaps):
        dsp.design_fir_bandpass(4.0, 30.0, 256.0, n_taps=100)
    with pytest.raises(TooFewTaps):
        dsp.design_fir_bandpass(4.0, 30.0, 256.0, n_taps=9)


def test_filtfilt_is_zero_phase():
    fs = 256.0
    t = np.arange(int(10 * fs)) / fs
    fir = dsp.design_fir_bandpass(4.0, 30.0, fs)
    for freq in (6.0, 10.0, 20.0):
        x = np.sin(2 * np.pi * freq * t)
        y = dsp.filtfilt(x, fir)
        middle = slice(len(t) // 4, 3 * len(t) // 4)
        lag = cross_correlation_lag(x[middle], y[middle], max_lag=20, fs=fs)
        assert lag.lag_samples == 0
        assert_allclose(y[middle], x[middle], atol=0.02)


def test_filtfilt_attenuates_stopband_tone_by_20db():
    fs = 256.0
    t = np.arange(int(10 * fs)) / fs
    x = np.sin(2 * np.pi * 1.0 * t)
    y = dsp.bandpass(x, 4.0, 30.0, fs)
    middle = slice(len(t) // 4, 3 * len(t) // 4)
    ratio = np.sqrt(np.mean(y[middle] ** 2) / np.mean(x[middle] ** 2))
    assert 20 * np.log10(ratio) <= -20.0


def test_filtfilt_filters_along_last_axis():
    fs = 256.0
    x = np.random.default_rng(0).normal(size=(2, 3, 2000))
    fir = dsp.design_fir_bandpass(4.0, 30.0, fs)
    y = dsp.filtfilt(x, fir)
    assert y.shape == x.shape
    assert_allclose(y[1, 2], dsp.filtfilt(x[1, 2], fir))


def test_filtfilt_needs_three_filter_lengths():
    fir = dsp.design_fir_bandpass(4.0, 30.0, 256.0)
    with pytest.raises(SignalTooShort):
        dsp.filtfilt(np.zeros(3 * fir.n_taps), fir)


@pytest.mark.parametrize('freq', [5.0, 10.0, 20.0])
def test_hilbert_pure_tone(freq):
    fs = 2048.0
    t = np.arange(int(2 * fs)) / fs
    x = np.cos(2 * np.pi * freq * t)
    analytic = dsp.hilbert_analytic(x, fs)

    middle = slice(int(0.1 * len(t)), int(0.9 * len(t)))
    assert np.array_equal(analytic.values.real, x)
    assert np.max(np.abs(analytic.envelope[middle] - 1.0)) < 0.01
    phase_error = wrap_phase(analytic.phase[middle] - 2 * np.pi * freq * t[middle])
    assert np.max(np.abs(phase_error)) < 0.01


def test_hilbert_needs_four_samples():
    with pytest.raises(SignalTooShort):
        dsp.hilbert_analytic(np.ones(3))


def test_epoch_phase_flags_edges():
    fs = 100.0
    data = np.sin(2 * np.pi * 10 * np.arange(101) / fs)[None, None, :].repeat(3, axis=0)
    epochs = EpochSet(data=data, fs=fs, tmin=0.0, tmax=1.0, labels=('target',) * 3,
                      channel_labels=('Cz',))
    phases = dsp.epoch_phase(epochs)

    assert phases.phases.shape == (3, 1, 101)
    assert not phases.valid[:11].any()
    assert not phases.valid[-11:].any()
    assert phases.valid[11:-11].all()


def test_linear_frequency_grid():
    freqs = dsp.linear_freqs(20, 4, 30)
    assert len(freqs) == 20
    assert freqs[0] == 4.0 and freqs[-1] == 30.0
    assert_allclose(np.diff(freqs), 26.0 / 19)


def test_morlet_wavelet_shape():
    wavelet = dsp.morlet_wavelet(10.0, 256.0)
    assert len(wavelet) % 2 == 1
    assert_allclose(np.linalg.norm(wavelet), 1.0)
    assert dsp.morlet_cycles(4.0) == 2.0
    assert dsp.morlet_cycles(30.0) == 15.0


def test_morlet_tf_localises_a_tone():
    fs = 256.0
    t = np.arange(int(2 * fs)) / fs
    x = np.sin(2 * np.pi * 10.0 * t)
    tf = dsp.morlet_tf(x, [6.0, 10.0, 14.0], fs)

    assert tf.coefficients.shape == (3, len(t))
    power = np.array([np.abs(tf.coefficients[i, tf.valid[i]]).mean() for i in range(3)])
    assert np.argmax(power) == 1
    half = (len(dsp.morlet_wavelet(6.0, fs)) - 1) // 2
    assert not tf.valid[0, :half].any()
    assert tf.valid[0, half:len(t) - half].all()


def test_morlet_tf_errors():
    with pytest.raises(WaveletTooWide):
        dsp.morlet_tf(np.zeros(50), [4.0], 256.0)
    with pytest.raises(InvalidBand):
        dsp.morlet_tf(np.zeros(500), [200.0], 256.0)
    with pytest.raises(InvalidBand):
        dsp.morlet_tf(np.zeros(500), [10.0, 8.0], 256.0)
    with pytest.raises(EmptyInput):
        dsp.morlet_tf(np.zeros(500), [], 256.0)


def test_morlet_tf_is_linear(rng):
    fs = 256.0
    x, y = rng.normal(size=(2, 512))
    freqs = [6.0, 10.0, 20.0]
    combined = dsp.morlet_tf(2.5 * x - 0.75 * y, freqs, fs).coefficients
    separate = (2.5 * dsp.morlet_tf(x, freqs, fs).coefficients
                - 0.75 * dsp.morlet_tf(y, freqs, fs).coefficients)
    assert_allclose(combined, separate, atol=1e-9)
    assert not dsp.morlet_tf(np.zeros(512), freqs, fs).coefficients.any()
