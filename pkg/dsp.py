import logging
import math

import numpy as np
from scipy import fft as scipy_fft
from scipy import signal as scipy_signal

from errors import (EmptyInput, EvenTaps, InvalidBand, SignalTooShort, TooFewTaps,
                    WaveletTooWide)
from models import AnalyticSignal, FirFilter, PhaseTensor, TfDecomposition

logger = logging.getLogger(__name__)

MIN_TAPS = 11
EDGE_FRACTION = 0.1
WAVELET_SD_SPAN = 3.0


def fft(x):
    """Discrete Fourier transform along the last axis, any length"""
    x = np.asarray(x)
    if x.size == 0 or x.shape[-1] == 0:
        raise EmptyInput("fft of an empty vector")
    return scipy_fft.fft(x, axis=-1)


def ifft(X):
    X = np.asarray(X)
    if X.size == 0 or X.shape[-1] == 0:
        raise EmptyInput("ifft of an empty vector")
    return scipy_fft.ifft(X, axis=-1)


# FIR


def default_n_taps(fs, transition=2.0):
    """Next odd integer >= 3.3 * fs / transition"""
    n = math.ceil(3.3 * fs / transition)
    return n if n % 2 else n + 1


def design_fir_bandpass(low, high, fs, n_taps=None, transition=2.0):
    """Hamming-windowed sinc band-pass filter"""
    if not 0 < low < high < fs / 2:
        raise InvalidBand(f"Band ({low}, {high}) Hz must satisfy 0 < low < high < fs/2 = {fs / 2}")
    if n_taps is None:
        n_taps = default_n_taps(fs, transition)
    if n_taps % 2 == 0:
        raise EvenTaps(f"FIR tap count must be odd, got {n_taps}")
    if n_taps < MIN_TAPS:
        raise TooFewTaps(f"FIR tap count must be >= {MIN_TAPS}, got {n_taps}")

    h = scipy_signal.firwin(n_taps, [low, high], pass_zero=False, window='hamming', fs=fs)
    # firwin is symmetric up to rounding; make it exact
    h = 0.5 * (h + h[::-1])
    return FirFilter(coefficients=h, band=(float(low), float(high)), fs=float(fs))


def filtfilt(x, fir):
    """Zero-phase forward-backward FIR filtering along the last axis"""
    x = np.asarray(x, dtype=float)
    n_taps = fir.n_taps
    if x.shape[-1] <= 3 * n_taps:
        raise SignalTooShort(
            f"filtfilt needs more than {3 * n_taps} samples for {n_taps} taps, got {x.shape[-1]}")
    return scipy_signal.filtfilt(fir.coefficients, [1.0], x, axis=-1, padtype='odd', padlen=n_taps)


def bandpass(x, low, high, fs, n_taps=None, transition=2.0):
    fir = design_fir_bandpass(low, high, fs, n_taps=n_taps, transition=transition)
    return filtfilt(x, fir)


# Hilbert


def hilbert_analytic(x, fs=1.0):
    """Analytic signal along the last axis; the real part is the input itself"""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 4:
        raise SignalTooShort(f"Hilbert transform needs >= 4 samples, got {x.shape[-1]}")
    analytic = scipy_signal.hilbert(x, axis=-1)
    values = x + 1j * analytic.imag
    return AnalyticSignal(values=values, fs=float(fs))


def edge_mask(n_times, fraction=EDGE_FRACTION):
    """True away from the outer fraction of samples at each end"""
    n_edge = int(math.ceil(fraction * n_times))
    valid = np.ones(n_times, dtype=bool)
    if n_edge:
        valid[:n_edge] = False
        valid[n_times - n_edge:] = False
    return valid


def epoch_phase(epochs):
    """Instantaneous phase computed on epochs alone.

    Each trial is cosine-tapered over its outer 10% at both ends before the
    Hilbert transform, and those samples are flagged invalid.
    """
    taper = scipy_signal.windows.tukey(epochs.n_times, alpha=2 * EDGE_FRACTION)
    analytic = hilbert_analytic(epochs.data * taper, epochs.fs)
    return PhaseTensor(phases=analytic.phase, fs=epochs.fs, tmin=epochs.tmin,
                       valid=edge_mask(epochs.n_times))


# Morlet


def linear_freqs(count, low, high):
    """count linearly spaced frequencies, both endpoints included"""
    return np.linspace(float(low), float(high), int(count))


def morlet_cycles(freq):
    return max(2.0, freq / 2.0)


def morlet_wavelet(freq, fs, n_cycles=None):
    """Complex Morlet wavelet truncated at +/-3 sd, unit L2 norm"""
    if n_cycles is None:
        n_cycles = morlet_cycles(freq)
    sigma_t = n_cycles / (2 * np.pi * freq)
    half = int(math.ceil(WAVELET_SD_SPAN * sigma_t * fs))
    t = np.arange(-half, half + 1) / fs
    wavelet = np.exp(2j * np.pi * freq * t) * np.exp(-t ** 2 / (2 * sigma_t ** 2))
    return wavelet / np.linalg.norm(wavelet)


def morlet_tf(x, freqs, fs, n_cycles=None):
    """Complex Morlet decomposition along the last axis.

    Coefficients have shape x.shape[:-1] + (len(freqs), n_times). Cells within
    half a wavelet support of either edge are marked invalid.
    """
    x = np.asarray(x, dtype=float)
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if freqs.size == 0:
        raise EmptyInput("morlet_tf needs at least one frequency")
    if np.any(freqs <= 0) or np.any(freqs >= fs / 2):
        raise InvalidBand(f"Morlet frequencies must lie in (0, {fs / 2}) Hz")
    if np.any(np.diff(freqs) <= 0):
        raise InvalidBand("Morlet frequencies must be strictly increasing")

    n_times = x.shape[-1]
    coefficients = np.empty(x.shape[:-1] + (len(freqs), n_times), dtype=complex)
    valid = np.zeros((len(freqs), n_times), dtype=bool)
    for i, freq in enumerate(freqs):
        wavelet = morlet_wavelet(freq, fs, n_cycles)
        if len(wavelet) > n_times:
            raise WaveletTooWide(
                f"Morlet support at {freq:g} Hz is {len(wavelet)} samples, signal has {n_times}")
        kernel = wavelet.reshape((1,) * (x.ndim - 1) + (-1,))
        coefficients[..., i, :] = scipy_signal.fftconvolve(x, kernel, mode='same', axes=-1)
        half = (len(wavelet) - 1) // 2
        valid[i, half:n_times - half] = True

    return TfDecomposition(coefficients=coefficients, freqs=freqs, fs=float(fs), valid=valid)
