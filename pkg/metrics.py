import logging
import warnings

import numpy as np

import dsp
from errors import EmptyEpochs, TooFewChannels, TooFewTrials, WindowOutOfRange
from ingest import epoch
from models import BandSync, ErpSeries, ItcMap, PhaseTensor, SyncSeries
from stats import peak_in_window
from utils import wrap_phase

logger = logging.getLogger(__name__)


def phase_tensor(analytic, fs, tmin, valid=None):
    """PhaseTensor from complex analytic values shaped trials x channels x time"""
    values = analytic.values if hasattr(analytic, 'values') else np.asarray(analytic)
    return PhaseTensor(phases=wrap_phase(np.angle(values)), fs=fs, tmin=tmin, valid=valid)


def kuramoto_R(phases):
    """Order parameter R(t) per trial and its grand average over trials"""
    if phases.n_channels < 2:
        raise TooFewChannels(f"Order parameter needs >= 2 channels, got {phases.n_channels}")
    if phases.phases.shape[0] == 0:
        raise EmptyEpochs("Order parameter of an empty trial set")

    per_trial = np.abs(np.exp(1j * phases.phases).mean(axis=1))
    per_trial = np.clip(per_trial, 0.0, 1.0)
    grand = per_trial.mean(axis=0)
    return SyncSeries(per_trial=per_trial, grand=grand, fs=phases.fs, tmin=phases.tmin,
                      valid=np.array(phases.valid))


def _channel_subset(epochs, channels):
    if not channels:
        return epochs
    picked = epochs.pick_channels(channels)
    return picked if picked.n_channels else epochs


def trial_voltage(epochs, channels=None):
    """Per-trial channel-mean voltage, trials x time"""
    return _channel_subset(epochs, channels).data.mean(axis=1)


def erp(epochs, channels=None):
    """Grand-average voltage over trials and channels.

    channels restricts the channel mean to a montage; labels missing from the
    recording are ignored and no match at all falls back to every channel.
    """
    if epochs.n_trials == 0:
        raise EmptyEpochs("ERP of an empty epoch set")
    subset = _channel_subset(epochs, channels)
    return ErpSeries(values=subset.data.mean(axis=0).mean(axis=0), fs=epochs.fs, tmin=epochs.tmin)


def itc(epochs, freqs, n_cycles=None):
    """Channel-averaged inter-trial coherence from Morlet phases; edge cells are NaN"""
    if epochs.n_trials < 2:
        raise TooFewTrials(f"ITC needs >= 2 trials, got {epochs.n_trials}")
    if epochs.n_channels == 0:
        raise TooFewChannels("ITC needs at least one channel")
    freqs = np.asarray(freqs, dtype=float)

    total = np.zeros((len(freqs), epochs.n_times))
    valid = None
    # one channel at a time keeps memory at trials x freqs x time
    for channel in range(epochs.n_channels):
        tf = dsp.morlet_tf(epochs.data[:, channel, :], freqs, epochs.fs, n_cycles=n_cycles)
        coefficients = tf.coefficients
        magnitude = np.abs(coefficients)
        phasors = np.divide(coefficients, magnitude, out=np.zeros_like(coefficients),
                            where=magnitude > 0)
        total += np.abs(phasors.mean(axis=0))
        valid = tf.valid

    values = np.full((len(freqs), epochs.n_times), np.nan)
    values[valid] = np.clip(total / epochs.n_channels, 0.0, 1.0)[valid]
    return ItcMap(values=values, freqs=freqs, fs=epochs.fs, tmin=epochs.tmin, valid=valid)


def itc_series(itc_map):
    """Frequency-averaged ITC(t) over valid cells; NaN where no frequency is valid"""
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', category=RuntimeWarning)
        return np.nanmean(itc_map.values, axis=0)


def _band_peak(sync, window):
    series = np.where(sync.valid, sync.grand, np.nan)
    try:
        return peak_in_window(series, sync.fs, sync.tmin, window)
    except WindowOutOfRange:
        logger.warning(f"No valid samples in cascade window {window}; peak undefined")
        return float('nan'), float('nan')


def _cascade_taps(fs, n_times, transition):
    n_taps = dsp.default_n_taps(fs, transition)
    cap = int((n_times - 1) // 3)
    cap -= 1 - cap % 2
    if n_taps > cap:
        logger.info(f"Capping cascade filter from {n_taps} to {cap} taps to fit {n_times}-sample epochs")
        return cap
    return n_taps


def band_sync_cascade(epochs, bands, window=(0.0, 0.8), transition=2.0):
    """Per-band order parameter and peak latency computed on epochs alone.

    Filters longer than the epoch allows are shortened to the largest odd tap
    count that filtfilt accepts; the taps used are reported per band.
    """
    if epochs.n_trials == 0:
        raise EmptyEpochs("Cascade of an empty epoch set")
    n_taps = _cascade_taps(epochs.fs, epochs.n_times, transition)

    results = []
    for name, low, high in bands:
        fir = dsp.design_fir_bandpass(low, high, epochs.fs, n_taps=n_taps)
        filtered = epochs.with_data(dsp.filtfilt(epochs.data, fir))
        sync = kuramoto_R(dsp.epoch_phase(filtered))
        latency, value = _band_peak(sync, window)
        logger.debug(f"Band {name} {low}-{high} Hz peaks at {latency:.3f} s (R={value:.4f})")
        results.append(BandSync(name=name, low=float(low), high=float(high), sync=sync,
                                peak_latency=latency, peak_value=value, n_taps=fir.n_taps))
    return results


def continuous_phase_epochs(recording, codes, tmin, tmax, target_codes=None):
    """Hilbert phase over the continuous recording, then cut into epochs"""
    analytic = dsp.hilbert_analytic(recording.data, recording.fs)
    phase_epochs, _ = epoch(recording.with_data(analytic.phase), codes, tmin, tmax,
                            target_codes=target_codes)
    return phase_epochs


def band_sync_cascade_continuous(recordings, codes, tmin, tmax, bands, window=(0.0, 0.8),
                                 transition=2.0):
    """Per-band order parameter with filtering and Hilbert on the continuous recording(s).

    Trials from several recordings are pooled before averaging.
    """
    if not isinstance(recordings, (list, tuple)):
        recordings = [recordings]
    results = []
    for name, low, high in bands:
        trials = []
        for recording in recordings:
            fir = dsp.design_fir_bandpass(low, high, recording.fs, transition=transition)
            filtered = recording.with_data(dsp.filtfilt(recording.data, fir))
            trials.append(continuous_phase_epochs(filtered, codes, tmin, tmax).data)
        first = recordings[0]
        sync = kuramoto_R(PhaseTensor(phases=np.concatenate(trials), fs=first.fs, tmin=tmin))
        latency, value = _band_peak(sync, window)
        logger.debug(f"Band {name} {low}-{high} Hz peaks at {latency:.3f} s (R={value:.4f})")
        results.append(BandSync(name=name, low=float(low), high=float(high), sync=sync,
                                peak_latency=latency, peak_value=value, n_taps=fir.n_taps))
    return results
