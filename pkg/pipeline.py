import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

import dsp
import figures
from artifacts import (artifact_magnitude, dose_response_bins, fastica, identify_artifact_components,
                       regional_correlations, regional_groups, remove_components)
from config import SOFTWARE_VERSION
from errors import (AllSparse, ConfigError, ConstantInput, DegenerateControl, InsufficientData,
                    PhaseSyncError, PipelineStageError, ReportIoError, SolverFailure,
                    ValidationError, VersionMismatch, ZeroVariance)
from ingest import average_reference, epoch, load_dataset, read_edf
from metrics import (band_sync_cascade_continuous, continuous_phase_epochs, erp, itc, itc_series,
                     kuramoto_R, trial_voltage)
from models import (REPORT_SCHEMA_VERSION, ArmResult, BatteryResult, ComparisonReport, EpochSet,
                    PhaseTensor, Recording)
from stats import (cross_correlation_lag, one_sample_ttest, partial_correlation, pearson,
                   peak_in_window, rolling_correlation)
from utils import samples_for, to_jsonable

logger = logging.getLogger(__name__)

ARMS = ('clean', 'raw')
TABLE1_ROWS = ('Global R vs ERP', 'Trial-level R vs ERP', 'Target vs Non-target')
TABLE1_COLUMNS = ('Metric', 'Clean', 'Raw', 'Delta', 'Ratio')

REDUCTIONS = {
    'itc_series': 'mean over valid Morlet frequencies, then pearson with grand R(t)',
    'trial_voltage': 'channel mean over the ERP montage per trial; peak of |voltage|',
    'itc_frequency_spacing': 'linear, endpoints inclusive',
    'morlet_cycles': 'max(2, f/2), support +/-3 sd',
    'target_delta': 'mean peak R (target) - mean peak R (nontarget), R units',
    'baseline': 'pre-stimulus RMS averaged over channels',
    'artifact_magnitude': 'sliding RMS of the frontal-channel mean, broadband (unfiltered) signal',
    'muscle_components': 'not applied',
}


@contextmanager
def _stage(name, arm=''):
    prefix = f"[{arm}] " if arm else ''
    logger.info(f"{prefix}{name} started")
    try:
        yield
    except PipelineStageError:
        raise
    except PhaseSyncError as e:
        logger.error(f"{prefix}{name} failed: {e}")
        raise PipelineStageError(name, e) from e
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        logger.error(f"{prefix}{name} failed inside numpy/scipy: {e}")
        raise PipelineStageError(name, SolverFailure(str(e))) from e
    logger.info(f"{prefix}{name} finished")


# Inputs


def _sidecar_for(edf_path):
    for candidate in (edf_path.with_suffix('.csv'), edf_path.with_name(f"{edf_path.stem}_events.csv"),
                      edf_path.with_name(f"{edf_path.stem}.events.csv")):
        if candidate.exists():
            return candidate
    return None


def load_input(path, events_csv=None):
    """Load one continuous recording from an EDF file or a recording container"""
    path = Path(path)
    if path.is_dir():
        dataset = load_dataset(path)
        if isinstance(dataset, EpochSet):
            raise ConfigError(f"{path} holds epochs; the pipeline needs a continuous recording")
        return dataset
    if not path.exists():
        raise ConfigError(f"Input {path} does not exist")
    sidecar = events_csv or _sidecar_for(path)
    return read_edf(path, events_csv=sidecar)


def load_inputs(config):
    if not config.inputs:
        raise ConfigError("No input given; set inputs in the config or pass --input")
    return [load_input(p, config.events_csv or None) for p in config.inputs]


# Arms


@dataclass
class _PreparedRecording:
    filtered: EpochSet
    broadband: EpochSet
    phases: EpochSet
    recording: Recording
    flagged: list
    dropped: int


def _frontal_indices(config, labels):
    frontal = config.frontal_channels or regional_groups(labels)['frontal']
    lookup = {label: i for i, label in enumerate(labels)}
    return [lookup[label] for label in frontal if label in lookup]


def _clean(config, recording, fir, seed, arm):
    """Fit ICA on the band-passed copy and subtract flagged components from the broadband data"""
    frontal_idx = _frontal_indices(config, recording.channel_labels)
    if not frontal_idx:
        logger.warning(f"[{arm}] No frontal channels found; nothing removed")
        return recording, []

    fitted = dsp.filtfilt(recording.data, fir)
    n_components = config.ica_n_components or None
    model = fastica(fitted, n_components=n_components, seed=seed, max_iter=config.ica_max_iter,
                    tol=config.ica_tol)
    flagged = identify_artifact_components(model, fitted, frontal_idx, config.ica_threshold)
    if not flagged:
        return recording, []
    return recording.with_data(remove_components(model, recording.data, flagged)), flagged


def _prepare(config, recording, arm, seed):
    codes = list(config.target_codes) + list(config.nontarget_codes)
    tmin, tmax = config.epoch_window

    with _stage('reference', arm):
        if config.reference == 'average':
            recording = average_reference(recording)

    with _stage('filter', arm):
        fir = dsp.design_fir_bandpass(config.band[0], config.band[1], recording.fs,
                                      transition=config.fir_transition)

    flagged = []
    if arm == 'clean' and config.ica_enabled:
        with _stage('ica', arm):
            recording, flagged = _clean(config, recording, fir, seed, arm)

    with _stage('filter', arm):
        filtered = recording.with_data(dsp.filtfilt(recording.data, fir))

    with _stage('phase', arm):
        phases = continuous_phase_epochs(filtered, codes, tmin, tmax, config.target_codes)

    with _stage('epoch', arm):
        voltage, dropped = epoch(filtered, codes, tmin, tmax, config.target_codes)
        broadband, _ = epoch(recording, codes, tmin, tmax, config.target_codes)

    return _PreparedRecording(filtered=voltage, broadband=broadband, phases=phases,
                              recording=recording, flagged=flagged, dropped=dropped)


def _concat(epoch_sets):
    if len(epoch_sets) == 1:
        return epoch_sets[0]
    first = epoch_sets[0]
    for other in epoch_sets[1:]:
        if other.channel_labels != first.channel_labels or other.fs != first.fs:
            raise ValidationError("Inputs differ in channel labels or sampling rate")
    return EpochSet(data=np.concatenate([e.data for e in epoch_sets]), fs=first.fs,
                    tmin=first.tmin, tmax=first.tmax,
                    labels=sum((e.labels for e in epoch_sets), ()),
                    channel_labels=first.channel_labels)


def _target_mask(epochs):
    return np.array([label == 'target' for label in epochs.labels], dtype=bool)


def _erp_montage(config, labels):
    montage = [ch for ch in config.erp_channels if ch in labels]
    if not montage:
        logger.warning(f"None of the ERP montage {config.erp_channels} present; using all channels")
        return list(labels)
    return montage


def _trial_peaks(sync, voltage, window):
    peak_r = np.array([peak_in_window(row, sync.fs, sync.tmin, window)[1]
                       for row in sync.per_trial])
    peak_erp = np.abs([peak_in_window(row, sync.fs, sync.tmin, window, mode='absmax')[1]
                       for row in voltage])
    return peak_r, peak_erp


def _target_delta(phases, mask, window):
    nontarget = ~mask
    if not nontarget.any():
        return None
    target_sync = kuramoto_R(PhaseTensor(phases=phases.data[mask], fs=phases.fs, tmin=phases.tmin))
    other_sync = kuramoto_R(PhaseTensor(phases=phases.data[nontarget], fs=phases.fs,
                                        tmin=phases.tmin))
    target_peaks = [peak_in_window(row, phases.fs, phases.tmin, window)[1]
                    for row in target_sync.per_trial]
    other_peaks = [peak_in_window(row, phases.fs, phases.tmin, window)[1]
                   for row in other_sync.per_trial]
    target_mean, other_mean = float(np.mean(target_peaks)), float(np.mean(other_peaks))
    return {'delta': target_mean - other_mean, 'target_mean': target_mean,
            'nontarget_mean': other_mean, 'n_target': int(mask.sum()),
            'n_nontarget': int(nontarget.sum())}


def _run_arm(config, recordings, arm, seed):
    prepared = [_prepare(config, rec, arm, seed) for rec in recordings]
    voltage = _concat([p.filtered for p in prepared])
    broadband = _concat([p.broadband for p in prepared])
    phases = _concat([p.phases for p in prepared])
    flagged = sorted({i for p in prepared for i in p.flagged})

    mask = _target_mask(voltage)
    targets = voltage.select_trials(mask)
    target_broadband = broadband.select_trials(mask)
    fs = voltage.fs
    stats_window = tuple(config.stats_window)

    with _stage('metrics', arm):
        sync = kuramoto_R(PhaseTensor(phases=phases.data[mask], fs=fs, tmin=phases.tmin))
        montage = _erp_montage(config, voltage.channel_labels)
        erp_series = erp(targets, montage)
        freqs = dsp.linear_freqs(*config.itc_freqs)
        itc_map = itc(targets, freqs)
        itc_t = itc_series(itc_map)
        target_codes = list(config.target_codes)
        cascade = band_sync_cascade_continuous(
            [p.recording for p in prepared], target_codes, voltage.tmin, voltage.tmax,
            config.bands, window=tuple(config.cascade_window), transition=config.fir_transition)

    with _stage('statistics', arm):
        global_r = pearson(sync.grand, erp_series.values)
        peak_r, peak_erp = _trial_peaks(sync, trial_voltage(targets, montage), stats_window)
        trial_r = pearson(peak_r, peak_erp)
        max_lag = min(samples_for(config.max_lag_s, fs), (len(sync.grand) - 1) // 2)
        lag = cross_correlation_lag(erp_series.values, sync.grand, max_lag=max_lag, fs=fs)
        finite = np.isfinite(itc_t)
        itc_r = pearson(itc_t[finite], sync.grand[finite])
        target_delta = _target_delta(phases, mask, stats_window)
        window = samples_for(config.rolling_window_s, fs)
        rolling = rolling_correlation(erp_series.values, sync.grand, window)

    logger.info(f"[{arm}] global r={global_r.r:.3f}, trial r={trial_r.r:.3f} (n={trial_r.n}), "
                f"lag={lag.lag_seconds * 1000:.0f} ms, ITC r={itc_r.r:.3f}")

    times = sync.times
    series = {
        'times': times,
        'grand_r': sync.grand,
        'erp': erp_series.values,
        'itc_t': itc_t,
        'rolling_times': times[:len(rolling)],
        'rolling_r': rolling,
        'bands': {band.name: band.sync.grand for band in cascade},
    }
    band_peaks = {band.name: {'low': band.low, 'high': band.high, 'latency_s': band.peak_latency,
                              'peak_r': band.peak_value, 'n_taps': band.n_taps}
                  for band in cascade}

    result = ArmResult(arm=arm, n_trials=targets.n_trials, n_channels=voltage.n_channels, fs=fs,
                       flagged_components=flagged, global_r=global_r, trial_r=trial_r,
                       target_delta=target_delta, lag=lag, itc_r=itc_r, band_peaks=band_peaks,
                       erp_channels=montage, series=series,
                       trial_peaks={'peak_r': peak_r, 'peak_erp': peak_erp},
                       epochs=targets, broadband=target_broadband, sync=sync)
    return result, sum(p.dropped for p in prepared)


def run_single_pipeline(config, arm, recordings=None):
    """Run one arm ('clean' or 'raw') end to end and return its ArmResult"""
    if arm not in ARMS:
        raise ConfigError(f"Unknown arm {arm!r}; choose clean or raw")
    if recordings is None:
        recordings = load_inputs(config)
    result, _ = _run_arm(config, recordings, arm, config.ica_seed)
    return result


def _metadata(config, recordings, dropped):
    first = recordings[0]
    metadata = {
        'n_inputs': len(recordings),
        'fs': first.fs,
        'n_channels': first.n_channels,
        'channel_labels': list(first.channel_labels),
        'n_samples': [rec.n_samples for rec in recordings],
        'dropped_events': dropped,
        'itc_freqs_hz': dsp.linear_freqs(*config.itc_freqs),
        'reductions': dict(REDUCTIONS),
    }
    if first.header is not None:
        metadata['patient_id'] = first.header.patient_id
        metadata['recording_id'] = first.header.recording_id
    return metadata


def _build_report(config, clean, raw, battery, recordings, dropped):
    return ComparisonReport(
        clean=clean, raw=raw, battery=battery, config=config.to_dict(),
        software_version=SOFTWARE_VERSION, seeds={'ica': config.ica_seed},
        metadata=_metadata(config, recordings, dropped),
        generated_at=datetime.now(timezone.utc).isoformat(timespec='seconds'))


def run_arm_report(config, arm, recordings=None):
    """Single-arm run wrapped in a report"""
    if recordings is None:
        recordings = load_inputs(config)
    result, dropped = _run_arm(config, recordings, arm, config.ica_seed)
    clean, raw = (result, None) if arm == 'clean' else (None, result)
    return _build_report(config, clean, raw, None, recordings, dropped)


def run_dual_pipeline(config, recordings=None, battery=True):
    """Clean and raw arms on identical inputs and seeds, plus the mediation battery"""
    if recordings is None:
        recordings = load_inputs(config)
    clean, dropped = _run_arm(config, recordings, 'clean', config.ica_seed)
    raw, _ = _run_arm(config, recordings, 'raw', config.ica_seed)
    mediation = None
    if battery:
        with _stage('battery'):
            mediation = causal_battery(config, raw)
    return _build_report(config, clean, raw, mediation, recordings, dropped)


# Mediation battery


def _window_mask(times, window):
    lo, hi = window
    return (times >= lo - 1e-9) & (times <= hi + 1e-9)


def _baseline_rms(epochs):
    times = epochs.times
    mask = (times >= max(epochs.tmin, -0.1) - 1e-9) & (times <= 1e-9)
    if mask.sum() < 2:
        return None
    return np.sqrt((epochs.data[:, :, mask] ** 2).mean(axis=2)).mean(axis=1)


def causal_battery(config, raw_arm):
    """Five mediation tests on the raw arm's target trials"""
    epochs = raw_arm.broadband
    per_trial = raw_arm.sync.per_trial
    fs, tmin = epochs.fs, epochs.tmin
    stats_window = tuple(config.stats_window)
    mask = _window_mask(epochs.times, stats_window)
    window_samples = samples_for(config.artifact_window_s, fs)
    notes = []

    groups = regional_groups(epochs.channel_labels)
    artifact_channels = (config.artifact_channels or config.frontal_channels
                         or groups['frontal'] or list(epochs.channel_labels))
    artifact = artifact_magnitude(epochs, artifact_channels, window_samples).values
    peak_r = np.asarray(raw_arm.trial_peaks['peak_r'], dtype=float)
    peak_erp = np.asarray(raw_arm.trial_peaks['peak_erp'], dtype=float)

    # (a) regional specificity
    regional = regional_correlations(epochs, per_trial, groups, window_samples, mask)

    # (b) temporal precedence, ms
    lags = []
    for trial in range(epochs.n_trials):
        t_art, _ = peak_in_window(artifact[trial], fs, tmin, stats_window)
        t_r, _ = peak_in_window(per_trial[trial], fs, tmin, stats_window)
        lags.append((t_r - t_art) * 1000.0)
    try:
        precedence = one_sample_ttest(lags, 0.0)
    except (InsufficientData, ZeroVariance) as e:
        precedence = None
        notes.append(f"temporal precedence: {e}")

    # (c) confound control
    confound = {}
    baseline = _baseline_rms(raw_arm.epochs)
    if baseline is None:
        notes.append("confound control: epoch has no pre-stimulus baseline")
    else:
        confound['simple'] = pearson(peak_r, peak_erp).to_dict()
        try:
            confound['partial'] = partial_correlation(peak_r, peak_erp, baseline).to_dict()
        except (DegenerateControl, ConstantInput) as e:
            notes.append(f"confound control: {e}")
        confound['baseline_window'] = [max(tmin, -0.1), 0.0]

    # (d) within-trial coupling
    within_rs = []
    for trial in range(epochs.n_trials):
        try:
            within_rs.append(pearson(artifact[trial, mask], per_trial[trial, mask]).r)
        except ConstantInput:
            continue
    try:
        within = one_sample_ttest(within_rs, 0.0)
    except (InsufficientData, ZeroVariance) as e:
        within = None
        notes.append(f"within-trial coupling: {e}")

    # (e) dose response
    amplitudes = artifact[:, mask].max(axis=1)
    try:
        dose = dose_response_bins(amplitudes, peak_r, peak_erp, n_bins=config.dose_bins,
                                  min_trials=config.dose_min_trials)
    except AllSparse as e:
        dose = []
        notes.append(f"dose response: {e}")
    sparse = [i for i, b in enumerate(dose) if b.sparse]
    if sparse:
        notes.append(f"dose response: bins {sparse} have fewer than {config.dose_min_trials} trials")

    if within is not None:
        logger.info(f"Battery: within-trial mean r={within.mean:.3f}, t={within.t:.2f}")
    return BatteryResult(regional=regional, temporal_precedence=precedence, confound=confound,
                         within_trial=within, dose_response=dose, notes=notes)


# Reports


def report_to_dict(report):
    """JSON-ready dict of a report; NaN values become null"""
    data = report.to_dict() if isinstance(report, ComparisonReport) else report
    data = to_jsonable(data)
    if len(data.get('arms', {})) == 2:
        data['table1'] = table1_rows(data)
    return data


def _ratio(raw, clean):
    if raw is None or clean is None or clean == 0:
        return None
    return raw / clean


def table1_rows(report_dict):
    """Rows of the clean-vs-raw comparison table"""
    clean, raw = report_dict['arms']['clean'], report_dict['arms']['raw']

    def delta(arm):
        return arm['target_delta']['delta'] if arm.get('target_delta') else None

    values = [
        (TABLE1_ROWS[0], clean['global_r']['r'], raw['global_r']['r']),
        (TABLE1_ROWS[1], clean['trial_r']['r'], raw['trial_r']['r']),
        (TABLE1_ROWS[2], delta(clean), delta(raw)),
    ]
    rows = []
    for metric, c, r in values:
        diff = None if c is None or r is None else r - c
        rows.append({'Metric': metric, 'Clean': c, 'Raw': r, 'Delta': diff, 'Ratio': _ratio(r, c)})
    return rows


def emit_report(report, out_dir, formats=('json', 'csv', 'svg')):
    """Write report.json, table1.csv and figures/*.svg; returns the written paths"""
    out_dir = Path(out_dir)
    data = report_to_dict(report)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if 'json' in formats:
            path = out_dir / 'report.json'
            path.write_text(json.dumps(data, sort_keys=True, indent=2) + '\n', encoding='utf-8')
            written.append(path)
        if 'csv' in formats and 'table1' in data:
            path = out_dir / 'table1.csv'
            frame = pd.DataFrame(data['table1'], columns=list(TABLE1_COLUMNS))
            frame.to_csv(path, index=False, float_format='%.6f', lineterminator='\n')
            written.append(path)
        if 'svg' in formats:
            written.extend(figures.render_all(data, out_dir / 'figures'))
    except OSError as e:
        raise ReportIoError(f"Cannot write report to {out_dir}: {e}") from e

    logger.info(f"Wrote {len(written)} report files to {out_dir}")
    return written


def load_report(path):
    """Parse a report.json (or the directory holding it) back into a dict"""
    path = Path(path)
    if path.is_dir():
        path = path / 'report.json'
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise ReportIoError(f"Cannot read report {path}: {e}") from e
    if not isinstance(data, dict):
        raise ReportIoError(f"Report {path} is not a JSON object")
    if data.get('schema_version') != REPORT_SCHEMA_VERSION:
        raise VersionMismatch(
            f"Report schema {data.get('schema_version')!r}, expected {REPORT_SCHEMA_VERSION!r}")
    return data
