from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Optional

import numpy as np
from scipy import signal as scipy_signal

from errors import InconsistentRecord, PhaseOutOfRange, SpecMismatch
from utils import wrap_phase


def _frozen_array(values, dtype=np.float64):
    """Copy into a read-only array of the given dtype"""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _time_axis(n, fs, tmin):
    return tmin + np.arange(n) / fs


# EDF


@dataclass(frozen=True)
class EdfChannel:
    label: str
    physical_dimension: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    transducer: str = ''
    prefilter: str = ''

    def is_annotation(self):
        """Check if this channel carries EDF+ annotations"""
        return self.label.strip() == 'EDF Annotations'


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_datetime: Optional[datetime]
    header_bytes: int
    n_records: int
    record_duration_s: float
    channels: tuple

    @property
    def n_channels(self):
        return len(self.channels)

    @property
    def record_bytes(self):
        return 2 * sum(ch.samples_per_record for ch in self.channels)


# Signals


@dataclass(frozen=True, eq=False)
class Recording:
    """Continuous channels x samples matrix in microvolts"""

    channel_labels: tuple
    fs: float
    data: np.ndarray
    events: tuple = ()
    header: Optional[EdfHeader] = None

    def __post_init__(self):
        data = _frozen_array(self.data)
        if data.ndim != 2:
            raise InconsistentRecord(f"Recording data must be 2-D, got shape {data.shape}")
        if data.shape[0] != len(self.channel_labels):
            raise InconsistentRecord(
                f"{len(self.channel_labels)} labels for {data.shape[0]} channels")
        events = tuple((int(s), str(c)) for s, c in self.events)
        for sample, code in events:
            if not 0 <= sample < data.shape[1]:
                raise InconsistentRecord(
                    f"Event {code!r} at sample {sample} outside recording of {data.shape[1]} samples")
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'events', events)
        object.__setattr__(self, 'channel_labels', tuple(str(l) for l in self.channel_labels))
        object.__setattr__(self, 'fs', float(self.fs))

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    def with_data(self, data):
        """Same recording metadata around new samples"""
        return replace(self, data=data)

    def channel_index(self, labels):
        """Indices of the given labels, in the order given; unknown labels are skipped"""
        lookup = {label: i for i, label in enumerate(self.channel_labels)}
        return [lookup[label] for label in labels if label in lookup]


@dataclass(frozen=True, eq=False)
class EpochSet:
    """Stimulus-locked trials x channels x time tensor"""

    data: np.ndarray
    fs: float
    tmin: float
    tmax: float
    labels: tuple
    channel_labels: tuple

    def __post_init__(self):
        data = _frozen_array(self.data)
        n_times = int(round((self.tmax - self.tmin) * self.fs)) + 1
        if data.ndim != 3 or data.shape[2] != n_times:
            raise InconsistentRecord(
                f"Epoch tensor shape {data.shape} does not match {n_times} samples per window")
        if len(self.labels) != data.shape[0]:
            raise InconsistentRecord(f"{len(self.labels)} labels for {data.shape[0]} trials")
        if len(self.channel_labels) != data.shape[1]:
            raise InconsistentRecord(
                f"{len(self.channel_labels)} channel labels for {data.shape[1]} channels")
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'labels', tuple(str(l) for l in self.labels))
        object.__setattr__(self, 'channel_labels', tuple(str(l) for l in self.channel_labels))

    @property
    def n_trials(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]

    @property
    def n_times(self):
        return self.data.shape[2]

    @property
    def times(self):
        return _time_axis(self.n_times, self.fs, self.tmin)

    def with_data(self, data):
        return replace(self, data=data)

    def select_trials(self, mask):
        """Subset of trials by boolean mask or index list"""
        idx = np.arange(self.n_trials)[np.asarray(mask)]
        return replace(self, data=self.data[idx], labels=tuple(self.labels[i] for i in idx))

    def with_label(self, label):
        return self.select_trials(np.array([l == label for l in self.labels], dtype=bool))

    def pick_channels(self, labels):
        """Subset of channels by label, in recording order"""
        wanted = set(labels)
        idx = [i for i, label in enumerate(self.channel_labels) if label in wanted]
        return replace(self, data=self.data[:, idx, :],
                       channel_labels=tuple(self.channel_labels[i] for i in idx))


@dataclass(frozen=True, eq=False)
class FirFilter:
    coefficients: np.ndarray
    band: tuple
    fs: float

    def __post_init__(self):
        object.__setattr__(self, 'coefficients', _frozen_array(self.coefficients))

    @property
    def n_taps(self):
        return len(self.coefficients)

    def frequency_response(self, freqs):
        """Complex single-pass response at the given frequencies in Hz"""
        _, h = scipy_signal.freqz(self.coefficients, [1.0],
                                  worN=np.atleast_1d(np.asarray(freqs, dtype=float)),
                                  fs=self.fs)
        return h


@dataclass(frozen=True, eq=False)
class AnalyticSignal:
    values: np.ndarray
    fs: float

    @property
    def phase(self):
        return wrap_phase(np.angle(self.values))

    @property
    def envelope(self):
        return np.abs(self.values)


@dataclass(frozen=True, eq=False)
class TfDecomposition:
    """Complex Morlet coefficients, shape (..., freqs, time)"""

    coefficients: np.ndarray
    freqs: np.ndarray
    fs: float
    valid: np.ndarray


# Metrics


@dataclass(frozen=True, eq=False)
class PhaseTensor:
    """Phases in (-pi, pi], shape trials x channels x time; NaN marks missing samples"""

    phases: np.ndarray
    fs: float
    tmin: float
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        phases = _frozen_array(self.phases)
        finite = phases[np.isfinite(phases)]
        if finite.size and (finite.min() <= -np.pi or finite.max() > np.pi):
            raise PhaseOutOfRange(
                f"Phases must lie in (-pi, pi], got [{finite.min():.6g}, {finite.max():.6g}]")
        valid = self.valid
        if valid is None:
            valid = np.ones(phases.shape[-1], dtype=bool)
        object.__setattr__(self, 'phases', phases)
        object.__setattr__(self, 'valid', _frozen_array(valid, dtype=bool))

    @property
    def n_channels(self):
        return self.phases.shape[1]


@dataclass(frozen=True, eq=False)
class SyncSeries:
    per_trial: np.ndarray
    grand: np.ndarray
    fs: float
    tmin: float
    valid: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.valid is None:
            object.__setattr__(self, 'valid', np.ones(len(self.grand), dtype=bool))

    @property
    def times(self):
        return _time_axis(len(self.grand), self.fs, self.tmin)


@dataclass(frozen=True, eq=False)
class ErpSeries:
    values: np.ndarray
    fs: float
    tmin: float

    @property
    def times(self):
        return _time_axis(len(self.values), self.fs, self.tmin)


@dataclass(frozen=True, eq=False)
class ItcMap:
    values: np.ndarray
    freqs: np.ndarray
    fs: float
    tmin: float
    valid: np.ndarray

    @property
    def times(self):
        return _time_axis(self.values.shape[1], self.fs, self.tmin)


@dataclass(frozen=True, eq=False)
class BandSync:
    name: str
    low: float
    high: float
    sync: SyncSeries
    peak_latency: float
    peak_value: float
    n_taps: int


# Statistics


@dataclass(frozen=True)
class CorrResult:
    r: float
    n: int
    p: float

    def to_dict(self):
        return {'r': self.r, 'n': self.n, 'p': self.p}


@dataclass(frozen=True)
class LagResult:
    lag_samples: int
    lag_seconds: float
    peak_corr: float
    max_lag: int

    def to_dict(self):
        return {'lag_samples': self.lag_samples, 'lag_seconds': self.lag_seconds,
                'peak_corr': self.peak_corr, 'max_lag': self.max_lag}


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    mean: float
    sd: float
    n: int

    @property
    def sem(self):
        return self.sd / np.sqrt(self.n)

    def to_dict(self):
        return {'t': self.t, 'p': self.p, 'mean': self.mean, 'sd': self.sd,
                'sem': float(self.sem), 'n': self.n}


# Artifacts


@dataclass(frozen=True, eq=False)
class IcaModel:
    whitening: np.ndarray
    unmixing: np.ndarray
    mixing: np.ndarray
    means: np.ndarray
    n_iter: int
    seed: int
    converged: bool = True
    identifiable: bool = True

    @property
    def n_components(self):
        return self.unmixing.shape[0]

    def sources(self, data):
        """Component activations for channels x samples data"""
        centered = np.asarray(data, dtype=float) - self.means[:, None]
        return self.unmixing @ (self.whitening @ centered)


@dataclass(frozen=True, eq=False)
class ArtifactSeries:
    values: np.ndarray
    channels: tuple
    fs: float
    tmin: float
    window_samples: int


@dataclass(frozen=True)
class DoseBin:
    lower: float
    upper: float
    n: int
    corr: Optional[CorrResult]
    sparse: bool

    def to_dict(self):
        return {'lower': self.lower, 'upper': self.upper, 'n': self.n, 'sparse': self.sparse,
                'corr': self.corr.to_dict() if self.corr else None}


# Simulation


@dataclass(frozen=True, eq=False)
class OscillatorNetwork:
    """All-to-all Kuramoto network; omega and K in rad/s, sigma in rad/sqrt(s)"""

    n: int
    omega: np.ndarray
    K: float
    sigma: float
    theta0: np.ndarray

    def __post_init__(self):
        if self.n < 2:
            raise SpecMismatch(f"Oscillator network needs n >= 2, got {self.n}")
        if self.K < 0 or self.sigma < 0:
            raise SpecMismatch("Coupling K and noise sigma must be non-negative")
        omega = _frozen_array(self.omega)
        theta0 = _frozen_array(self.theta0)
        if omega.shape != (self.n,) or theta0.shape != (self.n,):
            raise SpecMismatch(f"omega and theta0 must have shape ({self.n},)")
        object.__setattr__(self, 'omega', omega)
        object.__setattr__(self, 'theta0', theta0)

    @classmethod
    def fixed(cls, omega, K, sigma=0.0, theta0=None, seed=0):
        """Network with the given natural frequencies"""
        omega = np.asarray(omega, dtype=float)
        if theta0 is None:
            theta0 = np.random.default_rng(seed).uniform(-np.pi, np.pi, len(omega))
        return cls(n=len(omega), omega=omega, K=K, sigma=sigma, theta0=theta0)

    @classmethod
    def lorentzian(cls, n, gamma, K, omega0=0.0, sigma=0.0, seed=0, spacing='random'):
        """Network with Lorentzian(omega0, gamma) natural frequencies.

        spacing='quantile' places frequencies on the distribution's quantiles,
        which removes most of the finite-size sampling scatter.
        """
        rng = np.random.default_rng(seed)
        if spacing == 'quantile':
            u = (np.arange(n) + 0.5) / n
            omega = omega0 + gamma * np.tan(np.pi * (u - 0.5))
        elif spacing == 'random':
            omega = omega0 + gamma * rng.standard_cauchy(n)
        else:
            raise SpecMismatch(f"Unknown frequency spacing {spacing!r}")
        theta0 = rng.uniform(-np.pi, np.pi, n)
        return cls(n=n, omega=omega, K=K, sigma=sigma, theta0=theta0)


@dataclass(frozen=True, eq=False)
class EvokedResponse:
    """Phase-locked Gabor bursts on one fixed topography after each target event.

    bursts holds (freq Hz, latency s, width s, gain) tuples. With
    track_amplitude the bursts scale with the trial amplitude a_i.
    """

    topography: np.ndarray
    bursts: tuple
    track_amplitude: bool = False

    def __post_init__(self):
        bursts = tuple(tuple(float(v) for v in burst) for burst in self.bursts)
        if not bursts or any(len(burst) != 4 for burst in bursts):
            raise SpecMismatch("Evoked bursts need (freq, latency, width, gain) tuples")
        if any(burst[2] <= 0 for burst in bursts):
            raise SpecMismatch("Evoked burst widths must be positive")
        object.__setattr__(self, 'topography', _frozen_array(self.topography))
        object.__setattr__(self, 'bursts', bursts)


@dataclass(frozen=True, eq=False)
class SynthSpec:
    """Sensor model and event schedule for synthetic EEG.

    Per target event i the artifact source has amplitude
    artifact_gain * a_i (a_i uniform in amplitude_range) and the network
    coupling receives a transient boost of
    event_coupling + coupling_gain * artifact_gain * a_i rad/s. With
    artifact_train > 0 the single burst is replaced by that many bursts at
    latencies uniform over the interval up to the next event.
    """

    channel_labels: tuple
    mixing: np.ndarray
    fs: float
    n_samples: int
    event_samples: np.ndarray
    event_codes: tuple
    noise_sd: float = 0.3
    target_code: str = '1'
    event_coupling: float = 0.0
    coupling_gain: float = 0.0
    coupling_window: tuple = (0.1, 0.6)
    artifact_topography: Optional[np.ndarray] = None
    artifact_gain: float = 0.0
    amplitude_range: tuple = (0.2, 1.0)
    artifact_freq: float = 6.0
    artifact_latency: float = 0.3
    artifact_width: float = 0.08
    artifact_jitter: float = 0.0
    artifact_train: int = 0
    evoked: tuple = ()

    def __post_init__(self):
        mixing = _frozen_array(self.mixing)
        if mixing.ndim != 2 or mixing.shape[0] != len(self.channel_labels):
            raise SpecMismatch(
                f"Mixing shape {mixing.shape} does not match {len(self.channel_labels)} channels")
        if len(self.event_samples) != len(self.event_codes):
            raise SpecMismatch("event_samples and event_codes differ in length")
        object.__setattr__(self, 'mixing', mixing)
        object.__setattr__(self, 'event_samples', _frozen_array(self.event_samples, dtype=np.int64))
        object.__setattr__(self, 'event_codes', tuple(str(c) for c in self.event_codes))
        if self.artifact_topography is not None:
            topo = _frozen_array(self.artifact_topography)
            if topo.shape != (len(self.channel_labels),):
                raise SpecMismatch("artifact_topography must have one weight per channel")
            object.__setattr__(self, 'artifact_topography', topo)
        evoked = tuple(self.evoked)
        for response in evoked:
            if not isinstance(response, EvokedResponse):
                raise SpecMismatch(
                    f"Evoked components must be EvokedResponse, got {type(response).__name__}")
            if response.topography.shape != (len(self.channel_labels),):
                raise SpecMismatch("Evoked topography must have one weight per channel")
        object.__setattr__(self, 'evoked', evoked)
        if self.artifact_train < 0:
            raise SpecMismatch(f"artifact_train must be >= 0, got {self.artifact_train}")

    @property
    def n_oscillators(self):
        return self.mixing.shape[1]

    @property
    def n_sources(self):
        """Oscillators plus the artifact and each evoked response"""
        has_artifact = self.artifact_topography is not None and self.artifact_gain != 0
        return self.n_oscillators + int(has_artifact) + len(self.evoked)

    @property
    def n_trials(self):
        return sum(1 for code in self.event_codes if code == self.target_code)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    fs: float
    phases: np.ndarray
    coupling: np.ndarray
    artifact: np.ndarray
    trial_amplitudes: np.ndarray
    event_samples: np.ndarray
    event_codes: tuple


# Pipeline results


@dataclass(eq=False)
class ArmResult:
    """Numbers and series produced by one pipeline arm"""

    arm: str
    n_trials: int
    n_channels: int
    fs: float
    flagged_components: list
    global_r: CorrResult
    trial_r: CorrResult
    target_delta: Optional[dict]
    lag: LagResult
    itc_r: CorrResult
    band_peaks: dict
    erp_channels: list
    series: dict = field(default_factory=dict)
    trial_peaks: dict = field(default_factory=dict)
    # in-memory intermediates for the mediation battery, never serialised
    epochs: Optional[EpochSet] = None
    broadband: Optional[EpochSet] = None
    sync: Optional[SyncSeries] = None

    def to_dict(self):
        return {
            'arm': self.arm,
            'n_trials': self.n_trials,
            'n_channels': self.n_channels,
            'fs': self.fs,
            'flagged_components': list(self.flagged_components),
            'global_r': self.global_r.to_dict(),
            'trial_r': self.trial_r.to_dict(),
            'target_delta': self.target_delta,
            'lag': self.lag.to_dict(),
            'itc_r': self.itc_r.to_dict(),
            'band_peaks': self.band_peaks,
            'erp_channels': list(self.erp_channels),
            'series': self.series,
            'trial_peaks': self.trial_peaks,
        }


@dataclass(eq=False)
class BatteryResult:
    regional: dict
    temporal_precedence: Optional[TTestResult]
    confound: dict
    within_trial: Optional[TTestResult]
    dose_response: list
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            'regional': self.regional,
            'temporal_precedence': (self.temporal_precedence.to_dict()
                                    if self.temporal_precedence else None),
            'confound': self.confound,
            'within_trial': self.within_trial.to_dict() if self.within_trial else None,
            'dose_response': [b.to_dict() for b in self.dose_response],
            'notes': list(self.notes),
        }


REPORT_SCHEMA_VERSION = "1"


@dataclass(eq=False)
class ComparisonReport:
    """Paired arm results; a single-arm run leaves the other arm as None"""

    clean: Optional[ArmResult]
    raw: Optional[ArmResult]
    battery: Optional[BatteryResult]
    config: dict
    software_version: str
    seeds: dict
    metadata: dict
    generated_at: str = ''

    @property
    def arms(self):
        return {name: arm for name, arm in (('clean', self.clean), ('raw', self.raw))
                if arm is not None}

    def to_dict(self):
        return {
            'schema_version': REPORT_SCHEMA_VERSION,
            'software_version': self.software_version,
            'generated_at': self.generated_at,
            'config': self.config,
            'seeds': self.seeds,
            'metadata': self.metadata,
            'arms': {name: arm.to_dict() for name, arm in self.arms.items()},
            'battery': self.battery.to_dict() if self.battery else None,
        }
