"""Kuramoto network simulator and synthetic EEG generator.

Random streams are counter-based (Philox) and keyed by the seed. The
counter's first word selects the stream family, so each draw is addressable
without reference to draw order:

    [0, block, oscillator, 0]   phase noise for one oscillator, one block of steps
    [1, 0, 0, 0]                per-trial artifact amplitudes, latency jitter, train latencies
    [2, 0, channel, 0]          sensor noise for one channel
"""
import logging
import math
import warnings

import numpy as np
from scipy import signal as scipy_signal

from errors import SpecMismatch
from models import EvokedResponse, GroundTruth, OscillatorNetwork, Recording, SynthSpec
from utils import wrap_phase

logger = logging.getLogger(__name__)

NOISE_BLOCK = 4096
TRANSIENT_FRACTION = 0.2

STREAM_PHASE_NOISE = 0
STREAM_TRIALS = 1
STREAM_SENSOR = 2


class StabilityWarning(UserWarning):
    """Integration step is large compared with the fastest rate in the network"""


def _stream(seed, family, word1=0, word2=0):
    return np.random.Generator(np.random.Philox(key=seed, counter=[family, word1, word2, 0]))


def _phase_noise_block(seed, block, n, length):
    """Standard normal increments, steps x oscillators, one stream per oscillator"""
    return np.column_stack([
        _stream(seed, STREAM_PHASE_NOISE, block, i).standard_normal(length) for i in range(n)])


def order_parameter(phases):
    """Mean-field modulus |<exp(i theta)>| over the last axis"""
    return np.abs(np.exp(1j * np.asarray(phases)).mean(axis=-1))


def _integrate(omega, theta0, coupling, sigma, dt, steps, seed):
    n = len(omega)
    trajectory = np.empty((steps, n))
    theta = np.array(theta0, dtype=float)
    noise_scale = sigma * math.sqrt(dt)

    for block_start in range(0, steps, NOISE_BLOCK):
        length = min(NOISE_BLOCK, steps - block_start)
        noise = (_phase_noise_block(seed, block_start // NOISE_BLOCK, n, length)
                 if sigma > 0 else None)
        for j in range(length):
            k = block_start + j
            trajectory[k] = theta
            # (K/n) sum_j sin(theta_j - theta_i) = K Im(Z exp(-i theta_i))
            z = np.exp(1j * theta).mean()
            drift = omega + coupling[k] * np.imag(z * np.exp(-1j * theta))
            theta = theta + drift * dt
            if noise is not None:
                theta = theta + noise_scale * noise[j]

    return trajectory


def simulate(net, dt, steps, seed=0, coupling=None, check_stability=True):
    """Euler-Maruyama trajectory of the network, steps x n, wrapped to (-pi, pi].

    Row 0 holds the initial phases. coupling optionally gives K per step in
    rad/s and replaces net.K.
    """
    steps = int(steps)
    if coupling is None:
        coupling = np.full(steps, float(net.K))
    else:
        coupling = np.asarray(coupling, dtype=float)
        if coupling.shape != (steps,):
            raise SpecMismatch(f"Coupling schedule needs {steps} values, got {coupling.shape}")

    if check_stability:
        scale = max(np.max(np.abs(net.omega)), np.max(coupling), 1e-12)
        if dt > 0.01 / scale:
            warnings.warn(StabilityWarning(
                f"dt={dt:g} s exceeds 0.01/{scale:.3g}; integration error may be large"))
            logger.warning(f"Simulation step dt={dt:g} s is coarse for rates up to {scale:.3g} rad/s")

    trajectory = _integrate(net.omega, net.theta0, coupling, net.sigma, dt, steps, seed)
    return wrap_phase(trajectory)


def stationary_R(trajectory, discard=TRANSIENT_FRACTION):
    """Time-averaged order parameter after dropping the leading transient"""
    trajectory = np.asarray(trajectory)
    start = int(len(trajectory) * discard)
    return float(order_parameter(trajectory[start:]).mean())


def mean_field_R(K, gamma):
    """Stationary R of an infinite Lorentzian population: sqrt(1 - 2 gamma / K) above threshold"""
    if gamma <= 0:
        raise SpecMismatch(f"Lorentzian width must be positive, got {gamma}")
    K_c = 2.0 * gamma
    if K <= K_c:
        return 0.0
    return math.sqrt(1.0 - K_c / K)


# Synthetic EEG


def _hann_bump(n_samples, start, stop):
    """Hann window over [start, stop) samples, zero elsewhere"""
    length = stop - start
    if length < 3:
        return np.zeros(0), 0
    lo, hi = max(start, 0), min(stop, n_samples)
    window = scipy_signal.windows.hann(length)
    return window[lo - start:hi - start], lo


def _add_gabor(series, center, fs, freq, width, gain):
    """Add gain * cos(2 pi f tau) * exp(-tau^2 / 2 width^2) around a fractional sample"""
    support = int(math.ceil(4 * width * fs))
    lo = max(int(center) - support, 0)
    hi = min(int(center) + support + 1, len(series))
    if lo >= hi:
        return
    tau = (np.arange(lo, hi) - center) / fs
    series[lo:hi] += gain * np.cos(2 * np.pi * freq * tau) * np.exp(-tau ** 2 / (2 * width ** 2))


def _following_samples(event_samples, n_samples):
    """Sample of the next event after each event, or the end of the recording"""
    ordered = np.unique(event_samples)
    index = np.searchsorted(ordered, event_samples, side='right')
    padded = np.append(ordered, n_samples)
    return padded[index]


def synth_eeg(net, spec, seed=0):
    """Synthetic recording of sensor-mixed oscillators with an optional event artifact.

    Channels are mixing @ sin(theta) + artifact_topography * artifact +
    evoked responses + noise. After each target event i the coupling rises by
    event_coupling + coupling_gain * artifact_gain * a_i inside the coupling
    window (Hann-shaped), and the artifact source carries Gabor bursts of
    amplitude artifact_gain * a_i. The network is integrated at dt = 1/fs in
    a frame rotating at the mean natural frequency.
    """
    if spec.n_oscillators != net.n:
        raise SpecMismatch(f"Mixing has {spec.n_oscillators} columns, network has {net.n} oscillators")
    if spec.fs <= 0 or spec.n_samples <= 0:
        raise SpecMismatch("Sampling rate and sample count must be positive")
    if np.any(spec.event_samples < 0) or np.any(spec.event_samples >= spec.n_samples):
        raise SpecMismatch("Event samples fall outside the recording")

    fs = spec.fs
    n_samples = int(spec.n_samples)
    dt = 1.0 / fs
    t = np.arange(n_samples) * dt

    is_target = np.array([code == spec.target_code for code in spec.event_codes], dtype=bool)
    target_samples = spec.event_samples[is_target]
    n_targets = len(target_samples)
    intervals = (_following_samples(spec.event_samples, n_samples) - spec.event_samples)[is_target]

    trial_rng = _stream(seed, STREAM_TRIALS)
    amplitudes = trial_rng.uniform(spec.amplitude_range[0], spec.amplitude_range[1], n_targets)
    jitter = trial_rng.uniform(-spec.artifact_jitter, spec.artifact_jitter, n_targets)
    train = trial_rng.uniform(0.0, 1.0, (n_targets, spec.artifact_train))

    coupling = np.full(n_samples, float(net.K))
    artifact = np.zeros(n_samples)
    evoked = np.zeros((len(spec.evoked), n_samples))
    w_start = int(round(spec.coupling_window[0] * fs))
    w_stop = int(round(spec.coupling_window[1] * fs))

    for i, (sample, amp) in enumerate(zip(target_samples, amplitudes)):
        boost = spec.event_coupling + spec.coupling_gain * spec.artifact_gain * amp
        if boost:
            window, lo = _hann_bump(n_samples, sample + w_start, sample + w_stop)
            coupling[lo:lo + len(window)] += boost * window
        if spec.artifact_gain:
            if spec.artifact_train:
                centers = sample + train[i] * intervals[i]
            else:
                centers = [sample + (spec.artifact_latency + jitter[i]) * fs]
            for center in centers:
                _add_gabor(artifact, center, fs, spec.artifact_freq, spec.artifact_width,
                           spec.artifact_gain * amp)
        for k, response in enumerate(spec.evoked):
            scale = amp if response.track_amplitude else 1.0
            for freq, latency, width, gain in response.bursts:
                _add_gabor(evoked[k], sample + latency * fs, fs, freq, width, gain * scale)

    omega0 = float(np.mean(net.omega))
    rotating = _integrate(net.omega - omega0, net.theta0, coupling, net.sigma, dt, n_samples, seed)
    phases = wrap_phase(rotating + omega0 * t[:, None])

    data = spec.mixing @ np.sin(phases.T)
    if spec.artifact_topography is not None and spec.artifact_gain:
        data = data + np.outer(spec.artifact_topography, artifact)
    for response, series in zip(spec.evoked, evoked):
        data = data + np.outer(response.topography, series)
    if spec.noise_sd > 0:
        noise = np.vstack([_stream(seed, STREAM_SENSOR, 0, ch).standard_normal(n_samples)
                           for ch in range(len(spec.channel_labels))])
        data = data + spec.noise_sd * noise

    logger.info(f"Synthesised {len(spec.channel_labels)} channels x {n_samples} samples, "
                f"{n_targets} target events, artifact gain {spec.artifact_gain:g}, "
                f"{len(spec.evoked)} evoked response(s)")

    recording = Recording(channel_labels=spec.channel_labels, fs=fs, data=data,
                          events=tuple(zip(spec.event_samples.tolist(), spec.event_codes)))
    truth = GroundTruth(fs=fs, phases=phases, coupling=coupling, artifact=artifact,
                        trial_amplitudes=amplitudes, event_samples=np.array(spec.event_samples),
                        event_codes=spec.event_codes)
    return recording, truth


# Canonical scenarios

SCENARIO_CHANNELS = ('Fp1', 'Fp2', 'AF3', 'AF4', 'F3', 'F4', 'T7', 'T8',
                     'C3', 'C4', 'Cz', 'P3', 'P4', 'Pz', 'O1', 'O2')
SCENARIO_FRONTAL = ('Fp1', 'Fp2', 'AF3', 'AF4', 'F3', 'F4')
SCENARIO_FREQS_HZ = (9.6, 9.8, 10.0, 10.2, 10.4)

# oscillator weights on the posterior and temporal channels; C4 is the
# opposite pole, so locking aligns the remaining channels
_SCENARIO_WEIGHTS = {
    'Cz': (1.0, 0.4, 0.4, 0.0, 0.0),
    'C3': (0.5, 0.0, 0.0, 0.0, 0.5),
    'C4': (-0.8, -0.8, -0.8, -0.8, -0.8),
    'Pz': (0.5, 0.5, 0.4, 0.0, 0.0),
    'P3': (0.0, 1.0, 0.3, 0.0, 0.0),
    'P4': (0.0, 0.5, 0.0, 0.8, 0.0),
    'O1': (0.0, 0.0, 1.0, 0.0, 0.0),
    'O2': (0.0, 0.0, 0.5, 1.0, 0.0),
    'T7': (0.0, 0.0, 0.0, 0.0, 0.4),
    'T8': (0.0, 0.0, 0.0, 0.2, 0.3),
}

SCENARIO_KINDS = ('intervention', 'null', 'regional', 'independent')

# intervention scenario: beta-band (EMG-like) artifact bursts spread over each
# target interval, an amplitude-tracking evoked response on the ERP montage
# inside the stats window, and fixed theta/alpha/beta bursts after it
INTERVENTION_ARTIFACT_WEIGHT = 0.6
INTERVENTION_COUPLING_GAIN = 0.25
INTERVENTION_TRAIN = 4
MONTAGE_BURSTS = ((5.0, 0.30, 0.06, 2.0),)
LATE_BURSTS = ((6.0, 0.71, 0.04, 1.0), (10.5, 0.74, 0.035, 2.5), (22.0, 0.77, 0.02, 2.0))


def scenario_mixing():
    """16 x 5 mixing; frontal rows equal the channel mean so re-referencing cancels them"""
    weighted = np.array([_SCENARIO_WEIGHTS[ch] for ch in SCENARIO_CHANNELS
                         if ch not in SCENARIO_FRONTAL])
    frontal_row = weighted.sum(axis=0) / (len(SCENARIO_CHANNELS) - len(SCENARIO_FRONTAL))
    rows = [frontal_row if ch in SCENARIO_FRONTAL else np.array(_SCENARIO_WEIGHTS[ch])
            for ch in SCENARIO_CHANNELS]
    return np.vstack(rows)


def _topography(weights):
    """Per-channel weights from a {label: weight} map, zero elsewhere"""
    return np.array([float(weights.get(ch, 0.0)) for ch in SCENARIO_CHANNELS])


def intervention_evoked():
    """Evoked responses of the intervention scenario; both sum to zero over channels"""
    montage = EvokedResponse(topography=_topography({'Cz': 1.0, 'Pz': 1.0, 'C4': -2.0}),
                             bursts=MONTAGE_BURSTS, track_amplitude=True)
    late_channels = ('C3', 'Cz', 'P3', 'P4', 'Pz', 'O1', 'O2', 'T7', 'T8')
    late_weights = {ch: 1.0 for ch in late_channels}
    late_weights['C4'] = -float(len(late_channels))
    late = EvokedResponse(topography=_topography(late_weights), bursts=LATE_BURSTS)
    return (montage, late)


def scenario_spec(kind, n_trials=200, seed=0, fs=256.0, artifact_gain=20.0, base_coupling=1.0,
                  sigma=0.5, nontarget_every=5):
    """Canonical (network, spec) pairs for the end-to-end scenarios.

    intervention  beta-band frontal artifact bursts spread over each target
                  interval; the trial amplitude also drives the coupling boost
                  and an evoked response on the ERP montage
    null          no artifact and no event-locked coupling
    regional      frontal artifact only, coupling untouched
    independent   slow (sub-band) frontal artifact at random latencies, no coupling change
    """
    if kind not in SCENARIO_KINDS:
        raise SpecMismatch(f"Unknown scenario {kind!r}; choose from {', '.join(SCENARIO_KINDS)}")

    rng = np.random.default_rng(seed)
    omega = 2 * np.pi * np.asarray(SCENARIO_FREQS_HZ)
    net = OscillatorNetwork.fixed(omega, K=base_coupling, sigma=sigma, seed=seed)

    # every nontarget_every-th event is a nontarget
    n_events = n_trials + n_trials // (nontarget_every - 1)
    onsets = 1.0 + np.cumsum(1.2 + rng.uniform(0.0, 0.2, n_events)) - 1.2
    event_samples = np.round(onsets * fs).astype(np.int64)
    event_codes = tuple('2' if (i + 1) % nontarget_every == 0 else '1' for i in range(n_events))
    n_samples = int(event_samples[-1] + round(2.0 * fs))

    fields = dict(channel_labels=SCENARIO_CHANNELS, mixing=scenario_mixing(), fs=fs,
                  n_samples=n_samples, event_samples=event_samples, event_codes=event_codes,
                  noise_sd=0.3)
    frontal_artifact = _topography({'Fp1': 1.0, 'Fp2': 1.0})

    if kind == 'intervention':
        weight = INTERVENTION_ARTIFACT_WEIGHT
        spec = SynthSpec(artifact_gain=artifact_gain, coupling_gain=INTERVENTION_COUPLING_GAIN,
                         artifact_topography=_topography({'Fp1': weight, 'Fp2': weight}),
                         artifact_freq=22.0, artifact_width=0.06, artifact_train=INTERVENTION_TRAIN,
                         evoked=intervention_evoked(), **fields)
    elif kind == 'null':
        spec = SynthSpec(artifact_gain=0.0, coupling_gain=0.0, artifact_topography=frontal_artifact,
                         **fields)
    elif kind == 'regional':
        spec = SynthSpec(artifact_gain=artifact_gain, coupling_gain=0.0,
                         artifact_topography=frontal_artifact, **fields)
    else:
        spec = SynthSpec(artifact_gain=artifact_gain, coupling_gain=0.0, artifact_freq=1.0,
                         artifact_width=0.25, artifact_latency=0.35, artifact_jitter=0.5,
                         artifact_topography=frontal_artifact, **fields)
    return net, spec
