import logging
import re
import warnings

import numpy as np
from scipy import linalg
from scipy import stats as scipy_stats
from scipy.ndimage import uniform_filter1d

from errors import (AllSparse, ConstantInput, InsufficientData, LengthMismatch, NonFiniteInput,
                    NotConverged, RankDeficient, SolverFailure, TooFewChannels, ValidationError)
from models import ArtifactSeries, DoseBin, IcaModel
from stats import pearson

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
GAUSSIAN_KURTOSIS = 0.2
REGIONS = ('frontal', 'temporal', 'occipital', 'other')

_ELECTRODE = re.compile(r'^(FP|AF|FC|FT|CP|TP|PO|F|C|T|P|O|I|A|M|N)(Z|\d{1,2})$')
_REGION_BY_PREFIX = {
    'FP': 'frontal', 'AF': 'frontal', 'F': 'frontal',
    'FT': 'temporal', 'T': 'temporal', 'TP': 'temporal',
    'O': 'occipital', 'PO': 'occipital',
}


# FastICA


def _eigh(matrix, what):
    try:
        return linalg.eigh(matrix)
    except (linalg.LinAlgError, ValueError) as e:
        raise SolverFailure(f"Eigendecomposition of the {what} failed: {e}") from e


def _sym_decorrelation(W):
    """W <- (W W^T)^{-1/2} W"""
    s, u = _eigh(W @ W.T, 'unmixing Gram matrix')
    if s.min() <= 0:
        raise SolverFailure("Unmixing matrix became singular")
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def fastica(data, n_components=None, seed=0, max_iter=500, tol=1e-6):
    """Symmetric FastICA with a tanh contrast on PCA-whitened data.

    n_components defaults to the covariance rank, so an average-referenced
    recording loses its null dimension automatically. The fit is
    deterministic for a given seed.
    """
    data = np.asarray(data, dtype=float)
    if not np.isfinite(data).all():
        raise NonFiniteInput("ICA input contains NaN or infinite samples")
    n_channels, n_samples = data.shape
    means = data.mean(axis=1)
    centered = data - means[:, None]

    cov = centered @ centered.T / n_samples
    eigvals, eigvecs = _eigh(cov, 'data covariance')
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    if eigvals[0] <= 0:
        raise RankDeficient("Data covariance is zero")
    rank = int(np.sum(eigvals > RANK_TOL * eigvals[0]))

    if n_components is None:
        n_components = rank
        if rank < n_channels:
            logger.info(f"Covariance rank {rank} < {n_channels} channels; "
                        f"dropping {n_channels - rank} whitening dimension(s)")
    elif n_components > rank:
        raise RankDeficient(f"Requested {n_components} components but covariance rank is {rank}")

    d = eigvals[:n_components]
    E = eigvecs[:, :n_components]
    whitening = (E / np.sqrt(d)).T
    Z = whitening @ centered

    rng = np.random.default_rng(seed)
    W = _sym_decorrelation(rng.standard_normal((n_components, n_components)))
    converged = False
    for n_iter in range(1, max_iter + 1):
        gwz = np.tanh(W @ Z)
        g_prime = (1.0 - gwz ** 2).mean(axis=1)
        W1 = _sym_decorrelation(gwz @ Z.T / n_samples - g_prime[:, None] * W)
        lim = np.max(np.abs(np.abs(np.einsum('ij,ij->i', W1, W)) - 1.0))
        W = W1
        if lim < tol:
            converged = True
            break

    if converged:
        logger.info(f"FastICA converged in {n_iter} iterations ({n_components} components)")
    else:
        warnings.warn(NotConverged(f"FastICA did not converge in {max_iter} iterations"))
        logger.warning(f"FastICA stopped at {max_iter} iterations without converging")

    sources = W @ Z
    kurt = scipy_stats.kurtosis(sources, axis=1, fisher=True)
    identifiable = bool(np.any(np.abs(kurt) >= GAUSSIAN_KURTOSIS))
    if not identifiable:
        logger.warning("All ICA sources look Gaussian; the unmixing rotation is arbitrary")

    mixing = (E * np.sqrt(d)) @ W.T
    return IcaModel(whitening=whitening, unmixing=W, mixing=mixing, means=means, n_iter=n_iter,
                    seed=seed, converged=converged, identifiable=identifiable)


def identify_artifact_components(model, data, frontal_idx, threshold=0.30):
    """Components whose max |r| with any frontal channel reaches threshold"""
    frontal_idx = list(frontal_idx)
    if not frontal_idx:
        raise TooFewChannels("Artifact flagging needs at least one frontal channel")

    data = np.asarray(data, dtype=float)
    sources = model.sources(data)
    flagged = []
    for i, source in enumerate(sources):
        best = 0.0
        for ch in frontal_idx:
            try:
                best = max(best, abs(pearson(source, data[ch]).r))
            except ConstantInput:
                continue
        if best >= threshold:
            flagged.append(i)
        logger.debug(f"Component {i}: max frontal |r| = {best:.3f}")

    logger.info(f"Flagged {len(flagged)} of {model.n_components} components "
                f"at |r| >= {threshold}: {flagged}")
    return flagged


def remove_components(model, data, flagged):
    """Subtract the flagged components' back-projection from the data"""
    data = np.asarray(data, dtype=float)
    flagged = sorted(set(int(i) for i in flagged))
    if any(i < 0 or i >= model.n_components for i in flagged):
        raise ValidationError(f"Flagged components {flagged} outside 0..{model.n_components - 1}")
    if not flagged:
        return data.copy()
    sources = model.sources(data)
    return data - model.mixing[:, flagged] @ sources[flagged]


# Artifact magnitude


def artifact_magnitude(epochs, channels, window_samples):
    """Sliding-window RMS of the mean over the given channels, per trial"""
    channels = list(channels)
    if not channels:
        raise TooFewChannels("Artifact magnitude needs at least one channel")
    picked = epochs.pick_channels(channels)
    if picked.n_channels == 0:
        raise TooFewChannels(f"None of {channels} are in the epoch set")

    window_samples = max(1, int(window_samples))
    mean_signal = picked.data.mean(axis=1)
    power = uniform_filter1d(mean_signal ** 2, size=window_samples, axis=-1, mode='nearest')
    rms = np.sqrt(np.maximum(power, 0.0))
    return ArtifactSeries(values=rms, channels=picked.channel_labels, fs=epochs.fs,
                          tmin=epochs.tmin, window_samples=window_samples)


# Regions


def _electrode_name(label):
    name = label.split('-')[0].upper()
    if name.startswith('EEG'):
        name = name[3:]
    return re.sub(r'[^A-Z0-9]', '', name)


def region_of(label):
    match = _ELECTRODE.match(_electrode_name(label))
    if not match:
        return None
    return _REGION_BY_PREFIX.get(match.group(1), 'other')


def regional_groups(labels):
    """Group 10-20/10-10 channel labels into frontal, temporal, occipital and other"""
    groups = {region: [] for region in REGIONS}
    for label in labels:
        region = region_of(label)
        if region is None:
            logger.warning(f"Channel {label!r} is not a 10-20 label; grouped as other")
            region = 'other'
        logger.debug(f"Channel {label} -> {region}")
        groups[region].append(label)
    return groups


def regional_correlations(epochs, per_trial_sync, groups, window_samples, sample_mask):
    """Per region: mean, sd and sem over trials of pearson(artifact RMS, R) within the mask"""
    results = {}
    for region, labels in groups.items():
        if not labels:
            continue
        series = artifact_magnitude(epochs, labels, window_samples).values
        rs = []
        for trial in range(epochs.n_trials):
            try:
                rs.append(pearson(series[trial, sample_mask], per_trial_sync[trial, sample_mask]).r)
            except ConstantInput:
                continue
        if not rs:
            continue
        rs = np.asarray(rs)
        sd = float(rs.std(ddof=1)) if len(rs) > 1 else float('nan')
        results[region] = {'mean_r': float(rs.mean()), 'sd': sd,
                           'sem': sd / np.sqrt(len(rs)) if len(rs) > 1 else float('nan'),
                           'n_trials': len(rs), 'channels': list(labels)}
    return results


# Dose response


def dose_response_bins(amplitudes, peak_r, peak_erp, n_bins=4, min_trials=10):
    """Pearson(peak R, peak |ERP|) within quantile bins of artifact amplitude"""
    if n_bins < 2:
        raise InsufficientData(f"Dose-response needs at least 2 bins, got {n_bins}")
    amplitudes = np.asarray(amplitudes, dtype=float)
    peak_r = np.asarray(peak_r, dtype=float)
    peak_erp = np.abs(np.asarray(peak_erp, dtype=float))
    if not len(amplitudes) == len(peak_r) == len(peak_erp):
        raise LengthMismatch(f"Dose-response inputs differ in length: {len(amplitudes)}, "
                             f"{len(peak_r)}, {len(peak_erp)}")
    if len(amplitudes) == 0:
        logger.warning("Dose-response has no trials; no bins formed")
        return []
    if not np.isfinite(amplitudes).all():
        raise NonFiniteInput("Artifact amplitudes contain NaN or infinite values")

    edges = np.quantile(amplitudes, np.linspace(0.0, 1.0, n_bins + 1))
    assignment = np.searchsorted(edges[1:-1], amplitudes, side='right')

    bins = []
    for b in range(n_bins):
        members = assignment == b
        n = int(members.sum())
        sparse = n < min_trials
        corr = None
        if n >= 3:
            try:
                corr = pearson(peak_r[members], peak_erp[members])
            except ConstantInput:
                corr = None
        if sparse:
            logger.warning(f"Dose bin {b} [{edges[b]:.3g}, {edges[b + 1]:.3g}] has only {n} trials")
        bins.append(DoseBin(lower=float(edges[b]), upper=float(edges[b + 1]), n=n, corr=corr,
                            sparse=sparse))

    if all(b.sparse for b in bins):
        raise AllSparse(f"Every dose bin has fewer than {min_trials} trials")
    return bins
