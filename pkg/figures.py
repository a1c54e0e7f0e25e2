import logging
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from utils import format_p, safe_filename  # noqa: E402

logger = logging.getLogger(__name__)

# fixed ids and no timestamp so identical reports give identical SVG bytes
plt.rcParams['svg.hashsalt'] = 'phasesync'
plt.rcParams['svg.fonttype'] = 'none'
SVG_METADATA = {'Date': None}


def _array(values):
    return np.array([np.nan if v is None else v for v in (values or [])], dtype=float)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata=SVG_METADATA)
    plt.close(fig)
    logger.debug(f"Wrote {path}")
    return path


def plot_sync_erp(arm, path):
    """Grand-average R(t) with the ERP on a second axis"""
    series = arm['series']
    times = _array(series.get('times'))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(times, _array(series.get('grand_r')), color='tab:blue', label='R(t)')
    ax.set_xlabel('Time (s)')
    ax.set_ylabel('Order parameter R', color='tab:blue')
    ax.axvline(0.0, color='grey', linewidth=0.8)
    twin = ax.twinx()
    twin.plot(times, _array(series.get('erp')), color='tab:red', label='ERP')
    twin.set_ylabel('ERP (uV)', color='tab:red')
    ax.set_title(f"{arm['arm']}: R vs ERP (r = {arm['global_r']['r']:.3f})"
                 if arm['global_r']['r'] is not None else f"{arm['arm']}: R vs ERP")
    return _save(fig, path)


def plot_cascade(arm, path):
    series = arm['series']
    times = _array(series.get('times'))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for name, values in sorted(series.get('bands', {}).items()):
        peak = arm['band_peaks'].get(name, {})
        latency = peak.get('latency_s')
        label = f"{name} (peak {latency * 1000:.0f} ms)" if latency is not None else name
        ax.plot(times, _array(values), label=label)
    ax.set_xlabel('Time (s)')
    ax.set_ylabel('Order parameter R')
    ax.set_title(f"{arm['arm']}: band cascade")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_rolling(arm, path):
    series = arm['series']
    fig, ax = plt.subplots(figsize=(7, 3.0))
    ax.plot(_array(series.get('rolling_times')), _array(series.get('rolling_r')), color='tab:purple')
    ax.axhline(0.0, color='grey', linewidth=0.8)
    ax.set_ylim(-1.05, 1.05)
    ax.set_xlabel('Window start (s)')
    ax.set_ylabel('Rolling r (R vs ERP)')
    ax.set_title(f"{arm['arm']}: rolling correlation")
    return _save(fig, path)


def plot_trial_scatter(arm, path):
    peaks = arm['trial_peaks']
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(_array(peaks.get('peak_erp')), _array(peaks.get('peak_r')), s=10, alpha=0.6)
    ax.set_xlabel('Peak |ERP| (uV)')
    ax.set_ylabel('Peak R')
    trial_r = arm['trial_r']
    ax.set_title(f"{arm['arm']}: trials (r = {trial_r['r']:.3f}, {format_p(trial_r['p'])})"
                 if trial_r['r'] is not None else f"{arm['arm']}: trials")
    return _save(fig, path)


PLOTS = (
    ('sync_erp', plot_sync_erp),
    ('cascade', plot_cascade),
    ('rolling', plot_rolling),
    ('trial_scatter', plot_trial_scatter),
)


def render_all(report, figures_dir):
    """Write every figure for every arm in a report dict, returning the paths"""
    figures_dir = Path(figures_dir)
    figures_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for arm_name, arm in sorted(report.get('arms', {}).items()):
        for plot_name, plot in PLOTS:
            path = figures_dir / safe_filename(f"{arm_name}_{plot_name}", '.svg')
            written.append(plot(arm, path))
    logger.info(f"Rendered {len(written)} figures into {figures_dir}")
    return written
