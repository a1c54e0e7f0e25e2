import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from errors import ConfigError

SOFTWARE_VERSION = "0.1.0"
LOG_LEVEL_ENV = 'PHASESYNC_LOG_LEVEL'

logger = logging.getLogger(__name__)


def configure_logging():
    """Configure root logging from the PHASESYNC_LOG_LEVEL environment variable"""
    level_name = os.environ.get(LOG_LEVEL_ENV, 'INFO').upper()
    level = logging.getLevelName(level_name)
    invalid = not isinstance(level, int)
    if invalid:
        level = logging.INFO
    logging.basicConfig(level=level,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    logging.getLogger().setLevel(level)
    # matplotlib is chatty at DEBUG
    logging.getLogger('matplotlib').setLevel(max(level, logging.WARNING))
    if invalid:
        logger.warning(f"Unknown {LOG_LEVEL_ENV}={level_name!r}, using INFO")
    return level


DEFAULT_BANDS = [['theta', 4.0, 8.0], ['alpha', 8.0, 13.0], ['beta', 13.0, 30.0]]


@dataclass
class PipelineConfig:
    """Every tunable that affects reported numbers"""

    inputs: list = field(default_factory=list)
    events_csv: str = ''
    reference: str = 'average'
    band: list = field(default_factory=lambda: [4.0, 30.0])
    fir_transition: float = 2.0
    epoch_window: list = field(default_factory=lambda: [-0.1, 0.8])
    stats_window: list = field(default_factory=lambda: [0.1, 0.6])
    cascade_window: list = field(default_factory=lambda: [0.0, 0.8])
    itc_freqs: list = field(default_factory=lambda: [20, 4.0, 30.0])
    bands: list = field(default_factory=lambda: [list(b) for b in DEFAULT_BANDS])
    target_codes: list = field(default_factory=lambda: ['1'])
    nontarget_codes: list = field(default_factory=lambda: ['2'])
    erp_channels: list = field(default_factory=lambda: ['Cz', 'CPz', 'Pz'])
    ica_enabled: bool = True
    ica_threshold: float = 0.30
    ica_seed: int = 0
    ica_n_components: int = 0
    ica_max_iter: int = 500
    ica_tol: float = 1e-6
    frontal_channels: list = field(default_factory=list)
    artifact_window_s: float = 0.05
    artifact_channels: list = field(default_factory=list)
    dose_bins: int = 4
    dose_min_trials: int = 10
    rolling_window_s: float = 0.1
    max_lag_s: float = 0.4
    output_dir: str = 'results'
    formats: list = field(default_factory=lambda: ['json', 'csv', 'svg'])

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        """Build a config from a plain dict, rejecting unknown keys"""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        config = cls(**data)
        ok, error = validate_config(config)
        if not ok:
            raise ConfigError(error)
        return config

    def updated(self, **overrides):
        """Copy with overrides applied and validated"""
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig.from_dict(data)


def _is_window(value):
    return (isinstance(value, (list, tuple)) and len(value) == 2
            and all(isinstance(v, (int, float)) for v in value) and value[0] < value[1])


def validate_config(config):
    """Validate a PipelineConfig, returning (ok, error message)"""
    if config.reference not in ('average', 'none'):
        return False, f"reference must be 'average' or 'none', got {config.reference!r}"

    for name in ('band', 'epoch_window', 'stats_window', 'cascade_window'):
        if not _is_window(getattr(config, name)):
            return False, f"{name} must be an increasing [low, high] pair"

    if config.band[0] <= 0:
        return False, 'band low edge must be positive'

    lo, hi = config.stats_window
    if lo < config.epoch_window[0] or hi > config.epoch_window[1]:
        return False, 'stats_window must lie inside epoch_window'

    if len(config.itc_freqs) != 3 or int(config.itc_freqs[0]) < 1:
        return False, 'itc_freqs must be [count, low Hz, high Hz]'
    if not config.itc_freqs[1] < config.itc_freqs[2]:
        return False, 'itc_freqs low must be below high'

    for band in config.bands:
        if len(band) != 3 or not _is_window(band[1:]):
            return False, f"Invalid cascade band {band!r}"

    if config.fir_transition <= 0:
        return False, 'fir_transition must be positive'
    if not 0 <= config.ica_threshold:
        return False, 'ica_threshold must be non-negative'
    if config.ica_n_components < 0:
        return False, 'ica_n_components must be >= 0 (0 means full rank)'
    if config.dose_bins < 2:
        return False, 'dose_bins must be at least 2'
    if config.artifact_window_s <= 0 or config.rolling_window_s <= 0 or config.max_lag_s <= 0:
        return False, 'window lengths must be positive'

    unknown_formats = set(config.formats) - {'json', 'csv', 'svg'}
    if unknown_formats:
        return False, f"Unknown report formats: {', '.join(sorted(unknown_formats))}"

    return True, None


def load_config(path=None):
    """Load a PipelineConfig from a JSON file; no path gives the defaults"""
    if not path:
        return PipelineConfig()

    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must contain a JSON object")
    # reports echo their config under "config"
    if 'config' in data and isinstance(data['config'], dict) and 'schema_version' in data:
        data = data['config']

    config = PipelineConfig.from_dict(data)
    logger.info(f"Loaded config from {path}")
    return config
