import html
import math
import re
from dataclasses import asdict, is_dataclass

import bleach
import numpy as np
from werkzeug.utils import secure_filename

_CONTROL_CHARS = re.compile(r'[\x00-\x1f\x7f]')


def sanitize_plain_text(text):
    """Strip markup from free text read out of data files"""
    if not text:
        return text
    # bleach escapes what it keeps; reports hold plain text, not HTML
    return html.unescape(bleach.clean(text, tags=[], attributes={}, strip=True)).strip()


def clean_event_code(text):
    """Event codes are matched verbatim, so only control characters are removed"""
    return _CONTROL_CHARS.sub('', str(text)).strip()


def safe_filename(name, suffix=''):
    """Build a filesystem-safe output file name"""
    cleaned = secure_filename(f"{name}{suffix}")
    if not cleaned:
        raise ValueError(f"Cannot derive a file name from {name!r}")
    return cleaned


def wrap_phase(theta):
    """Wrap angles into (-pi, pi]"""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2 * np.pi)
    # np.mod rounds tiny negative inputs up to 2 pi
    return np.where(wrapped <= -np.pi, np.pi, wrapped)


def samples_for(seconds, fs):
    """Nearest whole number of samples for a duration"""
    return int(round(seconds * fs))


def to_jsonable(value):
    """Convert results into plain JSON types; non-finite floats become None"""
    if is_dataclass(value) and not isinstance(value, type):
        if hasattr(value, 'to_dict'):
            return to_jsonable(value.to_dict())
        return to_jsonable(asdict(value))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def format_p(p):
    """Format a p-value for tables, using threshold notation below 1e-4"""
    if p is None:
        return 'n/a'
    if p < 0.0001:
        return 'p < 0.0001'
    if p < 0.05:
        return f"p = {p:.4f}"
    return f"p = {p:.2f}"
