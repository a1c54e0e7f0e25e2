import json
import logging
import math
from dataclasses import replace
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

from errors import (CorruptContainer, InconsistentRecord, InvalidHeader, NoMatchingEvents,
                    TooFewChannels, TruncatedFile, VersionMismatch, WindowOutOfRange)
from models import EdfChannel, EdfHeader, EpochSet, GroundTruth, IcaModel, Recording
from utils import clean_event_code, sanitize_plain_text

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
HEADER_FILE = 'header.json'
DATA_FILE = 'data.f64le'

# Fixed-width per-channel header fields, in file order
_CHANNEL_FIELDS = [
    ('label', 16), ('transducer', 80), ('physical_dimension', 8),
    ('physical_min', 8), ('physical_max', 8), ('digital_min', 8), ('digital_max', 8),
    ('prefilter', 80), ('samples_per_record', 8), ('reserved', 32),
]

_UNIT_SCALE = {'uv': 1.0, 'µv': 1.0, 'mv': 1e3, 'v': 1e6, 'nv': 1e-3}


# EDF


def _ascii(raw):
    return raw.decode('latin-1').strip()


def _number(raw, name, cast=float):
    text = _ascii(raw)
    try:
        value = float(text)
        if not math.isfinite(value):
            raise ValueError("non-finite")
        return int(value) if cast is int else value
    except (ValueError, OverflowError) as e:
        raise InvalidHeader(f"Header field {name} is not a finite number: {text!r}") from e


def _start_datetime(date_text, time_text):
    try:
        day, month, year = (int(p) for p in date_text.split('.'))
        hour, minute, second = (int(p) for p in time_text.split('.'))
    except ValueError:
        logger.warning(f"Unparseable EDF start date {date_text!r} {time_text!r}")
        return None
    # EDF two-digit years: 85-99 -> 1985-1999, 00-84 -> 2000-2084
    year += 1900 if year >= 85 else 2000
    try:
        return datetime(year, month, day, hour, minute, second)
    except ValueError:
        logger.warning(f"Invalid EDF start date {date_text!r} {time_text!r}")
        return None


def parse_edf_header(raw):
    """Parse the fixed-width ASCII header of an EDF file"""
    if len(raw) < 256:
        raise TruncatedFile(f"EDF header needs 256 bytes, got {len(raw)}")

    version = _ascii(raw[0:8])
    patient_id = sanitize_plain_text(_ascii(raw[8:88]))
    recording_id = sanitize_plain_text(_ascii(raw[88:168]))
    start = _start_datetime(_ascii(raw[168:176]), _ascii(raw[176:184]))
    header_bytes = _number(raw[184:192], 'header_bytes', int)
    n_records = _number(raw[236:244], 'n_records', int)
    record_duration = _number(raw[244:252], 'record_duration', float)
    n_channels = _number(raw[252:256], 'n_channels', int)

    if n_channels <= 0:
        raise InvalidHeader(f"EDF header declares {n_channels} channels")
    if header_bytes != 256 + 256 * n_channels:
        raise InvalidHeader(
            f"Header length {header_bytes} does not match {n_channels} channels "
            f"(expected {256 + 256 * n_channels})")
    if record_duration <= 0:
        raise InvalidHeader(f"Record duration must be positive, got {record_duration}")
    if n_records < -1:
        raise InvalidHeader(f"Invalid record count {n_records}")
    if len(raw) < header_bytes:
        raise TruncatedFile(f"EDF header declares {header_bytes} bytes, file has {len(raw)}")

    fields = {}
    offset = 256
    for name, width in _CHANNEL_FIELDS:
        fields[name] = [raw[offset + i * width: offset + (i + 1) * width] for i in range(n_channels)]
        offset += width * n_channels

    channels = []
    for i in range(n_channels):
        channel = EdfChannel(
            label=_ascii(fields['label'][i]),
            physical_dimension=_ascii(fields['physical_dimension'][i]),
            physical_min=_number(fields['physical_min'][i], 'physical_min'),
            physical_max=_number(fields['physical_max'][i], 'physical_max'),
            digital_min=_number(fields['digital_min'][i], 'digital_min', int),
            digital_max=_number(fields['digital_max'][i], 'digital_max', int),
            samples_per_record=_number(fields['samples_per_record'][i], 'samples_per_record', int),
            transducer=sanitize_plain_text(_ascii(fields['transducer'][i])),
            prefilter=sanitize_plain_text(_ascii(fields['prefilter'][i])),
        )
        if channel.digital_min >= channel.digital_max:
            raise InvalidHeader(f"Channel {channel.label!r}: digital_min >= digital_max")
        if channel.physical_min == channel.physical_max:
            raise InvalidHeader(f"Channel {channel.label!r}: physical_min == physical_max")
        if channel.samples_per_record <= 0:
            raise InvalidHeader(f"Channel {channel.label!r}: samples per record must be positive")
        channels.append(channel)

    return EdfHeader(version=version, patient_id=patient_id, recording_id=recording_id,
                     start_datetime=start, header_bytes=header_bytes, n_records=n_records,
                     record_duration_s=record_duration, channels=tuple(channels))


def _parse_annotations(raw_bytes, fs):
    """Events from EDF+ time-stamped annotation lists"""
    events = []
    text = raw_bytes.decode('latin-1')
    for tal in text.split('\x00'):
        if not tal or '\x14' not in tal:
            continue
        parts = tal.split('\x14')
        onset_text = parts[0].split('\x15')[0]
        try:
            onset = float(onset_text)
        except ValueError:
            logger.warning(f"Skipping annotation with bad onset {onset_text!r}")
            continue
        for annotation in parts[1:]:
            # empty entries are record timekeeping
            if annotation:
                events.append((int(round(onset * fs)), clean_event_code(annotation)))
    return events


def parse_edf(raw):
    """Parse a complete EDF file held in memory into a Recording in microvolts"""
    header = parse_edf_header(raw)
    payload = raw[header.header_bytes:]
    record_bytes = header.record_bytes

    n_records = header.n_records
    if n_records == -1:
        if len(payload) % record_bytes:
            raise InconsistentRecord(
                f"Payload of {len(payload)} bytes is not a whole number of {record_bytes}-byte records")
        n_records = len(payload) // record_bytes
        logger.info(f"Record count unset in header, resolved to {n_records} from payload")

    expected = n_records * record_bytes
    if len(payload) < expected:
        raise TruncatedFile(f"EDF payload has {len(payload)} bytes, header declares {expected}")
    if len(payload) > expected:
        raise InconsistentRecord(
            f"EDF payload has {len(payload) - expected} bytes beyond {n_records} declared records")

    spr = np.array([ch.samples_per_record for ch in header.channels])
    offsets = np.concatenate([[0], np.cumsum(spr)])
    records = np.frombuffer(payload, dtype='<i2', count=expected // 2).reshape(n_records, offsets[-1])

    data_idx = [i for i, ch in enumerate(header.channels) if not ch.is_annotation()]
    if not data_idx:
        raise InvalidHeader("EDF file has no signal channels")

    rates = {header.channels[i].samples_per_record for i in data_idx}
    if len(rates) > 1:
        raise InconsistentRecord(f"Signal channels differ in samples per record: {sorted(rates)}")
    fs = spr[data_idx[0]] / header.record_duration_s

    signals = []
    for i in data_idx:
        ch = header.channels[i]
        digital = records[:, offsets[i]:offsets[i + 1]].reshape(-1).astype(np.float64)
        gain = (ch.physical_max - ch.physical_min) / (ch.digital_max - ch.digital_min)
        physical = (digital - ch.digital_min) * gain + ch.physical_min
        scale = _UNIT_SCALE.get(ch.physical_dimension.lower())
        if scale is None:
            logger.warning(f"Unknown unit {ch.physical_dimension!r} on {ch.label}, assuming uV")
        elif scale != 1.0:
            physical = physical * scale
        signals.append(physical)
    data = np.vstack(signals)

    events = []
    for i, ch in enumerate(header.channels):
        if ch.is_annotation():
            tal_bytes = records[:, offsets[i]:offsets[i + 1]].tobytes()
            events.extend(_parse_annotations(tal_bytes, fs))

    n_samples = data.shape[1]
    kept = [(s, c) for s, c in events if 0 <= s < n_samples]
    if len(kept) < len(events):
        logger.warning(f"Dropped {len(events) - len(kept)} annotations outside the recording")

    logger.info(f"Parsed EDF: {len(data_idx)} channels, {n_samples} samples at {fs:g} Hz, "
                f"{len(kept)} events")
    return Recording(channel_labels=tuple(header.channels[i].label for i in data_idx), fs=fs,
                     data=data, events=tuple(kept), header=header)


def read_events_csv(path):
    """Read a sidecar events file with columns sample_index,code"""
    try:
        frame = pd.read_csv(path, dtype={'code': str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InvalidHeader(f"Cannot read events CSV {path}: {e}") from e

    missing = {'sample_index', 'code'} - set(frame.columns)
    if missing:
        raise InvalidHeader(f"Events CSV {path} is missing columns: {', '.join(sorted(missing))}")

    frame = frame.dropna(subset=['sample_index', 'code'])
    return [(int(s), clean_event_code(c)) for s, c in zip(frame['sample_index'], frame['code'])]


def read_edf(path, events_csv=None):
    """Read an EDF file, optionally taking events from a sidecar CSV"""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise TruncatedFile(f"Cannot read {path}: {e}") from e

    recording = parse_edf(raw)
    if events_csv:
        events = read_events_csv(events_csv)
        logger.info(f"Using {len(events)} events from {events_csv}")
        recording = replace(recording, events=tuple(events))
    return recording


# Preprocessing


def average_reference(recording):
    """Re-reference every channel to the instantaneous mean of all channels"""
    if recording.n_channels < 2:
        raise TooFewChannels(f"Average reference needs >= 2 channels, got {recording.n_channels}")
    data = recording.data - recording.data.mean(axis=0, keepdims=True)
    return recording.with_data(data)


def epoch(recording, codes, tmin, tmax, target_codes=None):
    """Cut stimulus-locked trials around every event whose code is in codes.

    The window runs from round(tmin * fs) to round(tmin * fs) + n_times - 1
    samples around each event, n_times = round((tmax - tmin) * fs) + 1.
    Trials whose window leaves the recording are dropped and counted.
    Labels are 'target' for codes in target_codes (all codes by default),
    otherwise 'nontarget'.

    Returns (EpochSet, drop tally).
    """
    if not tmin < tmax:
        raise WindowOutOfRange(f"Epoch window must satisfy tmin < tmax, got ({tmin}, {tmax})")

    codes = {str(c) for c in codes}
    target_codes = codes if target_codes is None else {str(c) for c in target_codes}
    matching = [(s, c) for s, c in recording.events if c in codes]
    if not matching:
        raise NoMatchingEvents(f"No events with codes {sorted(codes)} in recording")

    fs = recording.fs
    n_times = int(round((tmax - tmin) * fs)) + 1
    offset = int(round(tmin * fs))

    trials, labels = [], []
    dropped = 0
    for sample, code in matching:
        start = sample + offset
        stop = start + n_times
        if start < 0 or stop > recording.n_samples:
            dropped += 1
            continue
        trials.append(recording.data[:, start:stop])
        labels.append('target' if code in target_codes else 'nontarget')

    if dropped:
        logger.info(f"Dropped {dropped} of {len(matching)} events too close to the recording edges")
    if not trials:
        logger.warning("Every matching event was dropped; epoch set is empty")

    data = np.stack(trials) if trials else np.zeros((0, recording.n_channels, n_times))
    epochs = EpochSet(data=data, fs=fs, tmin=tmin, tmax=tmax, labels=tuple(labels),
                      channel_labels=recording.channel_labels)
    return epochs, dropped


# Neutral container


def _json_dump(header):
    return json.dumps(header, sort_keys=True, indent=2) + '\n'


def save_container(path, kind, fields, arrays):
    """Write a container directory: header.json plus one little-endian float64 blob.

    arrays is an ordered list of (name, ndarray); they are concatenated row-major.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    header = dict(fields)
    header['schema_version'] = SCHEMA_VERSION
    header['kind'] = kind
    header['arrays'] = [{'name': name, 'shape': list(np.shape(arr))} for name, arr in arrays]

    blob = b''.join(np.ascontiguousarray(arr, dtype='<f8').tobytes(order='C') for _, arr in arrays)
    (path / HEADER_FILE).write_text(_json_dump(header), encoding='utf-8')
    (path / DATA_FILE).write_bytes(blob)
    logger.debug(f"Saved {kind} container to {path}")
    return path


def load_container(path, kind=None):
    """Read a container directory, returning (header dict, {name: ndarray})"""
    path = Path(path)
    try:
        header = json.loads((path / HEADER_FILE).read_text(encoding='utf-8'))
        blob = (path / DATA_FILE).read_bytes()
    except FileNotFoundError as e:
        raise CorruptContainer(f"Container {path} is missing {e.filename}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptContainer(f"Cannot read container {path}: {e}") from e

    if not isinstance(header, dict):
        raise CorruptContainer(f"Container header in {path} is not an object")
    version = header.get('schema_version')
    if version != SCHEMA_VERSION:
        raise VersionMismatch(f"Container schema {version!r}, expected {SCHEMA_VERSION!r}")
    if kind is not None and header.get('kind') != kind:
        raise CorruptContainer(f"Container {path} holds {header.get('kind')!r}, expected {kind!r}")

    arrays = {}
    offset = 0
    try:
        for spec in header['arrays']:
            shape = tuple(int(n) for n in spec['shape'])
            count = int(np.prod(shape, dtype=np.int64))
            if offset + count * 8 > len(blob):
                raise CorruptContainer(f"Data blob too short for array {spec['name']!r}")
            if count == 0:
                arrays[spec['name']] = np.zeros(shape)
                continue
            arrays[spec['name']] = np.frombuffer(blob, dtype='<f8', count=count,
                                                 offset=offset).reshape(shape).astype(np.float64)
            offset += count * 8
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptContainer(f"Malformed array table in {path}: {e}") from e
    if offset != len(blob):
        raise CorruptContainer(f"Data blob has {len(blob) - offset} unexpected trailing bytes")

    return header, arrays


def _require(header, keys, path):
    missing = [k for k in keys if k not in header]
    if missing:
        raise CorruptContainer(f"Container {path} is missing fields: {', '.join(missing)}")


def save_recording(path, recording):
    fields = {'fs': recording.fs, 'channel_labels': list(recording.channel_labels),
              'events': [[s, c] for s, c in recording.events]}
    return save_container(path, 'recording', fields, [('data', recording.data)])


def load_recording(path):
    header, arrays = load_container(path, 'recording')
    _require(header, ['fs', 'channel_labels', 'events'], path)
    data = arrays.get('data')
    if data is None or data.ndim != 2 or data.shape[0] != len(header['channel_labels']):
        raise CorruptContainer(f"Recording data in {path} does not match its channel labels")
    try:
        return Recording(channel_labels=tuple(header['channel_labels']), fs=header['fs'], data=data,
                         events=tuple((int(s), str(c)) for s, c in header['events']))
    except InconsistentRecord as e:
        raise CorruptContainer(str(e)) from e


def save_epochs(path, epochs):
    fields = {'fs': epochs.fs, 'tmin': epochs.tmin, 'tmax': epochs.tmax,
              'labels': list(epochs.labels), 'channel_labels': list(epochs.channel_labels),
              'n_trials': epochs.n_trials}
    return save_container(path, 'epochs', fields, [('data', epochs.data)])


def load_epochs(path):
    header, arrays = load_container(path, 'epochs')
    _require(header, ['fs', 'tmin', 'tmax', 'labels', 'channel_labels', 'n_trials'], path)
    data = arrays.get('data')
    if data is None or data.ndim != 3:
        raise CorruptContainer(f"Epoch data in {path} is not a 3-D tensor")
    if data.shape[0] != header['n_trials'] or len(header['labels']) != header['n_trials']:
        raise CorruptContainer(
            f"Container {path} declares {header['n_trials']} trials, "
            f"found {data.shape[0]} in data and {len(header['labels'])} labels")
    try:
        return EpochSet(data=data, fs=header['fs'], tmin=header['tmin'], tmax=header['tmax'],
                        labels=tuple(header['labels']),
                        channel_labels=tuple(header['channel_labels']))
    except InconsistentRecord as e:
        raise CorruptContainer(str(e)) from e


def save_ica(path, model, channel_labels=()):
    fields = {'n_iter': model.n_iter, 'seed': model.seed, 'converged': model.converged,
              'identifiable': model.identifiable, 'channel_labels': list(channel_labels)}
    arrays = [('whitening', model.whitening), ('unmixing', model.unmixing),
              ('mixing', model.mixing), ('means', model.means)]
    return save_container(path, 'ica', fields, arrays)


def load_ica(path):
    header, arrays = load_container(path, 'ica')
    _require(header, ['n_iter', 'seed', 'converged', 'identifiable'], path)
    try:
        return IcaModel(whitening=arrays['whitening'], unmixing=arrays['unmixing'],
                        mixing=arrays['mixing'], means=arrays['means'], n_iter=header['n_iter'],
                        seed=header['seed'], converged=header['converged'],
                        identifiable=header['identifiable'])
    except KeyError as e:
        raise CorruptContainer(f"ICA container {path} is missing array {e}") from e


def save_ground_truth(path, truth):
    fields = {'fs': truth.fs, 'event_samples': [int(s) for s in truth.event_samples],
              'event_codes': list(truth.event_codes)}
    arrays = [('phases', truth.phases), ('coupling', truth.coupling),
              ('artifact', truth.artifact), ('trial_amplitudes', truth.trial_amplitudes)]
    return save_container(path, 'ground_truth', fields, arrays)


def load_ground_truth(path):
    header, arrays = load_container(path, 'ground_truth')
    _require(header, ['fs', 'event_samples', 'event_codes'], path)
    try:
        return GroundTruth(fs=header['fs'], phases=arrays['phases'], coupling=arrays['coupling'],
                           artifact=arrays['artifact'], trial_amplitudes=arrays['trial_amplitudes'],
                           event_samples=np.asarray(header['event_samples'], dtype=np.int64),
                           event_codes=tuple(header['event_codes']))
    except KeyError as e:
        raise CorruptContainer(f"Ground-truth container {path} is missing array {e}") from e


def load_dataset(path):
    """Load a Recording or EpochSet container, whichever the directory holds"""
    header, _ = load_container(path)
    kind = header.get('kind')
    if kind == 'recording':
        return load_recording(path)
    if kind == 'epochs':
        return load_epochs(path)
    raise CorruptContainer(f"Container {path} holds {kind!r}, not a dataset")


def save_dataset(path, dataset):
    if isinstance(dataset, EpochSet):
        return save_epochs(path, dataset)
    return save_recording(path, dataset)
