"""Reader for a subset of FCS 3.0 / 3.1 files.

Supported: list-mode data ($MODE L), float32 ($DATATYPE F, $PnB 32) and
unsigned integer ($DATATYPE I, $PnB 16 or 32) events, little- or
big-endian ($BYTEORD 1,2,3,4 or 4,3,2,1). Segment offsets follow the
standard's inclusive convention; when the header data offsets are zero
the $BEGINDATA/$ENDDATA keywords are used instead. Anything outside
this subset raises UnsupportedFormatError; structural damage raises
CorruptFileError.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import CorruptFileError, UnsupportedFormatError
from .tables import EventTable, LabeledSample, MarkerPanel

_VERSIONS = (b"FCS3.0", b"FCS3.1")


def _header_offset(raw, lo, hi, what):
    field = raw[lo:hi]
    try:
        return int(field.decode("ascii").strip() or "0")
    except (UnicodeDecodeError, ValueError):
        raise CorruptFileError(f"header {what} offset is not ASCII numeric: {field!r}") from None


def _parse_text_segment(raw, start, end):
    if end <= start or end >= len(raw):
        raise CorruptFileError(f"text segment offsets {start}..{end} out of bounds")
    segment = raw[start : end + 1]
    delim = segment[:1]
    if not delim:
        raise CorruptFileError("empty text segment")
    try:
        text = segment.decode("latin-1")
    except UnicodeDecodeError:
        raise CorruptFileError("text segment is not decodable") from None
    d = text[0]
    inner = text[1:]
    if inner.endswith(d):
        inner = inner[:-1]
    parts = inner.split(d)
    if any(p == "" for p in parts):
        raise UnsupportedFormatError("escaped delimiters in text segment are not supported")
    if len(parts) % 2:
        raise CorruptFileError("text segment has a key without a value")
    keywords = {}
    for key, value in zip(parts[::2], parts[1::2]):
        keywords[key.strip().upper()] = value
    return keywords


def _require(keywords, key):
    if key not in keywords:
        raise CorruptFileError(f"required keyword {key} missing from text segment")
    return keywords[key]


def _require_int(keywords, key):
    value = _require(keywords, key)
    try:
        return int(value.strip())
    except ValueError:
        raise CorruptFileError(f"keyword {key} is not an integer: {value!r}") from None


def parse_fcs(path):
    """Read one FCS file into a LabeledSample (without labels)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 58:
        raise CorruptFileError(f"{path}: file shorter than an FCS header")
    version = raw[:6]
    if version not in _VERSIONS:
        raise UnsupportedFormatError(
            f"{path}: unsupported FCS version {version!r} (supported: FCS3.0, FCS3.1)"
        )
    text_start = _header_offset(raw, 10, 18, "text start")
    text_end = _header_offset(raw, 18, 26, "text end")
    data_start = _header_offset(raw, 26, 34, "data start")
    data_end = _header_offset(raw, 34, 42, "data end")

    keywords = _parse_text_segment(raw, text_start, text_end)

    mode = _require(keywords, "$MODE").strip().upper()
    if mode != "L":
        raise UnsupportedFormatError(f"{path}: only list mode ($MODE L) is supported, got {mode!r}")
    byteord = _require(keywords, "$BYTEORD").strip()
    if byteord == "1,2,3,4":
        endian = "<"
    elif byteord == "4,3,2,1":
        endian = ">"
    else:
        raise UnsupportedFormatError(f"{path}: unsupported $BYTEORD {byteord!r}")
    datatype = _require(keywords, "$DATATYPE").strip().upper()
    if datatype not in ("F", "I"):
        raise UnsupportedFormatError(f"{path}: unsupported $DATATYPE {datatype!r}")

    n_params = _require_int(keywords, "$PAR")
    n_events = _require_int(keywords, "$TOT")
    if n_params < 1:
        raise CorruptFileError(f"{path}: $PAR must be positive, got {n_params}")
    if n_events < 1:
        raise CorruptFileError(f"{path}: $TOT must be positive, got {n_events}")

    names = []
    fields = []
    for i in range(1, n_params + 1):
        name = _require(keywords, f"$P{i}N")
        bits = _require_int(keywords, f"$P{i}B")
        if datatype == "F":
            if bits != 32:
                raise UnsupportedFormatError(
                    f"{path}: $DATATYPE F requires $P{i}B 32, got {bits}"
                )
            fields.append((f"p{i}", f"{endian}f4"))
        else:
            if bits not in (16, 32):
                raise UnsupportedFormatError(
                    f"{path}: $DATATYPE I supports $PnB 16 or 32, got {bits}"
                )
            fields.append((f"p{i}", f"{endian}u{bits // 8}"))
        names.append(name)

    if data_start == 0 and data_end == 0:
        data_start = _require_int(keywords, "$BEGINDATA")
        data_end = _require_int(keywords, "$ENDDATA")
    event_dtype = np.dtype(fields)
    expected = n_events * event_dtype.itemsize
    got = data_end - data_start + 1
    if data_start <= 0 or data_end >= len(raw) or got != expected:
        raise CorruptFileError(
            f"{path}: data segment holds {got} bytes, "
            f"{n_events} events of {event_dtype.itemsize} bytes need {expected}"
        )
    records = np.frombuffer(raw, dtype=event_dtype, count=n_events, offset=data_start)
    values = np.column_stack([records[f].astype(np.float64) for f, _ in fields])
    table = EventTable(MarkerPanel(tuple(names)), values)
    return LabeledSample(sample_id=path.stem, table=table)
