"""Bit-exact file formats: Middlebury-style flow, event streams (text and
binary), 16-bit PGM frames, and raw float64 scalar fields.

All binary formats are little-endian except PGM sample data, which is
big-endian per the Netpbm convention.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import EventStream, ScalarField, ValidationError, VectorField

FLO_MAGIC = 202021.25
EVENT_MAGIC = b"EVBOS\x00\x00\x01"
FIELD_MAGIC = b"EVBFLD\x00\x01"
EVENT_TEXT_HEADER = "t_us,x,y,p"

_EVENT_RECORD = np.dtype(
    {
        "names": ["t", "x", "y", "p"],
        "formats": ["<u8", "<u2", "<u2", "i1"],
        "offsets": [0, 8, 10, 12],
        "itemsize": 16,
    }
)


def write_flow(path: str | Path, flow: VectorField) -> None:
    """Write a flow field: float32 magic, int32 width/height, interleaved
    row-major float32 (u, v) pairs."""
    h, w = flow.u.values.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[:, :, 0] = flow.u.values
    data[:, :, 1] = flow.v.values
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", w, h))
        f.write(data.tobytes())


def read_flow(path: str | Path, units: str = "px") -> VectorField:
    with open(path, "rb") as f:
        magic = struct.unpack("<f", f.read(4))[0]
        if magic != FLO_MAGIC:
            raise ValidationError(f"{path}: not a flow file (bad magic {magic})")
        w, h = struct.unpack("<ii", f.read(8))
        data = np.frombuffer(f.read(w * h * 8), dtype="<f4").reshape(h, w, 2)
    return VectorField.from_arrays(
        data[:, :, 0].astype(np.float64), data[:, :, 1].astype(np.float64), units
    )


def write_events_text(path: str | Path, events: EventStream) -> None:
    """One event per line after a ``t_us,x,y,p`` header."""
    with open(path, "w", encoding="ascii") as f:
        f.write(f"# resolution {events.resolution[0]} {events.resolution[1]}\n")
        f.write(EVENT_TEXT_HEADER + "\n")
        for i in range(len(events)):
            f.write(f"{events.t[i]},{events.x[i]},{events.y[i]},{events.p[i]}\n")


def read_events_text(path: str | Path) -> EventStream:
    with open(path, "r", encoding="ascii") as f:
        first = f.readline().strip()
        if not first.startswith("# resolution"):
            raise ValidationError(f"{path}: missing resolution header")
        parts = first.split()
        resolution = (int(parts[2]), int(parts[3]))
        header = f.readline().strip()
        if header != EVENT_TEXT_HEADER:
            raise ValidationError(f"{path}: unexpected header {header!r}")
        rows = np.loadtxt(f, delimiter=",", dtype=np.int64, ndmin=2)
    if rows.size == 0:
        return EventStream.empty(resolution)
    return EventStream(rows[:, 1], rows[:, 2], rows[:, 0], rows[:, 3], resolution)


def write_events_binary(path: str | Path, events: EventStream) -> None:
    """16-byte records (u64 t_us, u16 x, u16 y, i8 p, 3 pad bytes) after an
    8-byte magic and u32 width/height header."""
    rec = np.zeros(len(events), dtype=_EVENT_RECORD)
    rec["t"] = events.t.astype(np.uint64)
    rec["x"] = events.x.astype(np.uint16)
    rec["y"] = events.y.astype(np.uint16)
    rec["p"] = events.p
    with open(path, "wb") as f:
        f.write(EVENT_MAGIC)
        f.write(struct.pack("<II", events.resolution[0], events.resolution[1]))
        f.write(rec.tobytes())


def read_events_binary(path: str | Path) -> EventStream:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != EVENT_MAGIC:
            raise ValidationError(f"{path}: not an event file (bad magic {magic!r})")
        w, h = struct.unpack("<II", f.read(8))
        rec = np.frombuffer(f.read(), dtype=_EVENT_RECORD)
    return EventStream(
        rec["x"].astype(np.int32),
        rec["y"].astype(np.int32),
        rec["t"].astype(np.int64),
        rec["p"].astype(np.int8),
        (int(w), int(h)),
    )


def read_events(path: str | Path) -> EventStream:
    """Dispatch on the magic bytes: binary if present, text otherwise."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head == EVENT_MAGIC:
        return read_events_binary(path)
    return read_events_text(path)


def write_pgm16(path: str | Path, frame: ScalarField) -> None:
    """16-bit binary PGM; intensities in [0, 1] map to 0..65535."""
    vals = np.clip(frame.values, 0.0, 1.0)
    data = np.rint(vals * 65535.0).astype(">u2")
    h, w = vals.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm16(path: str | Path) -> ScalarField:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P5":
            raise ValidationError(f"{path}: not a binary PGM")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(tok) for tok in line.split())
        maxval = int(f.readline())
        if maxval != 65535:
            raise ValidationError(f"{path}: expected 16-bit PGM, maxval {maxval}")
        data = np.frombuffer(f.read(w * h * 2), dtype=">u2").reshape(h, w)
    return ScalarField(data.astype(np.float64) / 65535.0)


def write_field_raw(path: str | Path, field: ScalarField) -> None:
    """Raw little-endian float64 dump behind a 16-byte (magic, w, h) header."""
    h, w = field.values.shape
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(field.values.astype("<f8").tobytes())


def read_field_raw(path: str | Path) -> ScalarField:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != FIELD_MAGIC:
            raise ValidationError(f"{path}: not a field file (bad magic {magic!r})")
        w, h = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(w * h * 8), dtype="<f8").reshape(h, w)
    return ScalarField(data.astype(np.float64))
