"""Binary value-plan codec for ML model inputs.

A value plan is an ordered list of specs, each naming a field and a fixed
numeric format. Names starting with `$` are time fields resolved from the
current clock; all others carry a last observed value. Encoding packs the
resolved numbers little-endian in plan order; decoding reverses it given
the format list alone.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import DecodeError, MissingLastValue, UnknownFormat, UnknownTimeField

FORMATS = {
    "float64": "<d",
    "float32": "<f",
    "int64": "<q",
    "int32": "<i",
}

TIME_FIELDS = ("$year", "$month", "$day", "$hour", "$minute", "$second")


def format_size(fmt: str) -> int:
    if fmt not in FORMATS:
        raise UnknownFormat(f"unsupported format {fmt!r}")
    return struct.calcsize(FORMATS[fmt])


@dataclass
class ValueSpec:
    format: str
    name: str
    last_value: float | int | None = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise UnknownFormat(f"unsupported format {self.format!r}")
        if self.is_time_field and self.name not in TIME_FIELDS:
            raise UnknownTimeField(f"unsupported time field {self.name!r}")

    @property
    def is_time_field(self) -> bool:
        return self.name.startswith("$")

    def to_json(self) -> dict:
        data = {"format": self.format, "name": self.name}
        if not self.is_time_field:
            data["last_value"] = self.last_value
        return data

    @classmethod
    def from_json(cls, data: dict) -> "ValueSpec":
        return cls(
            format=data["format"],
            name=data["name"],
            last_value=data.get("last_value"),
        )


def specs_from_json(items: list[dict]) -> list[ValueSpec]:
    return [ValueSpec.from_json(item) for item in items]


def resolve_values(
    specs: list[ValueSpec],
    now: datetime,
    overrides: dict[str, float | int] | None = None,
) -> list[float | int]:
    """Numbers in plan order: time fields from `now`, the rest from values."""
    overrides = overrides or {}
    out: list[float | int] = []
    for spec in specs:
        if spec.is_time_field:
            out.append(getattr(now, spec.name[1:]))
        elif spec.name in overrides:
            out.append(overrides[spec.name])
        elif spec.last_value is not None:
            out.append(spec.last_value)
        else:
            raise MissingLastValue(f"no value recorded yet for {spec.name!r}")
    return out


def encode_values(formats: list[str], values: list[float | int]) -> bytes:
    if len(formats) != len(values):
        raise DecodeError(f"{len(values)} values for {len(formats)} formats")
    parts = []
    for fmt, value in zip(formats, values):
        if fmt not in FORMATS:
            raise UnknownFormat(f"unsupported format {fmt!r}")
        if fmt.startswith("int"):
            value = int(value)
        else:
            value = float(value)
        parts.append(struct.pack(FORMATS[fmt], value))
    return b"".join(parts)


def decode_values(formats: list[str], raw: bytes) -> list[float | int]:
    expected = sum(format_size(f) for f in formats)
    if len(raw) != expected:
        raise DecodeError(f"expected {expected} bytes, got {len(raw)}")
    out: list[float | int] = []
    pos = 0
    for fmt in formats:
        size = format_size(fmt)
        (value,) = struct.unpack(FORMATS[fmt], raw[pos : pos + size])
        if isinstance(value, float) and not math.isfinite(value):
            raise DecodeError(f"non-finite value in field {len(out)}")
        out.append(value)
        pos += size
    return out


def build_input(
    specs: list[ValueSpec],
    now: datetime,
    overrides: dict[str, float | int] | None = None,
) -> bytes:
    """Serialize a full plan; raises MissingLastValue if a field is unset."""
    values = resolve_values(specs, now, overrides)
    return encode_values([s.format for s in specs], values)


def utc_from_seconds(t: float) -> datetime:
    return datetime.fromtimestamp(t, tz=timezone.utc)
