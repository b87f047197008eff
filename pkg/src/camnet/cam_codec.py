"""CAM frames, their binary wire encoding, and the TX/RX log-line formats."""

from __future__ import annotations

import struct
from functools import lru_cache
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, TextIO


class CodecError(ValueError):
    """Base class for codec and log-format failures."""


class MalformedFrameError(CodecError):
    pass


class InvalidFieldError(CodecError):
    pass


class LogFormatError(CodecError):
    pass


class Nic(str, Enum):
    HP = "HP"
    LP = "LP"


# src_mac(6) nic(1) seq(u32) gps_lon gps_lat inter_lon inter_lat gps_speed inter_speed heading (f64) timestamp(i64)
_WIRE = struct.Struct("<6sBI7dq")
CAM_LENGTH = _WIRE.size
_NIC_CODES = {Nic.HP: 0, Nic.LP: 1}
_NIC_FROM_CODE = {v: k for k, v in _NIC_CODES.items()}

COORD_DECIMALS = 7
SPEED_DECIMALS = 2
HEADING_DECIMALS = 2


@lru_cache(maxsize=4096)
def normalize_mac(mac: str) -> str:
    """Return ``mac`` as lower-case colon-separated hex, validating its shape."""
    parts = mac.strip().replace("-", ":").split(":")
    if len(parts) != 6 or not all(len(p) == 2 for p in parts):
        raise InvalidFieldError(f"not a MAC address: {mac!r}")
    try:
        octets = [int(p, 16) for p in parts]
    except ValueError:
        raise InvalidFieldError(f"not a MAC address: {mac!r}") from None
    return ":".join(f"{o:02x}" for o in octets)


def _mac_bytes(mac: str) -> bytes:
    return bytes(int(p, 16) for p in mac.split(":"))


def _check_position(lat: float, lon: float, what: str) -> None:
    if not -90.0 <= lat <= 90.0:
        raise InvalidFieldError(f"{what} latitude out of range: {lat}")
    if not -180.0 <= lon <= 180.0:
        raise InvalidFieldError(f"{what} longitude out of range: {lon}")


@dataclass(frozen=True)
class CamFrame:
    src_mac: str
    nic: Nic
    seq_num: int
    gps_lon: float
    gps_lat: float
    inter_lon: float
    inter_lat: float
    gps_speed: float
    inter_speed: float
    heading: float
    timestamp_us: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "src_mac", normalize_mac(self.src_mac))
        object.__setattr__(self, "nic", Nic(self.nic))
        if not 0 <= self.seq_num <= 0xFFFFFFFF:
            raise InvalidFieldError(f"seq_num out of range: {self.seq_num}")
        _check_position(self.gps_lat, self.gps_lon, "gps")
        _check_position(self.inter_lat, self.inter_lon, "interpolated")
        if not (self.gps_speed >= 0 and self.inter_speed >= 0):
            raise InvalidFieldError("speed must be non-negative")
        if not 0.0 <= self.heading < 360.0:
            raise InvalidFieldError(f"heading out of range: {self.heading}")


def encode_cam(frame: CamFrame) -> bytes:
    return _WIRE.pack(
        _mac_bytes(frame.src_mac),
        _NIC_CODES[frame.nic],
        frame.seq_num,
        frame.gps_lon,
        frame.gps_lat,
        frame.inter_lon,
        frame.inter_lat,
        frame.gps_speed,
        frame.inter_speed,
        frame.heading,
        frame.timestamp_us,
    )


def decode_cam(payload: bytes) -> CamFrame:
    if len(payload) != CAM_LENGTH:
        raise MalformedFrameError(f"expected {CAM_LENGTH} bytes, got {len(payload)}")
    mac, nic_code, seq, glon, glat, ilon, ilat, gspd, ispd, heading, ts = _WIRE.unpack(payload)
    if nic_code not in _NIC_FROM_CODE:
        raise InvalidFieldError(f"unknown NIC code {nic_code}")
    return CamFrame(
        src_mac=":".join(f"{b:02x}" for b in mac),
        nic=_NIC_FROM_CODE[nic_code],
        seq_num=seq,
        gps_lon=glon,
        gps_lat=glat,
        inter_lon=ilon,
        inter_lat=ilat,
        gps_speed=gspd,
        inter_speed=ispd,
        heading=heading,
        timestamp_us=ts,
    )


# --- log records -----------------------------------------------------------

TX_COLUMNS = (
    "GpsLongitude", "GpsLatitude", "InterLongitude", "InterLatitude", "SeqNum",
    "GpsSpeed", "InterSpeed", "Timestamp", "SrcMac", "Nic", "Heading",
)
RX_COLUMNS = (
    "RxMAC", "RxLongitude", "RxLatitude", "InterLongitude", "InterLatitude", "SeqNum",
    "GpsSpeed", "InterSpeed", "Timestamp", "LocalRxTime",
)


def _q(value: float, decimals: int) -> float:
    # round() is correctly rounded, so "%.Nf" of the result parses back to the same double
    out = round(float(value), decimals)
    return 0.0 if out == 0 else out


@dataclass(frozen=True)
class TxLogRecord:
    """One transmitter log line. Values are quantized to log precision on construction."""

    gps_lon: float
    gps_lat: float
    inter_lon: float
    inter_lat: float
    seq_num: int
    gps_speed: float
    inter_speed: float
    timestamp_us: int
    src_mac: str
    nic: Nic
    heading: float

    def __post_init__(self) -> None:
        for name in ("gps_lon", "gps_lat", "inter_lon", "inter_lat"):
            object.__setattr__(self, name, _q(getattr(self, name), COORD_DECIMALS))
        for name in ("gps_speed", "inter_speed"):
            object.__setattr__(self, name, _q(getattr(self, name), SPEED_DECIMALS))
        object.__setattr__(self, "heading", _q(self.heading, HEADING_DECIMALS))
        object.__setattr__(self, "src_mac", normalize_mac(self.src_mac))
        object.__setattr__(self, "nic", Nic(self.nic))
        _check_position(self.gps_lat, self.gps_lon, "gps")
        _check_position(self.inter_lat, self.inter_lon, "interpolated")
        if self.seq_num < 0:
            raise InvalidFieldError("seq_num must be non-negative")

    @classmethod
    def from_frame(cls, frame: CamFrame) -> "TxLogRecord":
        return cls(
            gps_lon=frame.gps_lon, gps_lat=frame.gps_lat,
            inter_lon=frame.inter_lon, inter_lat=frame.inter_lat,
            seq_num=frame.seq_num, gps_speed=frame.gps_speed, inter_speed=frame.inter_speed,
            timestamp_us=frame.timestamp_us, src_mac=frame.src_mac, nic=frame.nic,
            heading=frame.heading,
        )


@dataclass(frozen=True)
class RxLogRecord:
    """One receiver log line.

    ``rx_lon``/``rx_lat`` are the coordinates carried in the received frame;
    ``inter_lon``/``inter_lat`` are the receiver's own interpolated position.
    ``receiver_mac`` is not serialized; when given, a record claiming to come
    from the receiver itself is rejected.
    """

    rx_mac: str
    rx_lon: float
    rx_lat: float
    inter_lon: float
    inter_lat: float
    seq_num: int
    gps_speed: float
    inter_speed: float
    timestamp_us: int
    local_rx_time_us: int
    receiver_mac: str | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        for name in ("rx_lon", "rx_lat", "inter_lon", "inter_lat"):
            object.__setattr__(self, name, _q(getattr(self, name), COORD_DECIMALS))
        for name in ("gps_speed", "inter_speed"):
            object.__setattr__(self, name, _q(getattr(self, name), SPEED_DECIMALS))
        object.__setattr__(self, "rx_mac", normalize_mac(self.rx_mac))
        _check_position(self.rx_lat, self.rx_lon, "carried")
        _check_position(self.inter_lat, self.inter_lon, "receiver")
        if self.receiver_mac is not None:
            own = normalize_mac(self.receiver_mac)
            object.__setattr__(self, "receiver_mac", own)
            if own == self.rx_mac:
                raise InvalidFieldError(f"self-reception from {own}")


def _fc(x: float) -> str:
    return f"{x:.{COORD_DECIMALS}f}"


def _fs(x: float) -> str:
    return f"{x:.{SPEED_DECIMALS}f}"


def format_tx_log(rec: TxLogRecord) -> str:
    return ",".join((
        _fc(rec.gps_lon), _fc(rec.gps_lat), _fc(rec.inter_lon), _fc(rec.inter_lat),
        str(rec.seq_num), _fs(rec.gps_speed), _fs(rec.inter_speed), str(rec.timestamp_us),
        rec.src_mac, rec.nic.value, f"{rec.heading:.{HEADING_DECIMALS}f}",
    ))


def format_rx_log(rec: RxLogRecord) -> str:
    return ",".join((
        rec.rx_mac, _fc(rec.rx_lon), _fc(rec.rx_lat), _fc(rec.inter_lon), _fc(rec.inter_lat),
        str(rec.seq_num), _fs(rec.gps_speed), _fs(rec.inter_speed),
        str(rec.timestamp_us), str(rec.local_rx_time_us),
    ))


def _split(line: str, columns: tuple[str, ...]) -> list[str]:
    parts = [p.strip() for p in line.rstrip("\r\n").split(",")]
    if len(parts) != len(columns):
        raise LogFormatError(f"expected {len(columns)} columns, got {len(parts)}")
    return parts


def _num(conv, text: str, column: str):
    try:
        return conv(text)
    except ValueError:
        raise CodecError(f"column {column}: cannot parse {text!r}") from None


def parse_tx_log(line: str) -> TxLogRecord:
    p = _split(line, TX_COLUMNS)
    vals = {}
    for name, text in zip(TX_COLUMNS, p):
        if name in ("SeqNum", "Timestamp"):
            vals[name] = _num(int, text, name)
        elif name == "SrcMac":
            vals[name] = normalize_mac(text)
        elif name == "Nic":
            vals[name] = _num(Nic, text, name)
        else:
            vals[name] = _num(float, text, name)
    return TxLogRecord(
        gps_lon=vals["GpsLongitude"], gps_lat=vals["GpsLatitude"],
        inter_lon=vals["InterLongitude"], inter_lat=vals["InterLatitude"],
        seq_num=vals["SeqNum"], gps_speed=vals["GpsSpeed"], inter_speed=vals["InterSpeed"],
        timestamp_us=vals["Timestamp"], src_mac=vals["SrcMac"], nic=vals["Nic"],
        heading=vals["Heading"],
    )


def parse_rx_log(line: str, receiver_mac: str | None = None) -> RxLogRecord:
    p = _split(line, RX_COLUMNS)
    vals = {}
    for name, text in zip(RX_COLUMNS, p):
        if name == "RxMAC":
            vals[name] = normalize_mac(text)
        elif name in ("SeqNum", "Timestamp", "LocalRxTime"):
            vals[name] = _num(int, text, name)
        else:
            vals[name] = _num(float, text, name)
    return RxLogRecord(
        rx_mac=vals["RxMAC"], rx_lon=vals["RxLongitude"], rx_lat=vals["RxLatitude"],
        inter_lon=vals["InterLongitude"], inter_lat=vals["InterLatitude"],
        seq_num=vals["SeqNum"], gps_speed=vals["GpsSpeed"], inter_speed=vals["InterSpeed"],
        timestamp_us=vals["Timestamp"], local_rx_time_us=vals["LocalRxTime"],
        receiver_mac=receiver_mac,
    )


# --- files -----------------------------------------------------------------

def write_tx_log(fh: TextIO, records: Iterable[TxLogRecord]) -> None:
    fh.write(",".join(TX_COLUMNS) + "\n")
    for rec in records:
        fh.write(format_tx_log(rec) + "\n")


def write_rx_log(fh: TextIO, records: Iterable[RxLogRecord]) -> None:
    fh.write(",".join(RX_COLUMNS) + "\n")
    for rec in records:
        fh.write(format_rx_log(rec) + "\n")


def _data_lines(lines: Iterable[str], columns: tuple[str, ...]) -> Iterator[tuple[int, str]]:
    header = ",".join(columns)
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if lineno == 1 and stripped.replace(" ", "") == header:
            continue
        yield lineno, stripped


def read_tx_log(lines: Iterable[str], source: str = "<tx log>") -> list[TxLogRecord]:
    """Parse a TX log, with or without its header row.

    Errors are re-raised with ``source:line`` prefixed.
    """
    out = []
    for lineno, line in _data_lines(lines, TX_COLUMNS):
        try:
            out.append(parse_tx_log(line))
        except CodecError as exc:
            raise type(exc)(f"{source}:{lineno}: {exc}") from None
    return out


def read_rx_log(lines: Iterable[str], source: str = "<rx log>",
                receiver_mac: str | None = None) -> list[RxLogRecord]:
    out = []
    for lineno, line in _data_lines(lines, RX_COLUMNS):
        try:
            out.append(parse_rx_log(line, receiver_mac))
        except CodecError as exc:
            raise type(exc)(f"{source}:{lineno}: {exc}") from None
    return out
