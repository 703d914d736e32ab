"""Standard MIDI File (format 0/1) reading and writing, plus tick/seconds conversion.

The in-memory representation uses absolute ticks throughout: parsing
accumulates delta times, writing re-derives them. The writer always emits a
canonical byte form (no running status, minimal-length VLQs, explicit
end-of-track), so ``write(parse(write(p)))`` is byte-identical to
``write(p)``.

SMPTE time divisions and SMF format 2 are rejected.
"""

from __future__ import annotations

import struct
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Union

DEFAULT_TEMPO_US = 500_000  # 120 BPM; SMF default before the first tempo event
MAX_VLQ_VALUE = 0x0FFFFFFF
MAX_TEMPO_US = 0xFFFFFF


class SmfError(Exception):
    """Base class for MIDI file errors."""


class MalformedHeader(SmfError):
    pass


class TruncatedTrack(SmfError):
    pass


class IllegalVlq(SmfError):
    pass


class UnsupportedFormat(SmfError):
    pass


class InvariantViolation(SmfError):
    pass


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class NoteOn:
    tick: int
    channel: int
    pitch: int
    velocity: int


@dataclass(frozen=True, slots=True)
class NoteOff:
    tick: int
    channel: int
    pitch: int
    velocity: int


@dataclass(frozen=True, slots=True)
class ControlChange:
    tick: int
    channel: int
    controller: int
    value: int


@dataclass(frozen=True, slots=True)
class ProgramChange:
    tick: int
    channel: int
    program: int


@dataclass(frozen=True, slots=True)
class SetTempo:
    tick: int
    microseconds_per_quarter: int


@dataclass(frozen=True, slots=True)
class TrackName:
    tick: int
    text: str


@dataclass(frozen=True, slots=True)
class EndOfTrack:
    tick: int


@dataclass(frozen=True, slots=True)
class OtherMeta:
    """Any meta event we do not interpret, preserved verbatim."""

    tick: int
    meta_type: int
    data: bytes


@dataclass(frozen=True, slots=True)
class OtherChannel:
    """Channel/system message we do not interpret (pitch bend, sysex, ...).

    ``status`` is the full status byte including the channel nibble; ``data``
    holds the raw payload (for sysex, the bytes after the VLQ length).
    """

    tick: int
    status: int
    data: bytes


Event = Union[
    NoteOn, NoteOff, ControlChange, ProgramChange,
    SetTempo, TrackName, EndOfTrack, OtherMeta, OtherChannel,
]


@dataclass
class Track:
    """One MTrk chunk. ``name``/``channel_hint``/``program`` are conveniences
    derived from the event list at parse time; the events are authoritative."""

    events: list[Event] = field(default_factory=list)
    name: str = ""
    channel_hint: int | None = None
    program: int | None = None

    def end_tick(self) -> int:
        return max((ev.tick for ev in self.events), default=0)


@dataclass
class MidiPiece:
    ticks_per_quarter: int
    tracks: list[Track]
    format: int = 1

    def end_tick(self) -> int:
        return max((t.end_tick() for t in self.tracks), default=0)


@dataclass(frozen=True, slots=True)
class Note:
    """A paired note-on/note-off within one track."""

    tick_on: int
    tick_off: int
    channel: int
    pitch: int
    velocity: int


# ---------------------------------------------------------------------------
# Variable-length quantities
# ---------------------------------------------------------------------------

def decode_vlq(data: bytes, offset: int) -> tuple[int, int]:
    """Decode a variable-length quantity; returns (value, next_offset)."""
    value = 0
    for _ in range(4):
        if offset >= len(data):
            raise IllegalVlq("VLQ runs past end of data")
        byte = data[offset]
        offset += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, offset
    raise IllegalVlq("VLQ has no terminating byte within 4 bytes")


def encode_vlq(value: int) -> bytes:
    """Encode a non-negative integer as a minimal-length VLQ."""
    if value < 0 or value > MAX_VLQ_VALUE:
        raise InvariantViolation(f"VLQ value out of range: {value}")
    out = bytearray([value & 0x7F])
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    out.reverse()
    return bytes(out)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

# data byte counts for channel messages we pass through opaquely
_OPAQUE_CHANNEL_SIZES = {0xA0: 2, 0xD0: 1, 0xE0: 2}
_SYSTEM_COMMON_SIZES = {0xF1: 1, 0xF2: 2, 0xF3: 1, 0xF6: 0}


def parse_smf(data: bytes) -> MidiPiece:
    """Parse SMF bytes into a MidiPiece with absolute-tick events.

    Note-on events with velocity 0 are normalized to NoteOff. Unknown meta
    and sysex payloads are preserved verbatim. Chunks other than MTrk are
    skipped.
    """
    if len(data) < 14 or data[:4] != b"MThd":
        raise MalformedHeader("missing MThd chunk")
    (header_len,) = struct.unpack(">I", data[4:8])
    if header_len < 6 or 8 + header_len > len(data):
        raise MalformedHeader(f"bad header length {header_len}")
    fmt, n_tracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise UnsupportedFormat(f"SMF format {fmt} not supported")
    if division & 0x8000:
        raise UnsupportedFormat("SMPTE time divisions not supported")
    if division == 0:
        raise MalformedHeader("zero ticks per quarter note")

    offset = 8 + header_len
    tracks: list[Track] = []
    while len(tracks) < n_tracks:
        if offset + 8 > len(data):
            raise TruncatedTrack(
                f"expected {n_tracks} tracks, found {len(tracks)}")
        chunk_id = data[offset:offset + 4]
        (length,) = struct.unpack(">I", data[offset + 4:offset + 8])
        offset += 8
        if offset + length > len(data):
            raise TruncatedTrack(
                f"chunk length {length} exceeds remaining {len(data) - offset} bytes")
        chunk = data[offset:offset + length]
        offset += length
        if chunk_id != b"MTrk":
            continue  # alien chunk, skipped as the SMF standard allows
        tracks.append(_parse_track(chunk))
    return MidiPiece(ticks_per_quarter=division, tracks=tracks, format=fmt)


def _parse_track(chunk: bytes) -> Track:
    events: list[Event] = []
    tick = 0
    pos = 0
    running: int | None = None
    track = Track(events=events)
    saw_eot = False

    while pos < len(chunk):
        delta, pos = decode_vlq(chunk, pos)
        tick += delta
        if pos >= len(chunk):
            raise TruncatedTrack("event status missing at end of track")
        status = chunk[pos]
        if status < 0x80:
            if running is None:
                raise SmfError("data byte without running status")
            status = running
        else:
            pos += 1

        if status == 0xFF:
            running = None
            if pos >= len(chunk):
                raise TruncatedTrack("meta event truncated")
            meta_type = chunk[pos]
            pos += 1
            length, pos = decode_vlq(chunk, pos)
            if pos + length > len(chunk):
                raise TruncatedTrack("meta payload truncated")
            payload = chunk[pos:pos + length]
            pos += length
            if meta_type == 0x2F:
                events.append(EndOfTrack(tick))
                saw_eot = True
                break
            if meta_type == 0x51 and length == 3:
                events.append(SetTempo(tick, int.from_bytes(payload, "big")))
            elif meta_type == 0x03:
                text = payload.decode("latin-1")
                events.append(TrackName(tick, text))
                if not track.name:
                    track.name = text
            else:
                events.append(OtherMeta(tick, meta_type, payload))
        elif status in (0xF0, 0xF7):
            running = None
            length, pos = decode_vlq(chunk, pos)
            if pos + length > len(chunk):
                raise TruncatedTrack("sysex payload truncated")
            events.append(OtherChannel(tick, status, chunk[pos:pos + length]))
            pos += length
        elif status >= 0xF0:
            running = None
            size = _SYSTEM_COMMON_SIZES.get(status, 0)
            if pos + size > len(chunk):
                raise TruncatedTrack("system message truncated")
            events.append(OtherChannel(tick, status, chunk[pos:pos + size]))
            pos += size
        else:
            running = status
            kind = status & 0xF0
            channel = status & 0x0F
            if track.channel_hint is None:
                track.channel_hint = channel
            size = 1 if kind in (0xC0, 0xD0) else 2
            if pos + size > len(chunk):
                raise TruncatedTrack("channel message truncated")
            d = chunk[pos:pos + size]
            pos += size
            if kind == 0x90:
                if d[1] == 0:
                    events.append(NoteOff(tick, channel, d[0], 0))
                else:
                    events.append(NoteOn(tick, channel, d[0], d[1]))
            elif kind == 0x80:
                events.append(NoteOff(tick, channel, d[0], d[1]))
            elif kind == 0xB0:
                events.append(ControlChange(tick, channel, d[0], d[1]))
            elif kind == 0xC0:
                events.append(ProgramChange(tick, channel, d[0]))
                if track.program is None:
                    track.program = d[0]
            else:
                events.append(OtherChannel(tick, status, bytes(d)))

    if not saw_eot:
        events.append(EndOfTrack(track.end_tick()))
    return track


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def validate_piece(piece: MidiPiece) -> None:
    """Raise InvariantViolation unless the piece is serializable: sorted
    ticks, 7-bit data ranges, valid channels, end-of-track only last."""
    _validate_piece(piece)


def write_smf(piece: MidiPiece) -> bytes:
    """Serialize a MidiPiece to canonical SMF bytes.

    Canonical means: no running status, minimal VLQ delta times, an explicit
    end-of-track on every track (appended at the maximal tick if missing).
    """
    _validate_piece(piece)
    out = bytearray()
    out += b"MThd" + struct.pack(
        ">IHHH", 6, piece.format, len(piece.tracks), piece.ticks_per_quarter)
    for track in piece.tracks:
        body = _encode_track(track)
        out += b"MTrk" + struct.pack(">I", len(body)) + body
    return bytes(out)


def _validate_piece(piece: MidiPiece) -> None:
    if piece.ticks_per_quarter <= 0 or piece.ticks_per_quarter > 0x7FFF:
        raise InvariantViolation(
            f"ticks_per_quarter out of range: {piece.ticks_per_quarter}")
    if piece.format not in (0, 1):
        raise InvariantViolation(f"format must be 0 or 1, got {piece.format}")
    if piece.format == 0 and len(piece.tracks) != 1:
        raise InvariantViolation("format 0 requires exactly one track")
    for ti, track in enumerate(piece.tracks):
        last_tick = 0
        for i, ev in enumerate(track.events):
            if ev.tick < 0:
                raise InvariantViolation(f"track {ti}: negative tick {ev.tick}")
            if ev.tick < last_tick:
                raise InvariantViolation(
                    f"track {ti}: events not sorted at index {i}")
            last_tick = ev.tick
            _validate_event(ti, ev)
            if isinstance(ev, EndOfTrack) and i != len(track.events) - 1:
                raise InvariantViolation(
                    f"track {ti}: end-of-track not the last event")


def _validate_event(ti: int, ev: Event) -> None:
    def check7(value: int, what: str) -> None:
        if not 0 <= value <= 127:
            raise InvariantViolation(f"track {ti}: {what} out of range: {value}")

    if isinstance(ev, (NoteOn, NoteOff)):
        check7(ev.pitch, "pitch")
        check7(ev.velocity, "velocity")
        _check_channel(ti, ev.channel)
        if isinstance(ev, NoteOn) and ev.velocity == 0:
            raise InvariantViolation(
                f"track {ti}: NoteOn with velocity 0 (use NoteOff)")
    elif isinstance(ev, ControlChange):
        check7(ev.controller, "controller")
        check7(ev.value, "value")
        _check_channel(ti, ev.channel)
    elif isinstance(ev, ProgramChange):
        check7(ev.program, "program")
        _check_channel(ti, ev.channel)
    elif isinstance(ev, SetTempo):
        if not 1 <= ev.microseconds_per_quarter <= MAX_TEMPO_US:
            raise InvariantViolation(
                f"track {ti}: tempo out of range: {ev.microseconds_per_quarter}")


def _check_channel(ti: int, channel: int) -> None:
    if not 0 <= channel <= 15:
        raise InvariantViolation(f"track {ti}: channel out of range: {channel}")


def _encode_track(track: Track) -> bytes:
    events = track.events
    if not events or not isinstance(events[-1], EndOfTrack):
        events = events + [EndOfTrack(track.end_tick())]
    out = bytearray()
    last_tick = 0
    for ev in events:
        out += encode_vlq(ev.tick - last_tick)
        last_tick = ev.tick
        out += _encode_event(ev)
    return bytes(out)


def _encode_event(ev: Event) -> bytes:
    if isinstance(ev, NoteOn):
        return bytes([0x90 | ev.channel, ev.pitch, ev.velocity])
    if isinstance(ev, NoteOff):
        return bytes([0x80 | ev.channel, ev.pitch, ev.velocity])
    if isinstance(ev, ControlChange):
        return bytes([0xB0 | ev.channel, ev.controller, ev.value])
    if isinstance(ev, ProgramChange):
        return bytes([0xC0 | ev.channel, ev.program])
    if isinstance(ev, SetTempo):
        return b"\xff\x51\x03" + ev.microseconds_per_quarter.to_bytes(3, "big")
    if isinstance(ev, TrackName):
        payload = ev.text.encode("latin-1")
        return b"\xff\x03" + encode_vlq(len(payload)) + payload
    if isinstance(ev, EndOfTrack):
        return b"\xff\x2f\x00"
    if isinstance(ev, OtherMeta):
        return bytes([0xFF, ev.meta_type]) + encode_vlq(len(ev.data)) + ev.data
    if isinstance(ev, OtherChannel):
        if ev.status in (0xF0, 0xF7):
            return bytes([ev.status]) + encode_vlq(len(ev.data)) + ev.data
        return bytes([ev.status]) + ev.data
    raise InvariantViolation(f"unknown event type: {type(ev).__name__}")


# ---------------------------------------------------------------------------
# Tempo map
# ---------------------------------------------------------------------------

class TempoMap:
    """Piecewise-constant tempo over ticks, built from SetTempo events.

    Before the first tempo event the SMF default of 500000 us/quarter (120
    BPM) applies. ``seconds_at`` is a fast float path; ``exact_seconds_at``
    returns an exact rational, used where sums must agree regardless of
    grouping.
    """

    def __init__(self, ticks_per_quarter: int,
                 changes: list[tuple[int, int]] | None = None):
        if ticks_per_quarter <= 0:
            raise InvariantViolation("ticks_per_quarter must be positive")
        self.ticks_per_quarter = ticks_per_quarter
        points: dict[int, int] = {}
        for tick, us in sorted(changes or [], key=lambda c: c[0]):
            points[tick] = us  # later events at the same tick win
        if 0 not in points:
            points = {0: DEFAULT_TEMPO_US, **points}
        self._ticks = sorted(points)
        self._tempos = [points[t] for t in self._ticks]
        # cumulative exact microseconds at each segment start
        self._cum_us: list[Fraction] = [Fraction(0)]
        for i in range(1, len(self._ticks)):
            dt = self._ticks[i] - self._ticks[i - 1]
            self._cum_us.append(
                self._cum_us[-1]
                + Fraction(dt * self._tempos[i - 1], ticks_per_quarter))
        self._cum_us_float = [float(c) for c in self._cum_us]

    @classmethod
    def from_piece(cls, piece: MidiPiece) -> "TempoMap":
        changes = [
            (ev.tick, ev.microseconds_per_quarter)
            for track in piece.tracks
            for ev in track.events
            if isinstance(ev, SetTempo)
        ]
        return cls(piece.ticks_per_quarter, changes)

    def _segment(self, tick: int) -> int:
        return bisect_right(self._ticks, tick) - 1

    def tempo_at(self, tick: int) -> int:
        """Microseconds per quarter note in effect at ``tick``."""
        return self._tempos[self._segment(max(tick, 0))]

    def bpm_at(self, tick: int) -> float:
        return 60_000_000.0 / self.tempo_at(tick)

    def seconds_at(self, tick: int) -> float:
        if tick <= 0:
            return 0.0
        i = self._segment(tick)
        us = (self._cum_us_float[i]
              + (tick - self._ticks[i]) * self._tempos[i]
              / self.ticks_per_quarter)
        return us / 1e6

    def exact_seconds_at(self, tick: int) -> Fraction:
        if tick <= 0:
            return Fraction(0)
        i = self._segment(tick)
        us = self._cum_us[i] + Fraction(
            (tick - self._ticks[i]) * self._tempos[i], self.ticks_per_quarter)
        return us / 1_000_000

    def changes(self) -> list[tuple[int, int]]:
        return list(zip(self._ticks, self._tempos))


def tick_to_seconds(piece: MidiPiece, tick: int) -> float:
    """Wall-clock seconds of an absolute tick under the piece's tempo map."""
    return TempoMap.from_piece(piece).seconds_at(tick)


# ---------------------------------------------------------------------------
# Note pairing
# ---------------------------------------------------------------------------

def track_notes(track: Track, end_tick: int | None = None) -> list[Note]:
    """Pair note-ons with note-offs (FIFO per channel/pitch).

    Unterminated notes are closed at ``end_tick`` (default: the track's own
    end) so malformed corpus files still yield usable intervals.
    """
    notes: list[Note] = []
    open_notes: dict[tuple[int, int], deque[tuple[int, int]]] = {}
    for ev in track.events:
        if isinstance(ev, NoteOn):
            open_notes.setdefault((ev.channel, ev.pitch), deque()).append(
                (ev.tick, ev.velocity))
        elif isinstance(ev, NoteOff):
            queue = open_notes.get((ev.channel, ev.pitch))
            if queue:
                on_tick, velocity = queue.popleft()
                notes.append(Note(on_tick, ev.tick, ev.channel, ev.pitch, velocity))
    if any(open_notes.values()):
        close = track.end_tick() if end_tick is None else end_tick
        for (channel, pitch), queue in open_notes.items():
            for on_tick, velocity in queue:
                notes.append(Note(on_tick, max(close, on_tick), channel, pitch, velocity))
    notes.sort(key=lambda n: (n.tick_on, n.pitch, n.tick_off))
    return notes


def replace_event(ev: Event, **changes) -> Event:
    """dataclasses.replace that keeps the Event union type for callers."""
    return replace(ev, **changes)
