"""Instrument identification and corpus cleanup for orchestral MIDI.

Raw score collections name tracks inconsistently ("Violin I", "Vl. 2",
"Geigen") and carry arbitrary programs, velocities and tempos. This module
maps track names onto a fixed orchestral instrument set via a lookup
dictionary, rewrites program/channel data to match, normalizes velocity and
tempo to a flat baseline, drops pieces containing unmappable tracks, and
removes duplicate pieces by note-content fingerprint.
"""

from __future__ import annotations

import csv
import hashlib
import unicodedata
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .smf import (
    ControlChange,
    MidiPiece,
    NoteOn,
    ProgramChange,
    SetTempo,
    Track,
    track_notes,
    validate_piece,
)

NORMALIZED_VELOCITY = 75
NORMALIZED_TEMPO_US = 500_000  # 120 BPM
PERCUSSION_CHANNEL = 9
STRIPPED_CONTROLLERS = frozenset({1, 11, 32})

FAMILY_STRINGS = "strings"
FAMILY_WOODWINDS = "woodwinds"
FAMILY_BRASS = "brass"
FAMILY_PERCUSSION = "percussion"


class GmFixError(Exception):
    pass


class UnknownInstrument(GmFixError):
    pass


@dataclass(frozen=True, slots=True)
class InstrumentId:
    name: str
    gm_program: int  # 0-based
    family: str


class _Excluded:
    """Sentinel for names recognized as deliberately out of scope (vocals,
    keyboards): the piece is rejected, but distinctly from unknown names."""

    def __repr__(self) -> str:
        return "EXCLUDED"


EXCLUDED = _Excluded()

REGISTRY: dict[str, InstrumentId] = {
    iid.name: iid
    for iid in (
        InstrumentId("violin", 40, FAMILY_STRINGS),
        InstrumentId("viola", 41, FAMILY_STRINGS),
        InstrumentId("cello", 42, FAMILY_STRINGS),
        InstrumentId("contrabass", 43, FAMILY_STRINGS),
        InstrumentId("flute", 73, FAMILY_WOODWINDS),
        InstrumentId("piccolo", 72, FAMILY_WOODWINDS),
        InstrumentId("clarinet", 71, FAMILY_WOODWINDS),
        InstrumentId("oboe", 68, FAMILY_WOODWINDS),
        InstrumentId("english_horn", 69, FAMILY_WOODWINDS),
        InstrumentId("bassoon", 70, FAMILY_WOODWINDS),
        InstrumentId("french_horn", 60, FAMILY_BRASS),
        InstrumentId("trumpet", 56, FAMILY_BRASS),
        InstrumentId("trombone", 57, FAMILY_BRASS),
        InstrumentId("tuba", 58, FAMILY_BRASS),
        InstrumentId("harp", 46, FAMILY_PERCUSSION),
        InstrumentId("timpani", 47, FAMILY_PERCUSSION),
        InstrumentId("untuned_percussion", 112, FAMILY_PERCUSSION),
    )
}

# GM programs that mark a track as untuned percussion even off channel 10
# (tinkle bell, steel drums).
UNTUNED_PROGRAMS = frozenset({112, 114})

_PROGRAM_TO_INSTRUMENT = {
    iid.gm_program: iid
    for iid in REGISTRY.values()
    if iid.name != "untuned_percussion"
}


def normalize_name(raw: str) -> str:
    """Fold case, strip diacritics, collapse whitespace."""
    decomposed = unicodedata.normalize("NFKD", raw)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return " ".join(stripped.casefold().split())


class InstrumentDictionary:
    """Track-name lookup table loaded from CSV (columns: name, instrument).

    ``instrument`` is a registry name, or the literal ``excluded`` for names
    that are recognized but out of scope.
    """

    def __init__(self, entries: dict[str, InstrumentId | _Excluded]):
        self._entries = entries

    @classmethod
    def from_csv(cls, path: str | Path) -> "InstrumentDictionary":
        with open(path, newline="", encoding="utf-8") as fh:
            return cls._from_rows(csv.DictReader(fh), str(path))

    @classmethod
    def default(cls) -> "InstrumentDictionary":
        ref = resources.files("scoreforge").joinpath("data/instrument_names.csv")
        with ref.open("r", encoding="utf-8", newline="") as fh:
            return cls._from_rows(csv.DictReader(fh), "builtin")

    @classmethod
    def _from_rows(cls, rows, source: str) -> "InstrumentDictionary":
        entries: dict[str, InstrumentId | _Excluded] = {}
        for row in rows:
            key = normalize_name(row["name"])
            target = row["instrument"].strip()
            if target == "excluded":
                entries[key] = EXCLUDED
            elif target in REGISTRY:
                entries[key] = REGISTRY[target]
            else:
                raise GmFixError(
                    f"{source}: unknown instrument {target!r} for name {row['name']!r}")
        return cls(entries)

    def lookup(self, raw_name: str) -> InstrumentId | _Excluded | None:
        return self._entries.get(normalize_name(raw_name))

    def __len__(self) -> int:
        return len(self._entries)


def map_instrument(raw_name: str,
                   dictionary: InstrumentDictionary) -> InstrumentId | _Excluded | None:
    """Map a raw track name onto an instrument.

    Returns the registry InstrumentId, EXCLUDED for names recognized as out
    of scope, or None for names the dictionary does not know (including "").
    """
    return dictionary.lookup(raw_name)


def identify_track(track: Track,
                   dictionary: InstrumentDictionary) -> InstrumentId | _Excluded | None:
    """Identify a track's instrument.

    Channel-10 tracks and tracks whose first program is an untuned-percussion
    program are untuned percussion regardless of name. Otherwise the track
    name decides; programs are too unreliable in raw corpora to fall back on,
    so an unrecognized name returns None.
    """
    if track.channel_hint == PERCUSSION_CHANNEL:
        return REGISTRY["untuned_percussion"]
    if track.program is not None and track.program in UNTUNED_PROGRAMS:
        return REGISTRY["untuned_percussion"]
    return map_instrument(track.name, dictionary)


def _has_notes(track: Track) -> bool:
    return any(isinstance(ev, NoteOn) for ev in track.events)


def fix_piece(piece: MidiPiece,
              dictionary: InstrumentDictionary,
              targets: set[InstrumentId] | None = None,
              ) -> tuple[MidiPiece, list[InstrumentId]]:
    """Rewrite programs/channels so every note-bearing track matches its
    identified instrument. Returns (fixed piece, per-track instruments).

    Raises UnknownInstrument if any note-bearing track is unmappable,
    excluded, or outside ``targets`` (default: the whole registry).
    Note-free tracks (conductor tracks) pass through untouched.
    """
    fixed_tracks: list[Track] = []
    instruments: list[InstrumentId] = []
    for index, track in enumerate(piece.tracks):
        if not _has_notes(track):
            fixed_tracks.append(track)
            continue
        iid = identify_track(track, dictionary)
        if iid is None:
            raise UnknownInstrument(
                f"track {index} ({track.name!r}): no instrument mapping")
        if iid is EXCLUDED:
            raise UnknownInstrument(
                f"track {index} ({track.name!r}): instrument out of scope")
        if targets is not None and iid not in targets:
            raise UnknownInstrument(
                f"track {index} ({track.name!r}): {iid.name} not a target instrument")
        fixed_tracks.append(_retarget_track(track, iid))
        instruments.append(iid)
    fixed = MidiPiece(piece.ticks_per_quarter, fixed_tracks, piece.format)
    return fixed, instruments


def _retarget_track(track: Track, iid: InstrumentId) -> Track:
    untuned = iid.name == "untuned_percussion"
    events = []
    target_channel = None
    for ev in track.events:
        channel = getattr(ev, "channel", None)
        if channel is None:
            if not isinstance(ev, ProgramChange):
                events.append(ev)
            continue
        if untuned:
            if target_channel is None:
                target_channel = PERCUSSION_CHANNEL
            new_channel = PERCUSSION_CHANNEL
        else:
            if target_channel is None:
                target_channel = (
                    channel if channel != PERCUSSION_CHANNEL else 0)
            new_channel = target_channel
        if isinstance(ev, ProgramChange):
            continue  # re-emitted once at tick 0 below
        events.append(replace(ev, channel=new_channel) if channel != new_channel else ev)
    if target_channel is None:
        target_channel = PERCUSSION_CHANNEL if untuned else 0
    events.insert(0, ProgramChange(0, target_channel, iid.gm_program))
    events.sort(key=lambda e: e.tick)
    return Track(events=events, name=track.name,
                 channel_hint=target_channel, program=iid.gm_program)


def track_instruments(piece: MidiPiece) -> list[InstrumentId | None]:
    """Per-track instruments of a piece already passed through fix_piece,
    read back from channel and program data (None for note-free tracks)."""
    out: list[InstrumentId | None] = []
    for track in piece.tracks:
        if not _has_notes(track):
            out.append(None)
            continue
        program = None
        channel = None
        for ev in track.events:
            if isinstance(ev, ProgramChange) and program is None:
                program = ev.program
            if isinstance(ev, NoteOn) and channel is None:
                channel = ev.channel
            if program is not None and channel is not None:
                break
        if channel == PERCUSSION_CHANNEL:
            out.append(REGISTRY["untuned_percussion"])
        elif program in _PROGRAM_TO_INSTRUMENT:
            out.append(_PROGRAM_TO_INSTRUMENT[program])
        else:
            out.append(None)
    return out


def normalize(piece: MidiPiece) -> MidiPiece:
    """Flatten expressive state: every note-on at velocity 75, one 120 BPM
    tempo at tick 0, and no modulation/expression/articulation controllers.

    Idempotent: normalize(normalize(p)) == normalize(p).
    """
    validate_piece(piece)
    new_tracks: list[Track] = []
    for index, track in enumerate(piece.tracks):
        events = []
        for ev in track.events:
            if isinstance(ev, SetTempo):
                continue
            if isinstance(ev, ControlChange) and ev.controller in STRIPPED_CONTROLLERS:
                continue
            if isinstance(ev, NoteOn) and ev.velocity != NORMALIZED_VELOCITY:
                ev = replace(ev, velocity=NORMALIZED_VELOCITY)
            events.append(ev)
        if index == 0:
            events.insert(0, SetTempo(0, NORMALIZED_TEMPO_US))
        new_tracks.append(Track(events=events, name=track.name,
                                channel_hint=track.channel_hint,
                                program=track.program))
    return MidiPiece(piece.ticks_per_quarter, new_tracks, piece.format)


def note_fingerprint(piece: MidiPiece) -> str:
    """Content hash over the multiset of (onset, duration, pitch, instrument).

    Invariant to track order, track names, channels, velocities, tempo and
    any non-note events, so the same score fixed from two different source
    files collides.
    """
    instruments = track_instruments(piece)
    rows: list[tuple[int, int, int, str]] = []
    for track, iid in zip(piece.tracks, instruments):
        if iid is None:
            if not _has_notes(track):
                continue
            label = "?"
        else:
            label = iid.name
        for note in track_notes(track):
            rows.append((note.tick_on, note.tick_off - note.tick_on,
                         note.pitch, label))
    rows.sort()
    digest = hashlib.sha256()
    for row in rows:
        digest.update(repr(row).encode("ascii"))
    return digest.hexdigest()


@dataclass(frozen=True, slots=True)
class RejectedPiece:
    piece_id: str
    reason: str


def filter_corpus(pieces: dict[str, MidiPiece],
                  dictionary: InstrumentDictionary,
                  targets: set[InstrumentId] | None = None,
                  ) -> tuple[dict[str, MidiPiece], list[RejectedPiece]]:
    """Keep pieces whose instruments form a non-empty subset of ``targets``
    (default: the whole registry) spanning at least two distinct instruments.

    Monotimbral pieces are useless for separation training, so they are
    dropped alongside pieces with unmappable or out-of-scope tracks. Order is
    preserved; returns (kept fixed pieces, rejections with reasons).
    """
    kept: dict[str, MidiPiece] = {}
    rejected: list[RejectedPiece] = []
    for piece_id, piece in pieces.items():
        try:
            fixed, instruments = fix_piece(piece, dictionary, targets)
        except UnknownInstrument as exc:
            rejected.append(RejectedPiece(piece_id, str(exc)))
            continue
        if not instruments:
            rejected.append(RejectedPiece(piece_id, "no note-bearing tracks"))
            continue
        if len(set(instruments)) < 2:
            rejected.append(RejectedPiece(
                piece_id, f"monotimbral: only {instruments[0].name}"))
            continue
        kept[piece_id] = fixed
    return kept, rejected


@dataclass(frozen=True, slots=True)
class DuplicatePair:
    kept_id: str
    dropped_id: str
    fingerprint: str


def dedupe(pieces: dict[str, MidiPiece],
           ) -> tuple[dict[str, MidiPiece], list[DuplicatePair]]:
    """Drop pieces whose note-content fingerprint was already seen. The first
    piece in iteration order (insertion order of the dict) wins."""
    kept: dict[str, MidiPiece] = {}
    seen: dict[str, str] = {}
    duplicates: list[DuplicatePair] = []
    for piece_id, piece in pieces.items():
        fp = note_fingerprint(piece)
        if fp in seen:
            duplicates.append(DuplicatePair(seen[fp], piece_id, fp))
            continue
        seen[fp] = piece_id
        kept[piece_id] = piece
    return kept, duplicates
