"""Deterministic synthetic MIDI corpora for the tests.

The writer here is intentionally independent of the package: it emits the
messy variety of real-world files, including running status, redundant
(non-minimal) delta-time encodings, note-on-velocity-0 note-offs, sysex and
assorted meta events, several time divisions, and both file formats.

Two corpora:

* ``make_raw_corpus``: 55 varied orchestral-ish files for parser round-trip,
  repair and statistics tests. A known subset carries an unmappable track
  name, and three files are note-for-note duplicates of earlier ones with
  shuffled track order, different names, velocities and tempo.
* ``make_string_corpus``: 10 clean string-section pieces (the instruments
  the bundled articulation tables cover) for end-to-end pipeline, synthesis
  and evaluation tests.

Everything is seeded; building the same corpus twice yields identical bytes.
"""

from __future__ import annotations

import random
import struct
from pathlib import Path

# names the bundled dictionary resolves, with their expected instruments
MAPPABLE_NAMES = [
    ("Violin I", "violin"), ("Violin II", "violin"), ("Geigen", "violin"),
    ("Viola", "viola"), ("Bratschen", "viola"),
    ("Violoncello", "cello"), ("Celli", "cello"),
    ("Double Bass", "contrabass"), ("Contrabasso", "contrabass"),
    ("Flute 1", "flute"), ("Flauto", "flute"),
    ("Piccolo", "piccolo"),
    ("Clarinet in Bb", "clarinet"), ("Klarinette", "clarinet"),
    ("Oboe", "oboe"), ("Oboi", "oboe"),
    ("Cor Anglais", "english_horn"),
    ("Bassoon", "bassoon"), ("Fagott", "bassoon"),
    ("French Horn", "french_horn"), ("Horn in F", "french_horn"),
    ("Trumpet in C", "trumpet"), ("Trompete", "trumpet"),
    ("Trombone", "trombone"), ("Posaune", "trombone"),
    ("Tuba", "tuba"),
    ("Harp", "harp"), ("Arpa", "harp"),
    ("Timpani", "timpani"), ("Pauken", "timpani"),
]

UNKNOWN_NAMES = ["Synth Lead", "Electric Piano", "Ondes Martenot"]

STRING_NAMES = [
    ("Violin I", "violin"), ("Violin II", "violin"), ("Viola", "viola"),
    ("Violoncello", "cello"), ("Double Bass", "contrabass"),
]

PITCH_CENTERS = {
    "violin": 76, "viola": 65, "cello": 53, "contrabass": 40,
    "flute": 79, "piccolo": 89, "clarinet": 70, "oboe": 74,
    "english_horn": 66, "bassoon": 50, "french_horn": 58, "trumpet": 70,
    "trombone": 52, "tuba": 40, "harp": 60, "timpani": 45,
}


def _vlq(value: int, pad: bool = False) -> bytes:
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    if pad and len(out) < 4:
        out.append(0x80)  # legal but redundant leading zero septet
    return bytes(reversed(out))


class RawTrackWriter:
    """Builds one MTrk chunk from (delta, message) pairs, optionally reusing
    running status and padding some delta encodings."""

    def __init__(self, rng: random.Random, quirky: bool = True):
        self.rng = rng
        self.quirky = quirky
        self.body = bytearray()
        self.running: int | None = None

    def delta(self, value: int) -> None:
        pad = self.quirky and value < 0x200000 and self.rng.random() < 0.15
        self.body += _vlq(value, pad=pad)

    def channel(self, delta: int, status: int, *data: int) -> None:
        self.delta(delta)
        if not (self.quirky and status == self.running
                and self.rng.random() < 0.6):
            self.body.append(status)
        self.running = status

        self.body += bytes(data)

    def meta(self, delta: int, meta_type: int, payload: bytes) -> None:
        self.delta(delta)
        self.body += bytes([0xFF, meta_type]) + _vlq(len(payload)) + payload
        self.running = None

    def sysex(self, delta: int, payload: bytes) -> None:
        self.delta(delta)
        self.body += bytes([0xF0]) + _vlq(len(payload)) + payload
        self.running = None

    def finish(self, delta: int = 0) -> bytes:
        self.meta(delta, 0x2F, b"")
        return b"MTrk" + struct.pack(">I", len(self.body)) + bytes(self.body)


def _header(fmt: int, n_tracks: int, division: int) -> bytes:
    return b"MThd" + struct.pack(">IHHH", 6, fmt, n_tracks, division)


def _note_line(writer: RawTrackWriter, rng: random.Random, channel: int,
               center: int, start: int, end: int, tpq: int,
               base_velocity: int) -> None:
    """Emit a wandering melodic line as interleaved on/off events."""
    step_choices = [tpq // 4, tpq // 2, tpq // 2, tpq, tpq * 2]
    tick = start
    pitch = center
    pending_off: list[tuple[int, int]] = []  # (off_tick, pitch)
    last = start
    while tick < end:
        duration = rng.choice(step_choices)
        duration = min(duration, end - tick)
        if duration <= 0:
            break
        while pending_off and pending_off[0][0] <= tick:
            off_tick, off_pitch = pending_off.pop(0)
            if rng.random() < 0.4:
                writer.channel(off_tick - last, 0x90 | channel, off_pitch, 0)
            else:
                writer.channel(off_tick - last, 0x80 | channel, off_pitch, 64)
            last = off_tick
        velocity = max(1, min(127, base_velocity + rng.randint(-12, 12)))
        writer.channel(tick - last, 0x90 | channel, pitch, velocity)
        last = tick
        off_at = tick + max(duration - rng.choice([0, 0, tpq // 8]), 1)
        pending_off.append((off_at, pitch))
        pending_off.sort()
        if rng.random() < 0.15:  # occasional dyad
            other = max(0, min(127, pitch + rng.choice([3, 4, 7])))
            writer.channel(0, 0x90 | channel, other, velocity)
            pending_off.append((off_at, other))
            pending_off.sort()
        pitch = max(24, min(103, pitch + rng.choice([-5, -2, -1, 1, 2, 4])))
        tick += duration
    for off_tick, off_pitch in pending_off:
        writer.channel(off_tick - last, 0x80 | channel, off_pitch, 0)
        last = off_tick


def build_raw_file(seed: int, name_pool: list[tuple[str, str]] | None = None,
                   force_unknown: bool = False,
                   quarters: int | None = None,
                   ensure_multi: bool = False) -> bytes:
    """One synthetic orchestral file with encoding quirks.

    ``ensure_multi`` guarantees at least two distinct mappable instruments,
    for files that must survive corpus filtering.
    """
    rng = random.Random(seed)
    pool = list(name_pool or MAPPABLE_NAMES)
    tpq = rng.choice([96, 120, 192, 240, 384, 480, 960])
    quarters = quarters or rng.randint(16, 64)
    end = quarters * tpq
    fmt = 0 if not ensure_multi and rng.random() < 0.15 else 1

    if fmt == 0:
        name, instrument = rng.choice(pool)
        writer = RawTrackWriter(rng)
        writer.meta(0, 0x03, name.encode("latin-1"))
        writer.meta(0, 0x51, rng.choice([400000, 500000, 600000]).to_bytes(3, "big"))
        writer.meta(0, 0x58, bytes([4, 2, 24, 8]))
        writer.channel(0, 0xC0, rng.randint(0, 127))
        _note_line(writer, rng, 0, PITCH_CENTERS[instrument], 0, end, tpq,
                   rng.randint(40, 100))
        return _header(0, 1, tpq) + writer.finish()

    n_parts = rng.randint(2 if ensure_multi else 1, 5)
    while True:
        part_names = [rng.choice(pool) for _ in range(n_parts)]
        if not ensure_multi or len({ins for _, ins in part_names}) >= 2:
            break
    if force_unknown:
        part_names[-1] = (rng.choice(UNKNOWN_NAMES), "flute")
    chunks: list[bytes] = []
    conductor = RawTrackWriter(rng)
    conductor.meta(0, 0x03, b"conductor")
    conductor.meta(0, 0x51, rng.choice([375000, 500000, 750000]).to_bytes(3, "big"))
    conductor.meta(0, 0x58, bytes([rng.choice([3, 4]), 2, 24, 8]))
    if rng.random() < 0.3:
        conductor.meta(end // 2, 0x51, rng.choice([450000, 550000]).to_bytes(3, "big"))
        conductor.meta(end - end // 2, 0x06, b"mid")
    else:
        conductor.meta(end, 0x06, b"end")
    chunks.append(conductor.finish())

    used_channels = set()
    for part, (name, instrument) in enumerate(part_names):
        channel = part if part != 9 else 10
        if instrument == "timpani" and channel == 9:
            channel = 11
        used_channels.add(channel)
        writer = RawTrackWriter(rng)
        writer.meta(0, 0x03, name.encode("latin-1"))
        writer.channel(0, 0xC0 | channel, rng.randint(0, 127))
        if rng.random() < 0.2:
            writer.channel(0, 0xB0 | channel, 7, rng.randint(60, 127))
        if rng.random() < 0.15:
            writer.sysex(0, bytes([0x7E, 0x7F, 0x09, 0x01, 0xF7]))
        start = rng.choice([0, 0, tpq * rng.randint(1, 4)])
        _note_line(writer, rng, channel, PITCH_CENTERS[instrument],
                   start, end, tpq, rng.randint(40, 100))
        if rng.random() < 0.2:
            writer.channel(0, 0xE0 | channel, 0, 64)  # pitch bend recenter
        chunks.append(writer.finish(delta=rng.choice([0, tpq])))

    if rng.random() < 0.25:  # percussion part on channel 10
        writer = RawTrackWriter(rng)
        if rng.random() < 0.5:
            writer.meta(0, 0x03, b"Percussion")
        tick = 0
        last = 0
        while tick < end:
            writer.channel(tick - last, 0x99, rng.choice([35, 38, 42]), 90)
            writer.channel(tpq // 4, 0x89, 35, 0)
            last = tick + tpq // 4
            tick += tpq
        chunks.append(writer.finish())

    if rng.random() < 0.1:  # alien chunk readers must skip
        chunks.insert(1, b"XFIH" + struct.pack(">I", 4) + b"test")

    n_mtrk = sum(1 for c in chunks if c[:4] == b"MTrk")
    return _header(1, n_mtrk, tpq) + b"".join(chunks)


def make_raw_corpus(directory: Path, count: int = 55) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    duplicate_sources: dict[int, bytes] = {}
    for index in range(count):
        force_unknown = index % 9 == 4
        data = build_raw_file(seed=1000 + index, force_unknown=force_unknown,
                              ensure_multi=index in (7, 21, 33))
        path = directory / f"raw_{index:03d}.mid"
        path.write_bytes(data)
        paths.append(path)
        if index in (7, 21, 33):
            duplicate_sources[index] = data
    # duplicates: same notes re-encoded from a different "edition"
    for index, data in duplicate_sources.items():
        dup = rewrite_as_duplicate(data, seed=9000 + index)
        path = directory / f"raw_{index:03d}_dup.mid"
        path.write_bytes(dup)
        paths.append(path)
    return sorted(directory.glob("*.mid"))


def rewrite_as_duplicate(data: bytes, seed: int) -> bytes:
    """Re-encode a file with shuffled track order, synonymous track names,
    different velocities and tempo: same notes, different bytes."""
    import oracle_smf

    rng = random.Random(seed)
    synonyms = {
        "Violin I": "Violini I", "Violin II": "2nd Violins", "Geigen": "Violine",
        "Viola": "Viole", "Bratschen": "Viola", "Violoncello": "Vc.",
        "Celli": "Cello", "Double Bass": "Kontrabass", "Contrabasso": "Bassi",
        "Flute 1": "Fl.", "Flauto": "Flauti", "Piccolo": "Ottavino",
        "Clarinet in Bb": "Cl.", "Klarinette": "Clarinetto", "Oboe": "Ob.",
        "Oboi": "Hoboe", "Cor Anglais": "Corno Inglese", "Bassoon": "Fg.",
        "Fagott": "Fagotti", "French Horn": "Corni", "Horn in F": "Hn.",
        "Trumpet in C": "Tromba", "Trompete": "Tpt.", "Trombone": "Tbn.",
        "Posaune": "Trb", "Tuba": "Basstuba", "Harp": "Harfe", "Arpa": "Hp.",
        "Timpani": "Timp.", "Pauken": "Kettledrums",
    }
    fmt, tpq, tracks = oracle_smf.read_events(data)
    rebuilt: list[bytes] = []
    order = list(range(len(tracks)))
    if fmt == 1 and len(order) > 2:
        tail = order[1:]
        rng.shuffle(tail)
        order = [order[0]] + tail
    for track_index in order:
        writer = RawTrackWriter(rng)
        last = 0
        for event in tracks[track_index]:
            tick = event[1]
            delta = tick - last
            last = tick
            kind = event[0]
            if kind == "eot":
                return_chunk = writer.finish(delta)
                break
            if kind == "on":
                _, _, ch, pitch, velocity = event
                shifted = max(1, min(127, velocity + rng.randint(-20, 20)))
                writer.channel(delta, 0x90 | ch, pitch, shifted)
            elif kind == "off":
                _, _, ch, pitch, velocity = event
                writer.channel(delta, 0x80 | ch, pitch, velocity)
            elif kind == "cc":
                _, _, ch, controller, value = event
                writer.channel(delta, 0xB0 | ch, controller, value)
            elif kind == "pc":
                _, _, ch, program = event
                writer.channel(delta, 0xC0 | ch, program)
            elif kind == "tempo":
                writer.meta(delta, 0x51,
                            rng.choice([430000, 520000, 610000]).to_bytes(3, "big"))
            elif kind == "name":
                text = synonyms.get(event[2], event[2])
                writer.meta(delta, 0x03, text.encode("latin-1"))
            elif kind == "meta":
                writer.meta(delta, event[2], event[3])
            elif kind == "sysex":
                writer.sysex(delta, event[3])
            elif kind == "raw":
                writer.delta(delta)
                writer.body.append(event[2])
                writer.body += event[3]
                writer.running = None
        else:
            return_chunk = writer.finish(0)
        rebuilt.append(return_chunk)
    return _header(fmt, len(rebuilt), tpq) + b"".join(rebuilt)


def build_string_piece(seed: int, quarters: int = 24) -> bytes:
    """One clean string-section piece: 2 to 5 named tracks, tpq 480."""
    rng = random.Random(seed)
    tpq = 480
    end = quarters * tpq
    while True:
        n_parts = rng.randint(2, len(STRING_NAMES))
        parts = rng.sample(STRING_NAMES, n_parts)
        if len({ins for _, ins in parts}) >= 2:
            break
    chunks = []
    conductor = RawTrackWriter(rng, quirky=False)
    conductor.meta(0, 0x03, b"conductor")
    conductor.meta(0, 0x51, (500000).to_bytes(3, "big"))
    conductor.meta(end, 0x06, b"end")
    chunks.append(conductor.finish())
    for index, (name, instrument) in enumerate(parts):
        writer = RawTrackWriter(rng, quirky=True)
        writer.meta(0, 0x03, name.encode("latin-1"))
        writer.channel(0, 0xC0 | index, rng.randint(40, 48))
        # stagger entries so some stems have silent stretches
        start = rng.choice([0, 0, 4 * tpq, 8 * tpq])
        _note_line(writer, rng, index, PITCH_CENTERS[instrument],
                   start, end, tpq, 75)
        chunks.append(writer.finish())
    return _header(1, len(chunks), tpq) + b"".join(chunks)


def make_string_corpus(directory: Path, count: int = 10) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    for index in range(count):
        quarters = 16 + 4 * (index % 4)
        data = build_string_piece(seed=4000 + index, quarters=quarters)
        (directory / f"strings_{index:03d}.mid").write_bytes(data)
    return sorted(directory.glob("*.mid"))
