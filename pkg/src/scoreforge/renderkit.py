"""Bridge from annotated scores to audio.

Real rendering is delegated to external synthesizers: ``emit_manifest``
describes, per output stem, which tracks contribute, their instruments and
their articulation schedules, together with the tempo map, so any sampler
host can reproduce the session. Stems are grouped the way separation models
consume them (all violins into one stem, piccolo into flute, english horn
into oboe).

For end-to-end verification without third-party sound libraries there is a
deliberately plain built-in synthesizer: band-limited sawtooths with linear
attack/release, bit-exact deterministic. ``mix_stems`` is a plain sample sum
with no normalization, because the whole premise of source separation data
is that stems add up to the mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .audio import AudioError, Waveform
from .expressive import AnnotationPlan
from .gmfix import REGISTRY, InstrumentId, track_instruments
from .smf import MidiPiece, TempoMap, track_notes

DEFAULT_SAMPLE_RATE = 22_050
ATTACK_SECONDS = 0.010
RELEASE_SECONDS = 0.010
SYNTH_GAIN = 0.2
MAX_HARMONICS = 32

DEFAULT_MERGES = {
    "piccolo": "flute",
    "english_horn": "oboe",
}


class RenderError(Exception):
    pass


class UngroupableTrack(RenderError):
    pass


class SampleRateMismatch(AudioError):
    pass


@dataclass(frozen=True, slots=True)
class StemGroupRules:
    """Maps instrument names onto output stem names; identity by default."""

    merge: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_MERGES))

    def __post_init__(self):
        for source, target in self.merge.items():
            if target not in REGISTRY:
                raise RenderError(f"merge target {target!r} is not a known instrument")

    def stem_for(self, instrument: InstrumentId) -> str:
        return self.merge.get(instrument.name, instrument.name)


@dataclass
class TrackRender:
    track_index: int
    instrument: InstrumentId
    # articulation schedule: (tick, cc32 value, articulation name)
    schedule: list[tuple[int, int, str]]


@dataclass
class StemEntry:
    stem: str
    path: str
    tracks: list[TrackRender]


@dataclass
class RenderManifest:
    piece_id: str
    sample_rate: int
    channel_layout: str
    tempo: list[tuple[int, int]]  # (tick, microseconds per quarter)
    rules: StemGroupRules
    entries: list[StemEntry]

    def to_dict(self) -> dict:
        return {
            "piece_id": self.piece_id,
            "sample_rate": self.sample_rate,
            "channel_layout": self.channel_layout,
            "tempo": [list(change) for change in self.tempo],
            "merge_rules": dict(self.rules.merge),
            "stems": [
                {
                    "stem": entry.stem,
                    "path": entry.path,
                    "tracks": [
                        {
                            "track_index": tr.track_index,
                            "instrument": tr.instrument.name,
                            "gm_program": tr.instrument.gm_program,
                            "schedule": [list(step) for step in tr.schedule],
                        }
                        for tr in entry.tracks
                    ],
                }
                for entry in self.entries
            ],
        }


def emit_manifest(piece: MidiPiece, plan: AnnotationPlan | None,
                  rules: StemGroupRules | None = None,
                  piece_id: str = "piece",
                  sample_rate: int = DEFAULT_SAMPLE_RATE) -> RenderManifest:
    """Describe how to render a piece: one entry per output stem, each
    listing its contributing tracks and their articulation schedules.

    The schedule comes from the annotation plan when given, otherwise from
    CC#32 events already present in the piece (articulation names unknown in
    that case). Raises UngroupableTrack for note-bearing tracks whose
    instrument cannot be identified.
    """
    rules = rules or StemGroupRules()
    instruments = track_instruments(piece)
    by_index: dict[int, list[tuple[int, int, str]]] = {}
    if plan is not None:
        for iv in plan.articulations:
            by_index.setdefault(iv.track_index, []).append(
                (iv.start_tick, iv.cc32_value, iv.articulation))
    else:
        from .smf import ControlChange
        for index, track in enumerate(piece.tracks):
            for ev in track.events:
                if isinstance(ev, ControlChange) and ev.controller == 32:
                    by_index.setdefault(index, []).append((ev.tick, ev.value, ""))

    stems: dict[str, StemEntry] = {}
    for index, (track, iid) in enumerate(zip(piece.tracks, instruments)):
        if not track_notes(track):
            continue
        if iid is None:
            raise UngroupableTrack(
                f"track {index} ({track.name!r}) has no identifiable instrument")
        stem = rules.stem_for(iid)
        entry = stems.get(stem)
        if entry is None:
            entry = StemEntry(stem=stem, path=f"{piece_id}/{stem}.wav", tracks=[])
            stems[stem] = entry
        entry.tracks.append(TrackRender(
            track_index=index, instrument=iid,
            schedule=sorted(by_index.get(index, []))))

    tempo = TempoMap.from_piece(piece).changes()
    entries = [stems[name] for name in sorted(stems)]
    return RenderManifest(piece_id=piece_id, sample_rate=sample_rate,
                          channel_layout="mono", tempo=tempo, rules=rules,
                          entries=entries)


# ---------------------------------------------------------------------------
# Test synthesizer
# ---------------------------------------------------------------------------

def _pitch_to_hz(pitch: int) -> float:
    return 440.0 * 2.0 ** ((pitch - 69) / 12.0)


def test_synthesize(piece: MidiPiece,
                    track_selection: Sequence[int] | None = None,
                    sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Render selected tracks with additive band-limited sawtooths.

    Each note plays its equal-tempered frequency with harmonics up to the
    Nyquist limit (at most 32 partials), amplitude proportional to
    velocity/127, and a 10 ms linear attack and release. Deliberately crude,
    but deterministic and bit-exact, which is what the downstream SDR checks
    need.
    """
    tempo_map = TempoMap.from_piece(piece)
    total_seconds = tempo_map.seconds_at(piece.end_tick())
    n_samples = max(int(round(total_seconds * sample_rate)), 1)
    out = np.zeros(n_samples, dtype=np.float64)
    indices = (range(len(piece.tracks)) if track_selection is None
               else track_selection)
    attack = max(int(round(ATTACK_SECONDS * sample_rate)), 1)
    release = max(int(round(RELEASE_SECONDS * sample_rate)), 1)
    nyquist = sample_rate / 2.0

    for index in indices:
        for note in track_notes(piece.tracks[index]):
            start = int(round(tempo_map.seconds_at(note.tick_on) * sample_rate))
            stop = int(round(tempo_map.seconds_at(note.tick_off) * sample_rate))
            stop = min(stop, n_samples)
            if stop <= start:
                continue
            length = stop - start
            frequency = _pitch_to_hz(note.pitch)
            harmonics = min(int(nyquist / frequency), MAX_HARMONICS)
            if harmonics < 1:
                continue
            t = np.arange(length, dtype=np.float64) / sample_rate
            wave = np.zeros(length, dtype=np.float64)
            for k in range(1, harmonics + 1):
                wave += np.sin(2.0 * np.pi * k * frequency * t) / k
            envelope = np.minimum(
                np.minimum(np.arange(1, length + 1, dtype=np.float64) / attack,
                           np.arange(length, 0, -1, dtype=np.float64) / release),
                1.0)
            out[start:stop] += SYNTH_GAIN * (note.velocity / 127.0) * wave * envelope
    return Waveform(out, sample_rate)


@dataclass
class MixResult:
    waveform: Waveform
    peak: float


def mix_stems(stems: Sequence[Waveform]) -> MixResult:
    """Sample-wise sum of stems in the given order: no normalization, no
    clipping. Shorter stems are zero-padded to the longest."""
    if not stems:
        raise AudioError("no stems to mix")
    rate = stems[0].sample_rate
    for stem in stems:
        if stem.sample_rate != rate:
            raise SampleRateMismatch(
                f"stems at {stem.sample_rate} Hz and {rate} Hz cannot be mixed")
    length = max(len(stem) for stem in stems)
    out = np.zeros(length, dtype=np.float64)
    for stem in stems:
        out[:len(stem)] += stem.samples
    peak = float(np.max(np.abs(out))) if length else 0.0
    return MixResult(Waveform(out, rate), peak)
