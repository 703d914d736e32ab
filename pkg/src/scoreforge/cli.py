"""Command-line front end.

Subcommands map one-to-one onto the library stages:

    fix         identify instruments, rewrite programs, drop unknowns, dedupe
    normalize   flat velocity 75, single 120 BPM tempo, strip CC 1/11/32
    annotate    random tempo/dynamics/articulation annotation (or plain copy)
    stats       per-instrument activity and polyphony histograms
    split       stratified train/eval/test partition
    manifest    render manifests for external synthesizers
    synth-test  built-in test synthesis of stems and mixtures
    eval        frame SDR / piece median / corpus median report
    pipeline    fix -> normalize -> annotate -> stats -> split -> manifest

All randomness flows from one master seed; each piece gets its own generator
seeded from (master seed, piece id), so results do not depend on file
enumeration order or the number of workers. Every output directory gets a
provenance.json recording the tool version, seed and configuration. Per-file
failures are reported and skipped; --strict turns them into a nonzero exit.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .audio import Waveform, read_wav, write_wav
from .datasetkit import (
    DEFAULT_RATIOS,
    InvalidRatios,
    activity_time,
    piece_labels,
    polyphony_histogram,
    stratified_split,
)
from .evalkit import FRAME_SECONDS, SILENCE_DBFS, SdrReport, evaluate_piece
from .expressive import (
    AnnotationParams,
    annotate,
    load_articulation_tables,
    params_from_dict,
    params_to_dict,
    piece_seed,
    plan_from_dict,
    plan_to_dict,
)
from .gmfix import (
    InstrumentDictionary,
    UnknownInstrument,
    dedupe,
    fix_piece,
    normalize,
    note_fingerprint,
)
from .renderkit import (
    DEFAULT_SAMPLE_RATE,
    StemGroupRules,
    emit_manifest,
    mix_stems,
    test_synthesize,
)
from .smf import MidiPiece, SmfError, parse_smf, write_smf

MIXTURE_STEM = "mixture"


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class PipelineConfig:
    master_seed: int = 0
    corpus_dir: str = ""
    output_dir: str = ""
    dictionary: str | None = None
    articulation_tables: str | None = None
    annotation: AnnotationParams = dataclasses.field(default_factory=AnnotationParams)
    split_ratios: tuple[float, ...] = DEFAULT_RATIOS
    annotate_mode: str = "proposed"
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_len_s: float = FRAME_SECONDS
    silence_threshold_dbfs: float = SILENCE_DBFS
    projection: str = "plain"

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "annotation" in kwargs:
            try:
                kwargs["annotation"] = params_from_dict(kwargs["annotation"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad annotation params: {exc}") from exc
        if "split_ratios" in kwargs:
            kwargs["split_ratios"] = tuple(kwargs["split_ratios"])
        config = cls(**kwargs)
        if config.annotate_mode not in ("plain", "proposed"):
            raise ConfigError(f"bad annotate_mode {config.annotate_mode!r}")
        if config.projection not in ("plain", "scalar"):
            raise ConfigError(f"bad projection {config.projection!r}")
        return config

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "corpus_dir": self.corpus_dir,
            "output_dir": self.output_dir,
            "dictionary": self.dictionary,
            "articulation_tables": self.articulation_tables,
            "annotation": params_to_dict(self.annotation),
            "split_ratios": list(self.split_ratios),
            "annotate_mode": self.annotate_mode,
            "sample_rate": self.sample_rate,
            "frame_len_s": self.frame_len_s,
            "silence_threshold_dbfs": self.silence_threshold_dbfs,
            "projection": self.projection,
        }


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _write_provenance(out_dir: Path, stage: str, config: PipelineConfig) -> None:
    _write_json(out_dir / "provenance.json", {
        "tool": "scoreforge",
        "version": __version__,
        "stage": stage,
        "config": config.to_dict(),
    })


def _midi_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in (".mid", ".midi"))
    if not files:
        raise ConfigError(f"no MIDI files in {directory}")
    return files


def _load_piece(path: Path) -> MidiPiece:
    return parse_smf(path.read_bytes())


def _map_jobs(fn: Callable, items: Sequence, jobs: int) -> list:
    """Apply fn over items, preserving order; jobs > 1 uses processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


class _Failures:
    def __init__(self, strict: bool):
        self.strict = strict
        self.items: list[tuple[str, str]] = []

    def add(self, piece_id: str, message: str) -> None:
        self.items.append((piece_id, message))
        print(f"skip {piece_id}: {message}", file=sys.stderr)

    def exit_code(self) -> int:
        return 1 if (self.strict and self.items) else 0


_DICTIONARIES: dict[str | None, InstrumentDictionary] = {}


def _dictionary(path: str | None) -> InstrumentDictionary:
    if path not in _DICTIONARIES:
        _DICTIONARIES[path] = (InstrumentDictionary.default() if path is None
                               else InstrumentDictionary.from_csv(path))
    return _DICTIONARIES[path]


_TABLE_CACHE: dict = {}


def _tables(path: str | None):
    if path not in _TABLE_CACHE:
        _TABLE_CACHE[path] = load_articulation_tables(path)
    return _TABLE_CACHE[path]


# ---------------------------------------------------------------------------
# Stage workers (top level so they pickle for process pools)
# ---------------------------------------------------------------------------

def _fix_worker(path_str: str, dictionary_path: str | None) -> dict:
    path = Path(path_str)
    piece_id = path.stem
    try:
        piece = _load_piece(path)
        fixed, instruments = fix_piece(piece, _dictionary(dictionary_path))
        if not instruments:
            return {"id": piece_id, "error": "no note-bearing tracks"}
        if len(set(instruments)) < 2:
            return {"id": piece_id,
                    "error": f"monotimbral: only {instruments[0].name}"}
        return {
            "id": piece_id,
            "bytes": write_smf(fixed),
            "fingerprint": note_fingerprint(fixed),
            "instruments": sorted({iid.name for iid in instruments}),
        }
    except (SmfError, UnknownInstrument, OSError) as exc:
        return {"id": piece_id, "error": str(exc)}


def _normalize_worker(path_str: str) -> dict:
    path = Path(path_str)
    piece_id = path.stem
    try:
        piece = _load_piece(path)
        return {"id": piece_id, "bytes": write_smf(normalize(piece))}
    except (SmfError, OSError) as exc:
        return {"id": piece_id, "error": str(exc)}


def _annotate_worker(path_str: str, mode: str, master_seed: int,
                     tables_path: str | None, params_data: dict) -> dict:
    path = Path(path_str)
    piece_id = path.stem
    try:
        piece = _load_piece(path)
        seed = piece_seed(master_seed, piece_id)
        if mode == "plain":
            return {
                "id": piece_id,
                "bytes": write_smf(piece),
                "plan": {"mode": "plain", "seed": seed},
            }
        params = params_from_dict({**params_data, "seed": seed})
        annotated, plan = annotate(piece, _tables(tables_path), params)
        return {
            "id": piece_id,
            "bytes": write_smf(annotated),
            "plan": {"mode": "proposed", "seed": seed, "plan": plan_to_dict(plan)},
        }
    except Exception as exc:  # per-piece isolation, reported upstream
        return {"id": piece_id, "error": f"{type(exc).__name__}: {exc}"}


def _stats_worker(path_str: str) -> dict:
    path = Path(path_str)
    piece_id = path.stem
    try:
        piece = _load_piece(path)
        activity = activity_time(piece)
        polyphony = polyphony_histogram(piece)
        return {
            "id": piece_id,
            "activity": {iid.name: seconds for iid, seconds in activity.items()},
            "polyphony": {str(level): seconds
                          for level, seconds in polyphony.items()},
        }
    except (SmfError, OSError) as exc:
        return {"id": piece_id, "error": str(exc)}


def _manifest_worker(path_str: str, plans_dir: str | None,
                     sample_rate: int) -> dict:
    path = Path(path_str)
    piece_id = path.stem
    try:
        piece = _load_piece(path)
        plan = None
        if plans_dir is not None:
            plan_path = Path(plans_dir) / f"{piece_id}.plan.json"
            if plan_path.exists():
                data = json.loads(plan_path.read_text(encoding="utf-8"))
                if data.get("mode") == "proposed":
                    plan = plan_from_dict(data["plan"])
        manifest = emit_manifest(piece, plan, StemGroupRules(),
                                 piece_id=piece_id, sample_rate=sample_rate)
        return {"id": piece_id, "manifest": manifest.to_dict()}
    except Exception as exc:
        return {"id": piece_id, "error": f"{type(exc).__name__}: {exc}"}


def _synth_worker(path_str: str, out_dir: str, sample_rate: int) -> dict:
    path = Path(path_str)
    piece_id = path.stem
    try:
        piece = _load_piece(path)
        manifest = emit_manifest(piece, None, StemGroupRules(),
                                 piece_id=piece_id, sample_rate=sample_rate)
        piece_dir = Path(out_dir) / piece_id
        piece_dir.mkdir(parents=True, exist_ok=True)
        stems: dict[str, Waveform] = {}
        for entry in manifest.entries:
            selection = [tr.track_index for tr in entry.tracks]
            rendered = test_synthesize(piece, selection, sample_rate)
            # storage precision is float32; mix in that precision so the
            # written stems sum exactly to the written mixture
            stems[entry.stem] = Waveform(
                rendered.samples.astype(np.float32).astype(np.float64),
                sample_rate)
        for stem in sorted(stems):
            write_wav(piece_dir / f"{stem}.wav", stems[stem])
        mix = mix_stems([stems[s] for s in sorted(stems)])
        mixture = Waveform(
            mix.waveform.samples.astype(np.float32).astype(np.float64),
            sample_rate)
        write_wav(piece_dir / f"{MIXTURE_STEM}.wav", mixture)
        return {"id": piece_id, "stems": sorted(stems), "peak": mix.peak}
    except Exception as exc:
        return {"id": piece_id, "error": f"{type(exc).__name__}: {exc}"}


def _eval_worker(piece_dir_str: str, estimates_dir: str | None,
                 frame_len_s: float, silence_threshold_dbfs: float,
                 projection: str) -> dict:
    piece_dir = Path(piece_dir_str)
    piece_id = piece_dir.name
    try:
        references: dict[str, Waveform] = {}
        for wav in sorted(piece_dir.glob("*.wav")):
            if wav.stem != MIXTURE_STEM:
                references[wav.stem] = read_wav(wav)
        if not references:
            return {"id": piece_id, "error": "no stem files"}
        if estimates_dir is None:
            mixture = read_wav(piece_dir / f"{MIXTURE_STEM}.wav")
            estimates = {stem: mixture for stem in references}
        else:
            estimates = {}
            for stem in references:
                est_path = Path(estimates_dir) / piece_id / f"{stem}.wav"
                if est_path.exists():
                    estimates[stem] = read_wav(est_path)
        frames = evaluate_piece(references, estimates, frame_len_s,
                                silence_threshold_dbfs, projection)
        return {"id": piece_id, "frames": frames}
    except Exception as exc:
        return {"id": piece_id, "error": f"{type(exc).__name__}: {exc}"}


# ---------------------------------------------------------------------------
# Stage drivers
# ---------------------------------------------------------------------------

def _stage_fix(in_dir: Path, out_dir: Path, config: PipelineConfig,
               jobs: int, failures: _Failures) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _midi_files(in_dir)
    worker = partial(_fix_worker, dictionary_path=config.dictionary)
    results = _map_jobs(worker, [str(p) for p in files], jobs)
    kept: list[dict] = []
    for result in results:
        if "error" in result:
            failures.add(result["id"], result["error"])
        else:
            kept.append(result)
    seen: dict[str, str] = {}
    duplicates: list[dict] = []
    unique: list[dict] = []
    for result in sorted(kept, key=lambda r: r["id"]):
        fp = result["fingerprint"]
        if fp in seen:
            duplicates.append({"kept": seen[fp], "dropped": result["id"],
                               "fingerprint": fp})
            continue
        seen[fp] = result["id"]
        unique.append(result)
    for result in unique:
        (out_dir / f"{result['id']}.mid").write_bytes(result["bytes"])
    _write_json(out_dir / "fix_report.json", {
        "kept": {r["id"]: r["instruments"] for r in unique},
        "rejected": {pid: msg for pid, msg in failures.items},
        "duplicates": duplicates,
    })
    _write_provenance(out_dir, "fix", config)


def _stage_copy_transform(in_dir: Path, out_dir: Path, worker: Callable,
                          jobs: int, failures: _Failures) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _midi_files(in_dir)
    results = _map_jobs(worker, [str(p) for p in files], jobs)
    for result in results:
        if "error" in result:
            failures.add(result["id"], result["error"])
            continue
        (out_dir / f"{result['id']}.mid").write_bytes(result["bytes"])
        if "plan" in result:
            _write_json(out_dir / f"{result['id']}.plan.json", result["plan"])


def _stage_normalize(in_dir: Path, out_dir: Path, config: PipelineConfig,
                     jobs: int, failures: _Failures) -> None:
    _stage_copy_transform(in_dir, out_dir, _normalize_worker, jobs, failures)
    _write_provenance(out_dir, "normalize", config)


def _stage_annotate(in_dir: Path, out_dir: Path, config: PipelineConfig,
                    jobs: int, failures: _Failures) -> None:
    params_data = params_to_dict(config.annotation)
    worker = partial(_annotate_worker, mode=config.annotate_mode,
                     master_seed=config.master_seed,
                     tables_path=config.articulation_tables,
                     params_data=params_data)
    _stage_copy_transform(in_dir, out_dir, worker, jobs, failures)
    _write_provenance(out_dir, "annotate", config)


def _stage_stats(in_dir: Path, out_dir: Path, config: PipelineConfig,
                 jobs: int, failures: _Failures) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _midi_files(in_dir)
    results = _map_jobs(_stats_worker, [str(p) for p in files], jobs)
    pieces: dict[str, dict] = {}
    total_activity: dict[str, float] = {}
    total_polyphony: dict[str, float] = {}
    for result in results:
        if "error" in result:
            failures.add(result["id"], result["error"])
            continue
        pieces[result["id"]] = {
            "activity_seconds": result["activity"],
            "polyphony_seconds": result["polyphony"],
        }
        for name, seconds in result["activity"].items():
            total_activity[name] = total_activity.get(name, 0.0) + seconds
        for level, seconds in result["polyphony"].items():
            total_polyphony[level] = total_polyphony.get(level, 0.0) + seconds
    _write_json(out_dir / "stats.json", {
        "pieces": pieces,
        "corpus": {
            "activity_seconds": total_activity,
            "polyphony_seconds": total_polyphony,
        },
    })
    _write_provenance(out_dir, "stats", config)


def _stage_split(in_dir: Path, out_dir: Path, config: PipelineConfig,
                 jobs: int, failures: _Failures) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _midi_files(in_dir)
    label_sets: dict[str, set] = {}
    for path in files:
        piece_id = path.stem
        try:
            labels = piece_labels(_load_piece(path))
        except SmfError as exc:
            failures.add(piece_id, str(exc))
            continue
        if not labels:
            failures.add(piece_id, "no identifiable instruments")
            continue
        label_sets[piece_id] = labels
    if not label_sets:
        raise ConfigError(f"no usable pieces in {in_dir}")
    rng = np.random.default_rng(config.master_seed)
    try:
        result = stratified_split(label_sets, config.split_ratios, rng)
    except InvalidRatios as exc:
        raise ConfigError(str(exc)) from exc
    _write_json(out_dir / "split.json", {
        "ratios": list(result.ratios),
        "assignment": dict(sorted(result.assignment.items())),
        "splits": {name: result.split(name) for name in ("train", "eval", "test")},
        "balance_report": result.balance_report,
    })
    _write_provenance(out_dir, "split", config)


def _stage_manifest(in_dir: Path, out_dir: Path, config: PipelineConfig,
                    jobs: int, failures: _Failures,
                    plans_dir: Path | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _midi_files(in_dir)
    worker = partial(_manifest_worker,
                     plans_dir=str(plans_dir) if plans_dir else None,
                     sample_rate=config.sample_rate)
    results = _map_jobs(worker, [str(p) for p in files], jobs)
    for result in results:
        if "error" in result:
            failures.add(result["id"], result["error"])
            continue
        _write_json(out_dir / f"{result['id']}.manifest.json", result["manifest"])
    _write_provenance(out_dir, "manifest", config)


def _stage_synth(in_dir: Path, out_dir: Path, config: PipelineConfig,
                 jobs: int, failures: _Failures) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _midi_files(in_dir)
    worker = partial(_synth_worker, out_dir=str(out_dir),
                     sample_rate=config.sample_rate)
    results = _map_jobs(worker, [str(p) for p in files], jobs)
    report: dict[str, dict] = {}
    for result in results:
        if "error" in result:
            failures.add(result["id"], result["error"])
            continue
        report[result["id"]] = {"stems": result["stems"], "peak": result["peak"]}
    _write_json(out_dir / "synth_report.json", {"pieces": report})
    _write_provenance(out_dir, "synth-test", config)


def _stage_eval(audio_dir: Path, out_dir: Path, config: PipelineConfig,
                jobs: int, failures: _Failures,
                estimates_dir: Path | None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    piece_dirs = sorted(p for p in audio_dir.iterdir() if p.is_dir())
    if not piece_dirs:
        raise ConfigError(f"no piece directories in {audio_dir}")
    worker = partial(_eval_worker,
                     estimates_dir=str(estimates_dir) if estimates_dir else None,
                     frame_len_s=config.frame_len_s,
                     silence_threshold_dbfs=config.silence_threshold_dbfs,
                     projection=config.projection)
    results = _map_jobs(worker, [str(p) for p in piece_dirs], jobs)
    report = SdrReport(frame_len_s=config.frame_len_s,
                       silence_threshold_dbfs=config.silence_threshold_dbfs,
                       projection=config.projection)
    for result in results:
        if "error" in result:
            failures.add(result["id"], result["error"])
            continue
        report.add_piece(result["id"], result["frames"])
    report.finalize()
    _write_json(out_dir / "eval_report.json", report.to_dict())
    _write_provenance(out_dir, "eval", config)


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoreforge",
        description="Expressive render-ready corpora from raw orchestral MIDI.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_input: bool = True):
        if needs_input:
            p.add_argument("input", help="input directory")
        p.add_argument("--out", required=needs_input, default="",
                       help="output directory"
                            + ("" if needs_input else " (or output_dir from config)"))
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        p.add_argument("--strict", action="store_true",
                       help="nonzero exit if any piece fails")

    p = sub.add_parser("fix", help="map instruments, reject unknowns, dedupe")
    common(p)
    p.add_argument("--dictionary", help="track-name dictionary CSV")

    p = sub.add_parser("normalize", help="flatten velocity, tempo, controllers")
    common(p)

    p = sub.add_parser("annotate", help="apply random expressive annotations")
    common(p)
    p.add_argument("--mode", choices=("plain", "proposed"), default=None)
    p.add_argument("--tables", help="articulation table CSV")

    p = sub.add_parser("stats", help="activity and polyphony statistics")
    common(p)

    p = sub.add_parser("split", help="stratified train/eval/test split")
    common(p)
    p.add_argument("--ratios", help="three comma-separated ratios, e.g. 0.7,0.1,0.2")

    p = sub.add_parser("manifest", help="emit render manifests")
    common(p)
    p.add_argument("--plans", help="directory with .plan.json files")

    p = sub.add_parser("synth-test", help="render stems with the test synthesizer")
    common(p)
    p.add_argument("--sample-rate", type=int, default=None)

    p = sub.add_parser("eval", help="SDR report for stems under an audio tree")
    common(p)
    p.add_argument("--estimates", help="directory of estimated stems "
                                       "(default: use each piece's mixture)")
    p.add_argument("--projection", choices=("plain", "scalar"), default=None)

    p = sub.add_parser("pipeline", help="run fix through manifest in order")
    common(p, needs_input=False)
    p.add_argument("input", nargs="?", help="input directory (or corpus_dir from config)")

    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    config = (PipelineConfig.from_file(args.config) if args.config
              else PipelineConfig())
    if args.seed is not None:
        config.master_seed = args.seed
    if getattr(args, "dictionary", None):
        config.dictionary = args.dictionary
    if getattr(args, "tables", None):
        config.articulation_tables = args.tables
    if getattr(args, "mode", None):
        config.annotate_mode = args.mode
    if getattr(args, "sample_rate", None):
        config.sample_rate = args.sample_rate
    if getattr(args, "projection", None):
        config.projection = args.projection
    if getattr(args, "ratios", None):
        parts = [float(x) for x in args.ratios.split(",")]
        config.split_ratios = tuple(parts)
    return config


def run_command(argv: Sequence[str]) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _config_from_args(args)
        failures = _Failures(strict=args.strict)
        out_dir = Path(args.out)
        jobs = max(args.jobs, 1)

        if args.command == "fix":
            _stage_fix(Path(args.input), out_dir, config, jobs, failures)
        elif args.command == "normalize":
            _stage_normalize(Path(args.input), out_dir, config, jobs, failures)
        elif args.command == "annotate":
            _stage_annotate(Path(args.input), out_dir, config, jobs, failures)
        elif args.command == "stats":
            _stage_stats(Path(args.input), out_dir, config, jobs, failures)
        elif args.command == "split":
            _stage_split(Path(args.input), out_dir, config, jobs, failures)
        elif args.command == "manifest":
            plans = Path(args.plans) if args.plans else Path(args.input)
            _stage_manifest(Path(args.input), out_dir, config, jobs, failures,
                            plans_dir=plans)
        elif args.command == "synth-test":
            _stage_synth(Path(args.input), out_dir, config, jobs, failures)
        elif args.command == "eval":
            estimates = Path(args.estimates) if args.estimates else None
            _stage_eval(Path(args.input), out_dir, config, jobs, failures,
                        estimates_dir=estimates)
        elif args.command == "pipeline":
            if not args.input and not config.corpus_dir:
                raise ConfigError("no corpus directory (positional argument "
                                  "or corpus_dir in config)")
            in_dir = Path(args.input) if args.input else Path(config.corpus_dir)
            if not in_dir.is_dir():
                raise ConfigError(f"corpus directory not found: {in_dir}")
            if not args.out and not config.output_dir:
                raise ConfigError("no output directory (--out or output_dir "
                                  "in config)")
            root = Path(args.out) if args.out else Path(config.output_dir)
            stages = [
                ("10_fixed", _stage_fix, None),
                ("20_normalized", _stage_normalize, "10_fixed"),
                ("30_annotated", _stage_annotate, "20_normalized"),
                ("40_stats", _stage_stats, "30_annotated"),
                ("50_split", _stage_split, "30_annotated"),
                ("60_manifests", None, "30_annotated"),
            ]
            for name, stage_fn, source in stages:
                stage_in = in_dir if source is None else root / source
                stage_out = root / name
                if name == "60_manifests":
                    _stage_manifest(stage_in, stage_out, config, jobs, failures,
                                    plans_dir=root / "30_annotated")
                else:
                    stage_fn(stage_in, stage_out, config, jobs, failures)
        return failures.exit_code()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SmfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
