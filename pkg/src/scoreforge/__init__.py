"""Toolkit for turning raw symbolic orchestral scores into expressive,
render-ready source-separation corpora: MIDI repair and normalization,
random expressive annotation, dataset statistics, stratified splitting,
render manifests, a deterministic test synthesizer, and SDR evaluation."""

__version__ = "0.1.0"
