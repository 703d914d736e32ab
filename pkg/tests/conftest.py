"""Shared fixtures: synthetic corpora built once per session."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import corpus  # noqa: E402


@pytest.fixture(scope="session")
def raw_corpus_dir(tmp_path_factory) -> Path:
    directory = tmp_path_factory.mktemp("raw_corpus")
    corpus.make_raw_corpus(directory)
    return directory


@pytest.fixture(scope="session")
def raw_corpus_files(raw_corpus_dir) -> list[Path]:
    return sorted(raw_corpus_dir.glob("*.mid"))


@pytest.fixture(scope="session")
def strings_corpus_dir(tmp_path_factory) -> Path:
    directory = tmp_path_factory.mktemp("strings_corpus")
    corpus.make_string_corpus(directory)
    return directory
