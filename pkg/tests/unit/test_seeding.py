"""Tests for seed derivation and the CSV helpers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from sdflow._io import atomic_write_text, format_float, write_csv_rows
from sdflow.seeding import derive_seed, make_rng


def test_derive_seed_is_deterministic() -> None:
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
    assert 0 <= derive_seed(5, 1, 2) < 2**63


def test_derive_seed_separates_streams() -> None:
    seeds = {derive_seed(0, i) for i in range(100)} | {derive_seed(1, i) for i in range(100)}
    assert len(seeds) == 200
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)


def test_make_rng_repeats_draws() -> None:
    assert make_rng(3, 4).normal() == make_rng(3, 4).normal()
    assert make_rng(3).normal() == np.random.default_rng(3).normal()


def test_make_rng_passes_generator_through() -> None:
    gen = np.random.default_rng(0)
    assert make_rng(gen) is gen
    with pytest.raises(TypeError):
        make_rng(gen, 1)


def test_format_float_round_trips() -> None:
    for value in (0.1, 1.0 / 3.0, 1e-300, -2.5e17):
        assert float(format_float(value)) == value
    assert format_float(2.0) == "2"


def test_write_csv_rows(tmp_path: Path) -> None:
    path = tmp_path / "nested" / "out.csv"
    write_csv_rows(path, ["step", "value", "label"], [[0, 0.1, "a"], [1, 2.0, "b,c"]])
    assert path.read_text(encoding="utf-8") == 'step,value,label\n0,0.10000000000000001,a\n1,2,"b,c"\n'


def test_atomic_write_leaves_no_temporaries(tmp_path: Path) -> None:
    path = tmp_path / "file.txt"
    atomic_write_text(path, "first")
    atomic_write_text(path, "second")
    assert path.read_text(encoding="utf-8") == "second"
    assert [p.name for p in tmp_path.iterdir()] == ["file.txt"]
