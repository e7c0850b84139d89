"""UCR-archive-format dataset loading and the per-dataset run-settings
registry (85 univariate benchmark datasets).

Split files are plain text, one record per line: the label field first,
then L numeric values, comma- or tab-delimited (detected per file). Labels
are remapped to contiguous indices by ascending sort over the union of both
splits. Series values are used raw; no normalization is applied.
"""

from __future__ import annotations

import csv
import difflib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class UcrParseError(ValueError):
    """A split file could not be parsed; the message names the line."""


class UnknownDatasetError(KeyError):
    """Dataset name not in the registry; the message lists near matches."""


@dataclass
class UcrDataset:
    name: str
    train_x: np.ndarray   # (Ntr, L) float64
    train_y: np.ndarray   # (Ntr,) int indices in [0, C)
    test_x: np.ndarray
    test_y: np.ndarray
    label_map: dict[float, int]

    @property
    def series_length(self) -> int:
        return self.train_x.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.label_map)


@dataclass(frozen=True)
class DatasetRegistryEntry:
    name: str
    type_tag: str
    num_classes: int
    series_length: int
    train_size: int
    test_size: int
    epochs: int
    train_batch: int
    test_batch: int


def load_split(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one split file into (raw labels, series matrix)."""
    path = Path(path)
    labels: list[float] = []
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            delim = "\t" if "\t" in line else ","
            fields = line.split(delim)
            if len(fields) < 2:
                raise UcrParseError(f"{path}:{lineno}: record has no series values")
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise UcrParseError(f"{path}:{lineno}: unparseable field ({exc})") from exc
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise UcrParseError(
                    f"{path}:{lineno}: row has {len(values)} fields, expected {width}"
                )
            if not all(np.isfinite(values[1:])):
                raise UcrParseError(f"{path}:{lineno}: non-finite series value")
            labels.append(values[0])
            rows.append(values[1:])
    if not rows:
        raise UcrParseError(f"{path}: empty split file")
    return np.asarray(labels), np.asarray(rows, dtype=np.float64)


def write_split(path, labels, series) -> None:
    """Inverse of load_split (comma-delimited), for round-trip tests and
    fixture generation."""
    with open(path, "w", encoding="utf-8") as fh:
        for label, row in zip(labels, series):
            fh.write(",".join(repr(float(v)) for v in [label, *row]) + "\n")


def make_dataset(train_path, test_path, name: str) -> UcrDataset:
    """Load both splits and remap labels to contiguous indices by ascending
    sort over the union of train and test labels."""
    train_labels, train_x = load_split(train_path)
    test_labels, test_x = load_split(test_path)
    if train_x.shape[1] != test_x.shape[1]:
        raise UcrParseError(
            f"{name}: train length {train_x.shape[1]} != test length {test_x.shape[1]}"
        )
    label_map = {lab: i for i, lab in enumerate(sorted(set(train_labels) | set(test_labels)))}
    train_y = np.asarray([label_map[lab] for lab in train_labels], dtype=int)
    test_y = np.asarray([label_map[lab] for lab in test_labels], dtype=int)
    return UcrDataset(name, train_x, train_y, test_x, test_y, label_map)


def _load_registry() -> dict[str, DatasetRegistryEntry]:
    out = {}
    with resources.files("grufcn.data").joinpath("registry.csv").open("r") as fh:
        for row in csv.DictReader(fh):
            out[row["name"]] = DatasetRegistryEntry(
                name=row["name"],
                type_tag=row["type"],
                num_classes=int(row["classes"]),
                series_length=int(row["length"]),
                train_size=int(row["train_size"]),
                test_size=int(row["test_size"]),
                epochs=int(row["epochs"]),
                train_batch=int(row["train_batch"]),
                test_batch=int(row["test_batch"]),
            )
    return out


_REGISTRY: dict[str, DatasetRegistryEntry] | None = None


def registry() -> dict[str, DatasetRegistryEntry]:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = _load_registry()
    return _REGISTRY


def registry_lookup(name: str) -> DatasetRegistryEntry:
    reg = registry()
    if name not in reg:
        near = difflib.get_close_matches(name, reg.keys(), n=5, cutoff=0.4)
        hint = f"; close matches: {', '.join(near)}" if near else ""
        raise UnknownDatasetError(f"unknown dataset {name!r}{hint}")
    return reg[name]


def find_split_files(root, name: str) -> tuple[Path, Path]:
    """Locate <name>_TRAIN / <name>_TEST under root, accepting both archive
    layouts (flat or per-dataset directory) and common extensions."""
    root = Path(root)
    for base in (root / name, root):
        for ext in ("", ".tsv", ".txt", ".csv"):
            train = base / f"{name}_TRAIN{ext}"
            test = base / f"{name}_TEST{ext}"
            if train.is_file() and test.is_file():
                return train, test
    raise FileNotFoundError(
        f"could not find {name}_TRAIN/{name}_TEST under {root}"
    )
