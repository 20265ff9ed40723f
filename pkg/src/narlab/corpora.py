"""Corpus file IO: one sentence per line, space-separated integer token ids,
plus sorted-key JSON sidecars for provenance.  All writers are
deterministic byte-for-byte given identical inputs."""

from __future__ import annotations

import json
from pathlib import Path


def write_sentences(path, sentences) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in sentences:
            fh.write(" ".join(str(int(t)) for t in s) + "\n")


def read_sentences(path) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            out.append([int(t) for t in line.split()] if line else [])
    return out


def write_pairs(directory, name: str, pairs) -> None:
    """Aligned <name>.src / <name>.tgt files under ``directory``."""
    directory = Path(directory)
    write_sentences(directory / f"{name}.src", [s for s, _ in pairs])
    write_sentences(directory / f"{name}.tgt", [t for _, t in pairs])


def read_pairs(directory, name: str) -> list:
    directory = Path(directory)
    srcs = read_sentences(directory / f"{name}.src")
    tgts = read_sentences(directory / f"{name}.tgt")
    if len(srcs) != len(tgts):
        raise ValueError(
            f"{name}: source/target line counts differ ({len(srcs)} vs {len(tgts)})"
        )
    return list(zip(srcs, tgts))


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
