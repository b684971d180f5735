"""Run records, atomic file output and seeded random sub-streams."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["RunRecord", "atomic_write_text", "substream", "CSV_HEADER"]

CSV_HEADER = ("gen", "best", "mean", "evals")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named purpose (``init``, ``shifts``, ...)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def atomic_write_text(path, text: str) -> Path:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


@dataclass
class RunRecord:
    """Per-generation convergence data of one optimization run.

    ``best`` is the best fitness found so far, ``mean`` the mean fitness of
    the current population and ``evals`` the cumulative evaluation count.
    """

    entries: list[tuple[int, float, float, int]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, gen: int, best: float, mean: float, evals: int) -> None:
        if self.entries and evals <= self.entries[-1][3]:
            raise ValueError("evaluation counts must be strictly increasing")
        if self.entries:
            best = min(best, self.entries[-1][1])
        self.entries.append((int(gen), float(best), float(mean), int(evals)))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def final_best(self) -> float:
        return self.entries[-1][1]

    @property
    def final_evals(self) -> int:
        return self.entries[-1][3]

    @property
    def best_curve(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])

    def to_csv(self) -> str:
        """CSV text: ``# key=value`` metadata lines, then ``gen,best,mean,evals`` rows."""
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}={json.dumps(self.metadata[key], sort_keys=True)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for gen, best, mean, evals in self.entries:
            writer.writerow([gen, repr(best), repr(mean), evals])
        return buf.getvalue()

    def save(self, path) -> Path:
        return atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "RunRecord":
        metadata, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key] = json.loads(value)
            elif line.strip():
                rows.append(line)
        reader = csv.reader(rows)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected run record header {header}")
        rec = cls(metadata=metadata)
        for gen, best, mean, evals in reader:
            rec.entries.append((int(gen), float(best), float(mean), int(evals)))
        return rec

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_csv(Path(path).read_text())
