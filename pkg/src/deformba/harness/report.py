"""Suite reports and atomic file output."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from .checks import Check


def _plain(x):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


@dataclass
class Report:
    suite: str
    seed: int
    checks: dict[str, Check] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add(self, check: Check) -> None:
        if check.name in self.checks:
            raise ValueError(f"duplicate check name {check.name!r}")
        self.checks[check.name] = check

    @property
    def status(self) -> str:
        return "pass" if all(c.passed for c in self.checks.values()) else "fail"

    @property
    def failures(self) -> list[Check]:
        return [c for _, c in sorted(self.checks.items()) if not c.passed]

    def to_dict(self) -> dict:
        checks = {}
        for name in sorted(self.checks):
            c = self.checks[name]
            entry = {"name": c.name, "status": c.status, "measured": c.measured, "tolerance": c.tolerance}
            if c.detail:
                entry["detail"] = c.detail
            checks[name] = entry
        out = {
            "suite": self.suite,
            "status": self.status,
            "environment": {"seed": self.seed, "version": __version__},
            "checks": checks,
        }
        if self.extra:
            out["extra"] = self.extra
        return _plain(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_lines(self) -> list[str]:
        lines = []
        for name in sorted(self.checks):
            c = self.checks[name]
            lines.append(f"[{c.status.upper()}] {name}: measured={_plain(c.measured)} tolerance={_plain(c.tolerance)}")
        lines.append(f"{self.suite}: {self.status} ({len(self.checks)} checks)")
        return lines


def atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
