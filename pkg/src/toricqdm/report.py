"""Check reports shared by all modules."""

from __future__ import annotations

import time
from dataclasses import dataclass, field


@dataclass
class Report:
    name: str
    status: bool
    residual: list = field(default_factory=list)  # (key description, value string)
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return self.status

    def line(self) -> str:
        tag = "PASS" if self.status else "FAIL"
        extra = f" first residual at {self.residual[0][0]}" if self.residual else ""
        return f"[{tag}] {self.name}{extra} ({self.seconds:.2f}s)"

    def to_json(self):
        return {"name": self.name, "status": "pass" if self.status else "fail",
                "residual": [[str(k), str(v)] for k, v in self.residual[:20]],
                "details": {k: str(v) for k, v in self.details.items()}}


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def report_from_keys(name, keys, describe=str, details=None, seconds=0.0) -> Report:
    return Report(name, not keys, [(describe(k), "nonzero") for k in keys], details or {}, seconds)
