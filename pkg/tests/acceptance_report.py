"""Collects one pass/fail line per acceptance criterion and prints it."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

LINES: list[str] = []


@dataclass
class Criterion:
    number: int
    title: str
    checks: list[tuple[str, bool, str]] = field(default_factory=list)
    error: str = ""
    elapsed: float = 0.0

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    @property
    def ok(self) -> bool:
        return not self.error and bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        failed = [f"{n} ({d})" if d else n for n, ok, d in self.checks if not ok]
        tail = f" -- failed: {'; '.join(failed)}" if failed else ""
        if self.error:
            tail += f" -- error: {self.error}"
        return f"criterion {self.number:2d} {status}  {self.title} [{self.elapsed:.1f} s]{tail}"

    def details(self) -> str:
        return "\n".join(f"    {'ok ' if ok else 'BAD'} {n}: {d}" for n, ok, d in self.checks)


@contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    c = Criterion(number, title)
    t0 = time.perf_counter()
    try:
        yield c
    except Exception as e:
        c.error = f"{type(e).__name__}: {e}"
        raise
    finally:
        c.elapsed = time.perf_counter() - t0
        if budget_s is not None:
            c.check(f"runtime < {budget_s:g} s", c.elapsed < budget_s, f"{c.elapsed:.1f} s")
        LINES.append(c.line())
        print(c.line())
        print(c.details())
    assert c.ok, c.line() + "\n" + c.details()
