"""Validator reports."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class Check:
    axiom: str
    passed: bool
    cell: int | None = None
    witness: dict | None = None
    detail: str = ""

    def to_dict(self):
        return {"axiom": self.axiom, "pass": self.passed, "cell": self.cell,
                "witness": self.witness, "detail": self.detail}


@dataclass(frozen=True)
class Report:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failed_axioms(self):
        out = []
        for c in self.checks:
            if not c.passed and c.axiom not in out:
                out.append(c.axiom)
        return out

    def failures(self, axiom=None):
        return [c for c in self.checks if not c.passed and (axiom is None or c.axiom == axiom)]

    def to_dict(self):
        return {"pass": self.passed, "checks": [c.to_dict() for c in self.checks]}


@dataclass(frozen=True)
class DynReport(Report):
    r: float = 0.0
    k: float = 0.0

    def to_dict(self):
        d = super().to_dict()
        d.update(r=self.r, k=self.k)
        return d
