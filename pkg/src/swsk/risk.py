"""EN 13849-style risk graph: (S, F, P) parameters to performance level a..e."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Severity(enum.Enum):
    S1 = "S1"  # slight injury
    S2 = "S2"  # serious injury


class Frequency(enum.Enum):
    F1 = "F1"  # seldom exposure
    F2 = "F2"  # frequent exposure


class Avoidance(enum.Enum):
    P1 = "P1"  # avoidance possible
    P2 = "P2"  # scarcely possible


@enum.unique
class RiskClass(enum.IntEnum):
    """Required performance level; e is the highest risk."""

    a = 0
    b = 1
    c = 2
    d = 3
    e = 4

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True, slots=True)
class RiskParams:
    severity: Severity
    frequency: Frequency
    avoidance: Avoidance

    @classmethod
    def parse(cls, s: str, f: str, p: str) -> "RiskParams":
        return cls(Severity(s.strip().upper()), Frequency(f.strip().upper()),
                   Avoidance(p.strip().upper()))


_RISK_TABLE: dict[tuple[Severity, Frequency, Avoidance], RiskClass] = {
    (Severity.S1, Frequency.F1, Avoidance.P1): RiskClass.a,
    (Severity.S1, Frequency.F1, Avoidance.P2): RiskClass.b,
    (Severity.S1, Frequency.F2, Avoidance.P1): RiskClass.b,
    (Severity.S1, Frequency.F2, Avoidance.P2): RiskClass.c,
    (Severity.S2, Frequency.F1, Avoidance.P1): RiskClass.c,
    (Severity.S2, Frequency.F1, Avoidance.P2): RiskClass.d,
    (Severity.S2, Frequency.F2, Avoidance.P1): RiskClass.d,
    (Severity.S2, Frequency.F2, Avoidance.P2): RiskClass.e,
}


def classify_risk(params: RiskParams) -> RiskClass:
    """Look up the required performance level in the 8-row risk graph."""
    return _RISK_TABLE[(params.severity, params.frequency, params.avoidance)]
