"""Well operating schedules: ordered stages with controls.

The default cyclic protocol alternates six-month hydrogen injection and
six-month withdrawal stages (an optional cushion-fill stage may precede the
cycles). Injection stages are rate-controlled with a bottom-hole-pressure
cap; withdrawal stages run at fixed bottom-hole pressure.
"""
from __future__ import annotations

from dataclasses import dataclass

from .utils import MONTH, digest_of, require

INJECTION_KINDS = ("cushion_fill", "inject_h2")
STAGE_KINDS = INJECTION_KINDS + ("withdraw", "shut_in")


@dataclass(frozen=True)
class Stage:
    """One schedule stage.

    For injection kinds `mass_rate` (kg/s) is the requested total gas rate
    and `bhp` (bar) is the pressure cap; for `withdraw`, `bhp` is the fixed
    producing pressure; `shut_in` needs no control. `y_inj` is the H2 mass
    fraction of the injected gas.
    """

    kind: str
    duration: float          # s
    mass_rate: float = 0.0   # kg/s
    bhp: float = 0.0         # bar
    y_inj: float = 1.0

    def __post_init__(self):
        require(self.kind in STAGE_KINDS, f"unknown stage kind {self.kind!r}")
        require(self.duration > 0, "stage duration must be positive")
        require(0.0 <= self.y_inj <= 1.0, "y_inj must lie in [0, 1]")
        if self.kind in INJECTION_KINDS:
            require(self.mass_rate >= 0, "injection mass rate must be non-negative")
            require(self.bhp > 0, "injection BHP cap must be positive")
        elif self.kind == "withdraw":
            require(self.bhp > 0, "withdrawal BHP must be positive")

    @property
    def is_injection(self) -> bool:
        return self.kind in INJECTION_KINDS

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "Stage":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


@dataclass(frozen=True)
class Schedule:
    stages: tuple[Stage, ...]

    def __post_init__(self):
        require(len(self.stages) > 0, "schedule needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))

    @classmethod
    def cyclic(cls, n_cycles: int, inject_rate: float, inject_bhp_cap: float,
               withdraw_bhp: float, stage_duration: float = 6 * MONTH,
               cushion: Stage | None = None) -> "Schedule":
        """Default protocol: optional cushion fill, then n_cycles of
        (inject_h2, withdraw) stages of equal duration."""
        require(n_cycles >= 1, "need at least one cycle")
        stages: list[Stage] = [cushion] if cushion is not None else []
        for _ in range(n_cycles):
            stages.append(Stage("inject_h2", stage_duration, mass_rate=inject_rate,
                                bhp=inject_bhp_cap, y_inj=1.0))
            stages.append(Stage("withdraw", stage_duration, bhp=withdraw_bhp))
        return cls(stages=tuple(stages))

    @property
    def total_duration(self) -> float:
        return sum(s.duration for s in self.stages)

    @property
    def cycle_offset(self) -> float:
        """Start time of the cyclic portion (end of any leading cushion/shut-in)."""
        t = 0.0
        for s in self.stages:
            if s.kind in ("cushion_fill", "shut_in"):
                t += s.duration
            else:
                break
        return t

    def stage_at(self, t: float) -> tuple[int, Stage]:
        """Stage covering time t in [0, total_duration); the interval
        [t_start, t_end) belongs to the stage starting at t_start."""
        require(t >= 0, "time must be non-negative")
        acc = 0.0
        for i, s in enumerate(self.stages):
            acc += s.duration
            if t < acc:
                return i, s
        raise ValueError(f"time {t} beyond schedule horizon {acc}")

    def stage_for_step(self, step: int, output_interval: float) -> Stage:
        """Stage governing output step `step` (1-based snapshots).

        The step belongs to the stage simulated over ((step-1)*dt_out,
        step*dt_out]; beyond the horizon the cyclic portion of the schedule
        is extended periodically.
        """
        require(step >= 1, "step must be >= 1")
        t_mid = (step - 0.5) * output_interval
        total = self.total_duration
        if t_mid >= total:
            off = self.cycle_offset
            require(total > off, "schedule has no cyclic portion to extend")
            t_mid = off + (t_mid - off) % (total - off)
        return self.stage_at(t_mid)[1]

    def boundaries(self) -> list[float]:
        """Cumulative stage end times (seconds)."""
        out, acc = [], 0.0
        for s in self.stages:
            acc += s.duration
            out.append(acc)
        return out

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages]}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(stages=tuple(Stage.from_dict(s) for s in d["stages"]))

    def digest(self) -> str:
        return digest_of(self.to_dict())
