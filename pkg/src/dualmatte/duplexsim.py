"""Time-duplex studio schedule simulator (exact rational arithmetic).

Models an LED-wall studio that alternates keying backdrops and VFX content
within each camera frame: the camera's short global exposure sees only the
keying phase while the much longer blanking interval shows VFX to people on
set. Panel rows are scan-multiplexed, so row illumination inside an exposure
must come out exactly equal for every row. All times are millisecond
Fractions; no floats enter the bookkeeping.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import ConfigError, InputOutputError

PHASE_GREEN = "keying-green"
PHASE_BLUE = "keying-blue"
PHASE_VFX = "vfx"
KEYING_PHASES = frozenset({PHASE_GREEN, PHASE_BLUE})
ALL_PHASES = frozenset({PHASE_GREEN, PHASE_BLUE, PHASE_VFX})

Rational = Union[int, str, Fraction]


def _frac(value: Rational, what: str) -> Fraction:
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError, TypeError) as exc:
        raise ConfigError(f"{what}: not a rational number: {value!r}") from exc


@dataclass(frozen=True)
class DuplexSchedule:
    """Studio timing plan. Defaults: 100 fps, 1 ms exposure, 9 ms blanking,
    32 panel rows at 1:8 scan, content cycle green/vfx/blue/vfx."""

    fps: Fraction = Fraction(100)
    exposure_ms: Fraction = Fraction(1)
    blanking_ms: Fraction = Fraction(9)
    panel_rows: int = 32
    scan_ratio: int = 8
    sequence: tuple[str, ...] = (PHASE_GREEN, PHASE_VFX, PHASE_BLUE, PHASE_VFX)
    phase_shift_ms: Fraction = Fraction(0)
    row_time_step_ms: Optional[Fraction] = None

    def __post_init__(self):
        for name in ("fps", "exposure_ms", "blanking_ms", "phase_shift_ms"):
            object.__setattr__(self, name, _frac(getattr(self, name), name))
        if self.row_time_step_ms is not None:
            object.__setattr__(
                self,
                "row_time_step_ms",
                _frac(self.row_time_step_ms, "row_time_step_ms"),
            )
        object.__setattr__(self, "sequence", tuple(self.sequence))
        if self.fps <= 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.exposure_ms <= 0 or self.blanking_ms < 0:
            raise ConfigError("exposure must be positive and blanking non-negative")
        if self.exposure_ms + self.blanking_ms != self.frame_period_ms:
            raise ConfigError(
                f"exposure + blanking must equal the frame period "
                f"{self.frame_period_ms} ms at {self.fps} fps, got "
                f"{self.exposure_ms + self.blanking_ms} ms"
            )
        if self.panel_rows <= 0 or self.scan_ratio <= 0:
            raise ConfigError("panel_rows and scan_ratio must be positive")
        if self.panel_rows % self.scan_ratio != 0:
            raise ConfigError(
                f"panel_rows {self.panel_rows} must be a multiple of the "
                f"scan_ratio {self.scan_ratio}"
            )
        if not self.sequence:
            raise ConfigError("sequence must not be empty")
        bad = [p for p in self.sequence if p not in ALL_PHASES]
        if bad:
            raise ConfigError(f"unknown phases in sequence: {bad}")
        if not 0 <= self.phase_shift_ms < self.frame_period_ms:
            raise ConfigError(
                f"phase_shift_ms must be in [0, {self.frame_period_ms}), got "
                f"{self.phase_shift_ms}"
            )
        step = self.row_step_ms
        if step <= 0:
            raise ConfigError(f"row time step must be positive, got {step}")
        # Exposure must hold a whole number of full scan cycles, and frame
        # starts must land on the slot grid, or rows cannot be lit equally.
        if (self.exposure_ms / (step * self.scan_ratio)).denominator != 1:
            raise ConfigError(
                f"exposure {self.exposure_ms} ms must be an integer multiple "
                f"of scan_ratio * row step = {step * self.scan_ratio} ms"
            )
        if (self.frame_period_ms / step).denominator != 1:
            raise ConfigError(
                f"frame period {self.frame_period_ms} ms must be an integer "
                f"multiple of the row step {step} ms"
            )

    @property
    def frame_period_ms(self) -> Fraction:
        return Fraction(1000) / self.fps

    @property
    def row_step_ms(self) -> Fraction:
        if self.row_time_step_ms is not None:
            return self.row_time_step_ms
        return self.exposure_ms / self.scan_ratio

    def rows_in_group(self, group: int) -> tuple[int, ...]:
        return tuple(
            r for r in range(self.panel_rows) if r % self.scan_ratio == group
        )


@dataclass(frozen=True)
class TimelineEvent:
    start_ms: Fraction
    end_ms: Fraction
    frame: int
    kind: str  # "exposure" | "blanking" | "content" | "rows"
    label: str
    rows: tuple[int, ...] = ()


@dataclass
class SimulationResult:
    schedule: DuplexSchedule
    frame_count: int
    events: list[TimelineEvent]
    exposure_content: list[dict[str, Fraction]]  # per frame: phase -> ms seen
    row_on_times: list[dict[int, Fraction]]  # per frame: row -> ms lit in exposure
    phase_fractions: dict[str, Fraction]  # wall-clock share per phase class
    checks: dict[str, tuple[bool, str]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def verdict_lines(self) -> list[str]:
        lines = []
        for name, (ok, detail) in self.checks.items():
            lines.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return lines

    def to_csv(self, path: Union[str, Path]) -> None:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        try:
            with open(p, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(
                    ["start_ms", "end_ms", "frame", "kind", "label", "rows"]
                )
                for e in self.events:
                    writer.writerow(
                        [
                            str(e.start_ms),
                            str(e.end_ms),
                            e.frame,
                            e.kind,
                            e.label,
                            "|".join(str(r) for r in e.rows),
                        ]
                    )
        except OSError as exc:
            raise InputOutputError(f"{p}: cannot write timeline CSV: {exc}") from exc


def _content_segments(
    s: DuplexSchedule, frame_count: int
) -> list[tuple[Fraction, Fraction, str]]:
    """Content timeline clipped to [0, frame_count * T), honoring the shift."""
    t_frame = s.frame_period_ms
    span_end = frame_count * t_frame
    n_seq = len(s.sequence)
    segs: list[tuple[Fraction, Fraction, str]] = []
    for k in range(-1, frame_count + 1):
        base = k * t_frame + s.phase_shift_ms
        pieces = (
            (base, base + s.exposure_ms, s.sequence[(2 * k) % n_seq]),
            (base + s.exposure_ms, base + t_frame, s.sequence[(2 * k + 1) % n_seq]),
        )
        for a, b, phase in pieces:
            a2, b2 = max(a, Fraction(0)), min(b, span_end)
            if a2 < b2:
                segs.append((a2, b2, phase))
    segs.sort(key=lambda x: (x[0], x[1]))
    return segs


def simulate(schedule: DuplexSchedule, frame_count: int = 8) -> SimulationResult:
    """Run the schedule for frame_count frames and verify its invariants.

    Checks: (1) every panel row is lit for exactly exposure/scan_ratio ms in
    every exposure; (2) exposures never see VFX content; (3) wall-clock

    phase shares equal blanking/period for VFX and exposure/period for
    keying. All three are exact Fraction comparisons.
    """
    if frame_count < 1:
        raise ConfigError(f"frame_count must be >= 1, got {frame_count}")
    s = schedule
    t_frame = s.frame_period_ms
    step = s.row_step_ms
    segments = _content_segments(s, frame_count)
    events: list[TimelineEvent] = []
    exposure_content: list[dict[str, Fraction]] = []
    row_on_times: list[dict[int, Fraction]] = []

    for f in range(frame_count):
        exp_a = f * t_frame
        exp_b = exp_a + s.exposure_ms
        frame_b = (f + 1) * t_frame
        events.append(TimelineEvent(exp_a, exp_b, f, "exposure", ""))
        events.append(TimelineEvent(exp_b, frame_b, f, "blanking", ""))

        seen: dict[str, Fraction] = {}
        for a, b, phase in segments:
            lo, hi = max(a, exp_a), min(b, exp_b)
            if lo < hi:
                seen[phase] = seen.get(phase, Fraction(0)) + (hi - lo)
                events.append(TimelineEvent(lo, hi, f, "content", phase))
            lo, hi = max(a, exp_b), min(b, frame_b)
            if lo < hi:
                events.append(TimelineEvent(lo, hi, f, "content", phase))
        exposure_content.append(seen)

        # Row multiplexing, emitted only where the camera integrates.
        on: dict[int, Fraction] = {r: Fraction(0) for r in range(s.panel_rows)}
        slot = exp_a
        while slot < exp_b:
            group = int(slot / step) % s.scan_ratio
            rows = s.rows_in_group(group)
            events.append(
                TimelineEvent(slot, slot + step, f, "rows", f"group{group}", rows)
            )
            for r in rows:
                on[r] += step
            slot += step
        row_on_times.append(on)

    by_class: dict[str, Fraction] = {"keying": Fraction(0), "vfx": Fraction(0)}
    for a, b, phase in segments:
        key = "keying" if phase in KEYING_PHASES else "vfx"
        by_class[key] += b - a
    span = frame_count * t_frame
    fractions = {k: v / span for k, v in by_class.items()}

    expected_row = s.exposure_ms / s.scan_ratio
    row_ok = all(
        all(v == expected_row for v in per_frame.values())
        for per_frame in row_on_times
    )
    vfx_in_exposure = sum(
        (per.get(PHASE_VFX, Fraction(0)) for per in exposure_content), Fraction(0)
    )
    expected_vfx = s.blanking_ms / t_frame
    expected_key = s.exposure_ms / t_frame
    fractions_ok = (
        fractions["vfx"] == expected_vfx and fractions["keying"] == expected_key
    )

    result = SimulationResult(
        schedule=s,
        frame_count=frame_count,
        events=events,
        exposure_content=exposure_content,
        row_on_times=row_on_times,
        phase_fractions=fractions,
    )
    result.checks["uniform_row_illumination"] = (
        row_ok,
        f"every row lit {expected_row} ms per exposure"
        if row_ok
        else f"rows deviate from {expected_row} ms per exposure",
    )
    result.checks["no_vfx_in_exposure"] = (
        vfx_in_exposure == 0,
        f"vfx seen by camera: {vfx_in_exposure} ms total",
    )
    result.checks["phase_wall_clock_split"] = (
        fractions_ok,
        f"vfx {fractions['vfx']}, keying {fractions['keying']} "
        f"(expected {expected_vfx} / {expected_key})",
    )
    return result
