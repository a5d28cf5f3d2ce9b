"""Pointing, acquisition and tracking: the link state machine that gates QKD.

``step`` is a total function over (state, event) pairs. Pairs with no
meaning are kept as self-loops and logged. When the machine enters
CLOSED_LOOP_TRACKING it emits a ``qkd_go`` action; the driver feeds that
back as an internal event, which moves the link to QKD_ACTIVE.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, SequencingError
from .seeding import make_rng

log = logging.getLogger(__name__)

DEFAULT_REACQ_TIMEOUT_S = 30.0
TIMELINE_CSV_HEADER = ("t_s", "state")


class State(str, Enum):
    IDLE = "IDLE"
    PROGRAM_TRACK = "PROGRAM_TRACK"
    ACQUIRING = "ACQUIRING"
    CLOSED_LOOP_TRACKING = "CLOSED_LOOP_TRACKING"
    QKD_ACTIVE = "QKD_ACTIVE"
    REACQUIRING = "REACQUIRING"
    LOST = "LOST"
    PASS_COMPLETE = "PASS_COMPLETE"


class EventKind(str, Enum):
    PASS_START = "pass_start"
    UPLINK_BEACON_DETECTED = "uplink_beacon_detected"
    DOWNLINK_DETECTED = "downlink_detected"
    DOWNLINK_LOST = "downlink_lost"
    CLOUD_START = "cloud_start"
    CLOUD_END = "cloud_end"
    TIMEOUT = "timeout"
    PASS_END = "pass_end"
    QKD_GO = "qkd_go"  # internal, fed back from the action of the same name


EXTERNAL_EVENTS = tuple(k for k in EventKind if k is not EventKind.QKD_GO)


@dataclass(frozen=True)
class LinkState:
    state: State
    entered_at_s: float
    last_event_s: float | None = None

    @property
    def clock_s(self) -> float:
        return self.entered_at_s if self.last_event_s is None else self.last_event_s


@dataclass(frozen=True)
class LinkEvent:
    kind: EventKind
    t_s: float


S, E = State, EventKind
_LINK_UP = (S.ACQUIRING, S.CLOSED_LOOP_TRACKING, S.QKD_ACTIVE)

# Defined transitions other than pass_end (handled for every state) and the
# REACQUIRING timeout (time-dependent).
_TABLE = {
    (S.IDLE, E.PASS_START): S.PROGRAM_TRACK,
    (S.PASS_COMPLETE, E.PASS_START): S.PROGRAM_TRACK,
    (S.PROGRAM_TRACK, E.UPLINK_BEACON_DETECTED): S.ACQUIRING,
    (S.ACQUIRING, E.DOWNLINK_DETECTED): S.CLOSED_LOOP_TRACKING,
    (S.CLOSED_LOOP_TRACKING, E.QKD_GO): S.QKD_ACTIVE,
    (S.REACQUIRING, E.DOWNLINK_DETECTED): S.CLOSED_LOOP_TRACKING,
    (S.REACQUIRING, E.CLOUD_START): S.REACQUIRING,
    (S.REACQUIRING, E.CLOUD_END): S.REACQUIRING,
    (S.REACQUIRING, E.DOWNLINK_LOST): S.REACQUIRING,
}
for _s in _LINK_UP:
    _TABLE[(_s, E.CLOUD_START)] = S.REACQUIRING
    _TABLE[(_s, E.DOWNLINK_LOST)] = S.REACQUIRING


def step(state: LinkState, event: LinkEvent, reacq_timeout_s: float = DEFAULT_REACQ_TIMEOUT_S):
    """Apply one event; returns ``(new_state, actions)``."""
    if event.t_s < state.clock_s:
        raise SequencingError(f"event {event.kind.value} at {event.t_s} s precedes {state.clock_s} s")
    kind = EventKind(event.kind)
    if kind is E.PASS_END:
        nxt = S.PASS_COMPLETE
    elif state.state is S.REACQUIRING and kind is E.TIMEOUT:
        nxt = S.LOST if event.t_s - state.entered_at_s >= reacq_timeout_s else S.REACQUIRING
    else:
        nxt = _TABLE.get((state.state, kind))
        if nxt is None:
            log.warning("ignoring %s in %s", kind.value, state.state.value)
            nxt = state.state

    if nxt is state.state:
        return LinkState(nxt, state.entered_at_s, event.t_s), ()
    actions = []
    if state.state is S.QKD_ACTIVE:
        actions.append("stop_qkd")
    if nxt is S.CLOSED_LOOP_TRACKING:
        actions.append("qkd_go")
    if nxt is S.QKD_ACTIVE:
        actions.append("start_qkd")
    return LinkState(nxt, event.t_s, event.t_s), tuple(actions)


def feed(state: LinkState, events: Iterable[LinkEvent], reacq_timeout_s: float = DEFAULT_REACQ_TIMEOUT_S):
    """Drive the machine through ``events``, feeding back ``qkd_go`` actions.

    Returns the final state and the list of ``(t_s, State)`` transitions.
    """
    history = []
    for ev in events:
        queue = [ev]
        while queue:
            e = queue.pop(0)
            new, actions = step(state, e, reacq_timeout_s)
            if new.state is not state.state:
                history.append((e.t_s, new.state))
            state = new
            if "qkd_go" in actions:
                queue.append(LinkEvent(E.QKD_GO, e.t_s))
    return state, history


@dataclass(frozen=True)
class PatTiming:
    """Acquisition delays in seconds.

    ``lead_follow_extra_s`` is added to the beacon acquisition to model the
    fallback acquisition scheme; ``jitter_s`` adds a seeded uniform
    ``[0, jitter_s)`` to each detection delay.
    """

    beacon_acquisition_s: float = 2.0
    downlink_acquisition_s: float = 1.0
    reacquisition_s: float = 1.0
    reacq_timeout_s: float = DEFAULT_REACQ_TIMEOUT_S
    lead_follow_extra_s: float = 0.0
    jitter_s: float = 0.0

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigurationError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name in ("beacon_acquisition_s", "downlink_acquisition_s", "reacquisition_s",
                     "lead_follow_extra_s", "jitter_s"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                out.append(f"pat.{name} must be finite and >= 0")
        if not (math.isfinite(self.reacq_timeout_s) and self.reacq_timeout_s > 0):
            out.append("pat.reacq_timeout_s must be positive")
        return out


@dataclass(frozen=True)
class PassTimeline:
    transitions: tuple  # ((t_s, State), ...), first entry IDLE at pass start
    t_start_s: float
    t_end_s: float

    def intervals(self, which: State = S.QKD_ACTIVE):
        """``[(t0, t1), ...]`` spent in ``which`` within the pass window."""
        out = []
        marks = list(self.transitions) + [(self.t_end_s, None)]
        for (t0, s), (t1, _) in zip(marks, marks[1:]):
            if s is which and t1 > t0:
                out.append((t0, t1))
        return out

    @property
    def availability_fraction(self) -> float:
        span = Fraction(self.t_end_s) - Fraction(self.t_start_s)
        if span <= 0:
            return 0.0
        active = sum((Fraction(b) - Fraction(a) for a, b in self.intervals()), Fraction(0))
        return float(active / span)

    def state_at(self, t_s):
        """Vectorised state lookup; returns State names."""
        times = np.array([t for t, _ in self.transitions])
        names = np.array([s.value for _, s in self.transitions])
        idx = np.searchsorted(times, np.asarray(t_s), side="right") - 1
        return names[np.clip(idx, 0, len(names) - 1)]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMELINE_CSV_HEADER)
            for t, s in self.transitions:
                w.writerow((repr(float(t)), s.value))


def _check_blockages(blockages, t0: float, t1: float):
    spans = sorted((float(a), float(b)) for a, b in blockages)
    for a, b in spans:
        if not b > a:
            raise ConfigurationError(f"cloud blockage ({a}, {b}) has non-positive length")
        if a < t0 or b > t1:
            raise ConfigurationError(f"cloud blockage ({a}, {b}) outside the pass window [{t0}, {t1}]")
    for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
        if a1 < b0:
            raise ConfigurationError(f"cloud blockages ({a0}, {b0}) and ({a1}, {b1}) overlap")
    return spans


def _clear_after(spans, t: float, delay: float) -> float:
    """Earliest time x >= t + delay such that the sky is clear over [x - delay, x]."""
    cand = t
    for a, b in spans:
        if a <= cand + delay and b > cand:
            cand = b
    return cand + delay


_PRIORITY = {E.PASS_START: -1, E.CLOUD_END: 0, E.CLOUD_START: 1, E.UPLINK_BEACON_DETECTED: 2, E.DOWNLINK_DETECTED: 2,
             E.TIMEOUT: 3, E.PASS_END: 4}


def run_pass(
    samples: Sequence,
    cloud_blockages: Sequence[tuple[float, float]] = (),
    timing: PatTiming | None = None,
    seed: int = 0,
) -> tuple[PassTimeline, float]:
    """Simulate the link state over one pass.

    Returns the timeline and the fraction of the above-mask window spent in
    QKD_ACTIVE.
    """
    timing = timing or PatTiming()
    if len(samples) == 0:
        return PassTimeline(((0.0, S.IDLE),), 0.0, 0.0), 0.0
    t0, t1 = float(samples[0].t_s), float(samples[-1].t_s)
    spans = _check_blockages(cloud_blockages, t0, t1)
    rng = make_rng(seed, "pat_jitter")

    def jitter():
        return float(rng.uniform(0.0, timing.jitter_s)) if timing.jitter_s > 0 else 0.0

    heap = []
    seq = 0

    def push(t, kind, token=None):
        nonlocal seq
        if t <= t1 or kind is E.PASS_END:
            heapq.heappush(heap, (t, _PRIORITY[kind], seq, kind, token))
            seq += 1

    push(t0, E.PASS_START)
    for a, b in spans:
        push(a, E.CLOUD_START)
        push(b, E.CLOUD_END)
    push(t1, E.PASS_END)

    state = LinkState(S.IDLE, t0)
    transitions = [(t0, S.IDLE)]
    epoch = 0  # bumped on every state change; stale scheduled events are dropped
    while heap:
        t, _, _, kind, token = heapq.heappop(heap)
        if token is not None and token != epoch:
            continue
        if kind in (E.CLOUD_START, E.CLOUD_END) and state.state not in _LINK_UP + (S.REACQUIRING,):
            continue
        state, hist = feed(state, [LinkEvent(kind, t)], timing.reacq_timeout_s)
        if not hist:
            continue
        transitions.extend(hist)
        epoch += 1
        now = state.state
        if now is S.PROGRAM_TRACK:
            delay = timing.beacon_acquisition_s + timing.lead_follow_extra_s + jitter()
            push(_clear_after(spans, t, delay), E.UPLINK_BEACON_DETECTED, epoch)
        elif now is S.ACQUIRING:
            push(_clear_after(spans, t, timing.downlink_acquisition_s + jitter()), E.DOWNLINK_DETECTED, epoch)
        elif now is S.REACQUIRING:
            push(_clear_after(spans, t, timing.reacquisition_s + jitter()), E.DOWNLINK_DETECTED, epoch)
            push(t + timing.reacq_timeout_s, E.TIMEOUT, epoch)
        elif now is S.PASS_COMPLETE:
            break
    timeline = PassTimeline(tuple(transitions), t0, t1)
    return timeline, timeline.availability_fraction
