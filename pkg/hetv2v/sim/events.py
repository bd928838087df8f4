# module for code representing scheduled events
import heapq
import itertools
from enum import Enum
from functools import total_ordering
from typing import Any, List, Optional, Tuple

from hetv2v.errors import EventOutOfBounds


@total_ordering
class Event(Enum):
    """
    Event kinds.  Order matters: events at the same time are tie-broken on
    the kind, lower values first, then on insertion order.  Ending
    transmissions go first so a channel frees before anything at the same
    instant senses it.
    """
    TX_END = 1
    CBR_SAMPLE = 10
    METRICS_WINDOW = 20
    EVALUATE = 30
    CIS_TIMER = 40
    APP_PACKET = 50
    BACKOFF_DONE = 60

    def __lt__(self, other):
        if self.__class__ is other.__class__:
            return self.value < other.value
        return NotImplemented


class EventQueue:
    """
    heapq priority queue with a time window.  Adding an event before the
    current time raises; events past ``hi_time`` are silently ignored.
    """

    def __init__(self, lo_time: float = 0.0, hi_time: Optional[float] = None):
        self.events: List[Tuple[float, Event, int, Any]] = []
        self.lo_time = lo_time
        self.hi_time = hi_time
        self._seq = itertools.count()
        self.processed = 0

    def __len__(self):
        return len(self.events)

    def add_event(self, time: float, event: Event, subject: Any = None) -> bool:
        if self.lo_time is not None and time < self.lo_time:
            raise EventOutOfBounds(f"{event.name} at t={time} is before t={self.lo_time}")
        if self.hi_time is not None and time > self.hi_time:
            return False
        heapq.heappush(self.events, (time, event, next(self._seq), subject))
        return True

    def next_event(self) -> Optional[Tuple[float, Event, Any]]:
        if not self.events:
            return None
        time, event, _, subject = heapq.heappop(self.events)
        self.lo_time = time
        self.processed += 1
        return time, event, subject

    def peek_time(self) -> Optional[float]:
        return self.events[0][0] if self.events else None
