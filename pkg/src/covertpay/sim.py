"""Single-threaded discrete-event loop on an integer nanosecond clock."""
import heapq
import itertools

NS_PER_S = 1_000_000_000


def seconds_to_ns(seconds):
    return int(round(seconds * NS_PER_S))


class EventLoop:
    def __init__(self):
        self.now_ns = 0
        self._queue = []
        self._seq = itertools.count()

    def schedule_at(self, time_ns, callback, *args):
        if time_ns < self.now_ns:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._queue, (time_ns, next(self._seq), callback, args))

    def schedule_in(self, delay_ns, callback, *args):
        self.schedule_at(self.now_ns + delay_ns, callback, *args)

    @property
    def pending(self):
        return len(self._queue)

    def step(self):
        time_ns, _, callback, args = heapq.heappop(self._queue)
        self.now_ns = time_ns
        callback(*args)

    def run(self, until_ns=None):
        """Drain events in (time, insertion) order, optionally stopping at ``until_ns``."""
        while self._queue:
            if until_ns is not None and self._queue[0][0] > until_ns:
                self.now_ns = until_ns
                return
            self.step()
        if until_ns is not None and until_ns > self.now_ns:
            self.now_ns = until_ns

    def run_until(self, done):
        """Step until ``done()`` is true or nothing is left to do."""
        while self._queue and not done():
            self.step()
