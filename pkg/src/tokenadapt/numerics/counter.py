"""Multiply-add instrumentation.

Kernels report the logical multiply-adds of the products they compute under
a category name. Counting is off unless a ``count_macs`` block is active, and
the active counter is scoped per thread/task through a context variable.
"""

from collections import Counter
from contextlib import contextmanager
from contextvars import ContextVar

_active: ContextVar = ContextVar("tokenadapt_mac_counter", default=None)
_label: ContextVar = ContextVar("tokenadapt_mac_label", default="matmul")


class MacCounter(Counter):
    def total(self):
        return sum(self.values())


def record(category, macs):
    counter = _active.get()
    if counter is not None:
        counter[category] += int(macs)


@contextmanager
def count_macs():
    """Collect multiply-adds by category for everything run inside the block."""
    counter = MacCounter()
    token = _active.set(counter)
    try:
        yield counter
    finally:
        _active.reset(token)


@contextmanager
def category(name):
    """Relabel ``matmul`` records made inside the block (e.g. ``"ffn"``)."""
    token = _label.set(name)
    try:
        yield
    finally:
        _label.reset(token)


def current_label():
    return _label.get()
