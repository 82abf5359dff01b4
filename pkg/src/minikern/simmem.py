"""Simulated physical memory with a bump pool allocator.

Memory is a flat byte array split into fixed pages. Page 0 is reserved and
never allocated, so address 0 always means "no object" when it turns up in a
pointer slot. The pool allocator only moves forward: freed ranges are zeroed
and never handed out again, which keeps every address unambiguous for the
lifetime of a run.

``mem_read``/``mem_write`` are the policy-checked paths used for everything a
driver can steer. When a policy is attached, each access is reviewed and the
denied pages are neutralized instead of faulting: reads return zero bytes for
those pages, writes skip them. ``peek``/``poke`` bypass the policy and the
trace; they model the machine itself (object initialization, free-time
scrubbing, test inspection), not driver-reachable behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import trace as tr
from .ept import KERNEL, EnclaveId, Perm
from .errors import BadFree, OutOfBounds, OutOfPool

DEFAULT_PAGE_SIZE = 4096
DEFAULT_PAGE_COUNT = 256


@dataclass(frozen=True)
class Allocation:
    size: int
    tag: str
    owner: EnclaveId


def _check_tag(tag: str) -> str:
    if len(tag) != 4 or not tag.isascii():
        raise ValueError(f"pool tag must be 4 ASCII chars, got {tag!r}")
    return tag


class SimMemory:
    def __init__(
        self,
        page_count: int = DEFAULT_PAGE_COUNT,
        page_size: int = DEFAULT_PAGE_SIZE,
        trace: tr.TraceLog | None = None,
    ):
        if page_count < 2:
            raise ValueError("need at least two pages (page 0 is reserved)")
        self.page_size = page_size
        self.page_count = page_count
        self.size = page_count * page_size
        self._bytes = bytearray(self.size)
        self.pool_base = page_size  # page 0 reserved
        self.pool_cursor = self.pool_base
        self.allocations: dict[int, Allocation] = {}
        self._freed: set[int] = set()
        self.alloc_hooks: list = []  # callables(base, size, tag, owner)
        self.policy = None  # object with review(actor, addr, length, kind) -> denied page set
        self.trace = trace

    # -- pool ---------------------------------------------------------------

    def alloc_pool(self, size: int, tag: str, caller: EnclaveId) -> int:
        """Bump-allocate ``size`` bytes; base addresses are not page aligned."""
        if size <= 0:
            raise ValueError("allocation size must be positive")
        _check_tag(tag)
        if self.pool_cursor + size > self.size:
            raise OutOfPool(f"pool exhausted: need {size} at 0x{self.pool_cursor:x}")
        base = self.pool_cursor
        self.pool_cursor += size
        self.allocations[base] = Allocation(size, tag, caller)
        for hook in self.alloc_hooks:
            hook(base, size, tag, caller)
        return base

    def free_pool(self, base: int, caller: EnclaveId) -> None:
        """Drop an allocation and scrub its bytes. The address is never reused."""
        alloc = self.allocations.pop(base, None)
        if alloc is None:
            raise BadFree(f"0x{base:x} is not a live allocation")
        self._freed.add(base)
        self._bytes[base : base + alloc.size] = bytes(alloc.size)

    # -- policy-checked access ------------------------------------------------

    def _check_bounds(self, addr: int, length: int) -> None:
        if addr < 0 or length < 0 or addr + length > self.size:
            raise OutOfBounds(f"range 0x{addr:x}+{length} outside memory")

    def _page_slices(self, addr: int, length: int):
        """Yield (page, start, stop) covering [addr, addr+length) page by page."""
        pos = addr
        end = addr + length
        while pos < end:
            page = pos // self.page_size
            stop = min(end, (page + 1) * self.page_size)
            yield page, pos, stop
            pos = stop

    def mem_read(self, addr: int, length: int, actor: EnclaveId) -> bytes:
        self._check_bounds(addr, length)
        if self.trace is not None:
            self.trace.emit(
                tr.MEM_READ, actor=actor, addr=tr.format_addr(addr), len=length
            )
        denied = self.policy.review(actor, addr, length, Perm.R) if self.policy else ()
        if not denied:
            return bytes(self._bytes[addr : addr + length])
        out = bytearray()
        for page, start, stop in self._page_slices(addr, length):
            if page in denied:
                out += bytes(stop - start)
            else:
                out += self._bytes[start:stop]
        return bytes(out)

    def mem_write(self, addr: int, data: bytes, actor: EnclaveId) -> None:
        self._check_bounds(addr, len(data))
        if self.trace is not None:
            self.trace.emit(
                tr.MEM_WRITE, actor=actor, addr=tr.format_addr(addr), len=len(data)
            )
        denied = self.policy.review(actor, addr, len(data), Perm.W) if self.policy else ()
        for page, start, stop in self._page_slices(addr, len(data)):
            if page in denied:
                continue
            self._bytes[start:stop] = data[start - addr : stop - addr]

    # -- trusted raw access (no policy, no trace) -----------------------------

    def peek(self, addr: int, length: int) -> bytes:
        self._check_bounds(addr, length)
        return bytes(self._bytes[addr : addr + length])

    def poke(self, addr: int, data: bytes) -> None:
        self._check_bounds(addr, len(data))
        self._bytes[addr : addr + len(data)] = data
