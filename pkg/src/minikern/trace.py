"""Event log shared by every component of the simulator.

Each event becomes one line of ``key=value`` pairs. Field order is fixed:
``seq``, ``view``, ``kind``, ``step``, then kind-specific payload fields in
the order they were supplied. ``seq`` starts at 1 and increases by one per
event; ``view`` is the permission view that was active when the event was
recorded; ``step`` identifies the driver action being interpreted (or ``-``
outside any action). Byte-string payloads are quoted and escaped so a trace
is always one printable line per event.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Event kinds, spelled exactly as they appear in trace lines.
DRIVER_LOAD = "DriverLoad"
API_CALL = "ApiCall"
MEM_READ = "MemRead"
MEM_WRITE = "MemWrite"
PROTECT = "Protect"
UNPROTECT = "Unprotect"
POLICY_DECISION = "PolicyDecision"
SKIPPED = "Skipped"
ASSERT = "Assert"

_PRINTABLE = set(range(0x20, 0x7F)) - {0x22, 0x5C}  # printable ASCII minus " and \


def quote_bytes(data: bytes) -> str:
    """Render bytes as a double-quoted literal with \\xNN escapes."""
    out = []
    for b in data:
        if b in _PRINTABLE:
            out.append(chr(b))
        elif b == 0x22:
            out.append('\\"')
        elif b == 0x5C:
            out.append("\\\\")
        else:
            out.append(f"\\x{b:02x}")
    return '"' + "".join(out) + '"'


def unquote_bytes(text: str) -> bytes:
    """Inverse of quote_bytes; expects the surrounding quotes to be stripped."""
    out = bytearray()
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != "\\":
            out.append(ord(ch))
            i += 1
            continue
        if i + 1 >= len(text):
            raise ValueError("dangling escape")
        nxt = text[i + 1]
        if nxt == "\\":
            out.append(0x5C)
            i += 2
        elif nxt == '"':
            out.append(0x22)
            i += 2
        elif nxt == "x":
            if i + 4 > len(text):
                raise ValueError("truncated \\xNN escape")
            out.append(int(text[i + 2 : i + 4], 16))
            i += 4
        else:
            raise ValueError(f"unknown escape \\{nxt}")
    return bytes(out)


@dataclass
class TraceEvent:
    seq: int
    view: int
    kind: str
    step: str  # "driver:index" or "-"
    fields: tuple[tuple[str, str], ...]

    def line(self) -> str:
        head = f"seq={self.seq} view={self.view} kind={self.kind} step={self.step}"
        tail = " ".join(f"{k}={v}" for k, v in self.fields)
        return head + (" " + tail if tail else "")

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.fields:
            if k == key:
                return v
        return default


class TraceLog:
    """Append-only event log with automatic seq and view stamping."""

    def __init__(self):
        self.events: list[TraceEvent] = []
        self.current_step: str | None = None
        # The runtime points this at the live view context once it exists.
        self.view_provider = lambda: 0

    def emit(self, kind: str, **fields) -> TraceEvent:
        rendered = tuple((k, _render(v)) for k, v in fields.items() if v is not None)
        ev = TraceEvent(
            seq=len(self.events) + 1,
            view=self.view_provider(),
            kind=kind,
            step=self.current_step or "-",
            fields=rendered,
        )
        self.events.append(ev)
        return ev

    def lines(self) -> list[str]:
        return [ev.line() for ev in self.events]

    def deny_count(self) -> int:
        return sum(
            1
            for ev in self.events
            if ev.kind == POLICY_DECISION and ev.get("verdict") == "deny"
        )


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, bytes):
        return quote_bytes(value)
    if isinstance(value, int):
        return str(value)
    return str(value)


def format_addr(addr: int) -> str:
    return f"0x{addr:x}"
