"""Scenario files: a tiny line-oriented language for scripting driver runs.

Top-level statements, one per line, ``#`` starts a comment:

    memory pages=<n> page_size=<n>
    protect on|off
    schedule sequential|roundrobin
    driver <name>

A ``driver`` line opens a block; every indented line after it is one action
of that driver:

    create <file> access=<r|w|rw> share=<none|r|w|rw> as <hvar>
    write <hvar> "<bytes>"            (or: write <hvar> <bufvar>)
    read <hvar> <len> as <bvar>
    close <hvar>
    obref <hvar> as <avar>
    findobj <file> as <avar>
    rawread <avar>+0x<off> <len> as <bvar>
    rawwrite <avar>+0x<off> <bvar>    (or: rawwrite <avar>+0x<off> "<bytes>")
    copyfields <src-avar> -> <dst-avar>
    assert <bvar> == "<bytes>"

Byte-string literals are double quoted with \\xNN escapes (plus \\\\ and \\").
Defaults: 256 pages of 4096 bytes, protection on, sequential scheduling.
``serialize`` renders the canonical form; parse(serialize(parse(t))) is
parse(t) for any valid input.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .drivers import (
    Action,
    AssertEq,
    Close,
    CopyFields,
    Create,
    DriverProgram,
    FindObject,
    ObRef,
    RawRead,
    RawWrite,
    Read,
    Write,
)
from .errors import ParseError, UnknownScenario
from .fs import Access
from .trace import quote_bytes, unquote_bytes

DEFAULT_PAGES = 256
DEFAULT_PAGE_SIZE = 4096


@dataclass
class Scenario:
    pages: int = DEFAULT_PAGES
    page_size: int = DEFAULT_PAGE_SIZE
    protect: bool = True
    schedule: str = "sequential"
    drivers: list[DriverProgram] = field(default_factory=list)


_ACCESS = {"none": Access.NONE, "r": Access.R, "w": Access.W, "rw": Access.RW}
_ACCESS_TEXT = {v: k for k, v in _ACCESS.items()}

_NAME = r"[^\s\"]+"
_VAR = r"[A-Za-z_][A-Za-z0-9_]*"
_STR = r'"(?:[^"\\]|\\.)*"'

_ACTION_RES = {
    "create": re.compile(
        rf"create ({_NAME}) access=(r|w|rw) share=(none|r|w|rw) as ({_VAR})$"
    ),
    "write_lit": re.compile(rf"write ({_VAR}) ({_STR})$"),
    "write_var": re.compile(rf"write ({_VAR}) ({_VAR})$"),
    "read": re.compile(rf"read ({_VAR}) (\d+) as ({_VAR})$"),
    "close": re.compile(rf"close ({_VAR})$"),
    "obref": re.compile(rf"obref ({_VAR}) as ({_VAR})$"),
    "findobj": re.compile(rf"findobj ({_NAME}) as ({_VAR})$"),
    "rawread": re.compile(rf"rawread ({_VAR})\+0x([0-9a-fA-F]+) (\d+) as ({_VAR})$"),
    "rawwrite_lit": re.compile(rf"rawwrite ({_VAR})\+0x([0-9a-fA-F]+) ({_STR})$"),
    "rawwrite_var": re.compile(rf"rawwrite ({_VAR})\+0x([0-9a-fA-F]+) ({_VAR})$"),
    "copyfields": re.compile(rf"copyfields ({_VAR}) -> ({_VAR})$"),
    "assert": re.compile(rf"assert ({_VAR}) == ({_STR})$"),
}

_MEMORY_RE = re.compile(r"memory pages=(\d+) page_size=(\d+)$")


def _literal(token: str, lineno: int) -> bytes:
    try:
        return unquote_bytes(token[1:-1])
    except ValueError as exc:
        raise ParseError(lineno, f"bad byte literal: {exc}") from None


def _parse_action(text: str, lineno: int) -> Action:
    word = text.split(" ", 1)[0]
    if word == "create":
        m = _ACTION_RES["create"].match(text)
        if m:
            return Create(m.group(1), _ACCESS[m.group(2)], _ACCESS[m.group(3)], m.group(4))
    elif word == "write":
        m = _ACTION_RES["write_lit"].match(text)
        if m:
            return Write(m.group(1), data=_literal(m.group(2), lineno))
        m = _ACTION_RES["write_var"].match(text)
        if m:
            return Write(m.group(1), buf_var=m.group(2))
    elif word == "read":
        m = _ACTION_RES["read"].match(text)
        if m:
            return Read(m.group(1), int(m.group(2)), m.group(3))
    elif word == "close":
        m = _ACTION_RES["close"].match(text)
        if m:
            return Close(m.group(1))
    elif word == "obref":
        m = _ACTION_RES["obref"].match(text)
        if m:
            return ObRef(m.group(1), m.group(2))
    elif word == "findobj":
        m = _ACTION_RES["findobj"].match(text)
        if m:
            return FindObject(m.group(1), m.group(2))
    elif word == "rawread":
        m = _ACTION_RES["rawread"].match(text)
        if m:
            return RawRead(m.group(1), int(m.group(2), 16), int(m.group(3)), m.group(4))
    elif word == "rawwrite":
        m = _ACTION_RES["rawwrite_lit"].match(text)
        if m:
            return RawWrite(m.group(1), int(m.group(2), 16), data=_literal(m.group(3), lineno))
        m = _ACTION_RES["rawwrite_var"].match(text)
        if m:
            return RawWrite(m.group(1), int(m.group(2), 16), buf_var=m.group(3))
    elif word == "copyfields":
        m = _ACTION_RES["copyfields"].match(text)
        if m:
            return CopyFields(m.group(1), m.group(2))
    elif word == "assert":
        m = _ACTION_RES["assert"].match(text)
        if m:
            return AssertEq(m.group(1), _literal(m.group(2), lineno))
    else:
        raise ParseError(lineno, f"unknown action {word!r}")
    raise ParseError(lineno, f"malformed {word} action: {text!r}")


def _strip_comment(line: str) -> str:
    # A # outside quotes starts a comment; escapes inside strings are honored.
    out = []
    in_str = False
    escaped = False
    for ch in line:
        if in_str:
            out.append(ch)
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_str = False
            continue
        if ch == "#":
            break
        out.append(ch)
        if ch == '"':
            in_str = True
    return "".join(out)


def parse_scenario(text: str) -> Scenario:
    scenario = Scenario()
    current_name: str | None = None
    current_actions: list[Action] = []
    seen_drivers: set[str] = set()

    def flush(lineno: int) -> None:
        nonlocal current_name, current_actions
        if current_name is None:
            return
        if not current_actions:
            raise ParseError(lineno, f"driver {current_name!r} has no actions")
        scenario.drivers.append(DriverProgram(current_name, tuple(current_actions)))
        current_name = None
        current_actions = []

    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        stripped = _strip_comment(raw)
        if not stripped.strip():
            continue
        indented = stripped[0] in " \t"
        body = stripped.strip()
        if indented:
            if current_name is None:
                raise ParseError(lineno, "action outside a driver block")
            current_actions.append(_parse_action(body, lineno))
            continue
        word = body.split(" ", 1)[0]
        if word == "memory":
            m = _MEMORY_RE.match(body)
            if not m:
                raise ParseError(lineno, f"malformed memory line: {body!r}")
            flush(lineno)
            scenario.pages = int(m.group(1))
            scenario.page_size = int(m.group(2))
        elif word == "protect":
            parts = body.split()
            if len(parts) != 2 or parts[1] not in ("on", "off"):
                raise ParseError(lineno, "expected: protect on|off")
            flush(lineno)
            scenario.protect = parts[1] == "on"
        elif word == "schedule":
            parts = body.split()
            if len(parts) != 2 or parts[1] not in ("sequential", "roundrobin"):
                raise ParseError(lineno, "expected: schedule sequential|roundrobin")
            flush(lineno)
            scenario.schedule = parts[1]
        elif word == "driver":
            parts = body.split()
            if len(parts) != 2:
                raise ParseError(lineno, "expected: driver <name>")
            flush(lineno)
            if parts[1] in seen_drivers:
                raise ParseError(lineno, f"duplicate driver {parts[1]!r}")
            seen_drivers.add(parts[1])
            current_name = parts[1]
        else:
            raise ParseError(lineno, f"unknown statement {word!r}")
    flush(len(lines) + 1)
    if not scenario.drivers:
        raise ParseError(len(lines) + 1, "scenario defines no drivers")
    return scenario


# -- serialization ------------------------------------------------------------


def _action_text(action: Action) -> str:
    if isinstance(action, Create):
        return (
            f"create {action.name} access={_ACCESS_TEXT[action.desired]}"
            f" share={_ACCESS_TEXT[action.share]} as {action.bind}"
        )
    if isinstance(action, Write):
        payload = quote_bytes(action.data) if action.data is not None else action.buf_var
        return f"write {action.handle_var} {payload}"
    if isinstance(action, Read):
        return f"read {action.handle_var} {action.length} as {action.bind}"
    if isinstance(action, Close):
        return f"close {action.handle_var}"
    if isinstance(action, ObRef):
        return f"obref {action.handle_var} as {action.bind}"
    if isinstance(action, FindObject):
        return f"findobj {action.name} as {action.bind}"
    if isinstance(action, RawRead):
        return f"rawread {action.addr_var}+0x{action.offset:x} {action.length} as {action.bind}"
    if isinstance(action, RawWrite):
        payload = quote_bytes(action.data) if action.data is not None else action.buf_var
        return f"rawwrite {action.addr_var}+0x{action.offset:x} {payload}"
    if isinstance(action, CopyFields):
        return f"copyfields {action.src_var} -> {action.dst_var}"
    if isinstance(action, AssertEq):
        return f"assert {action.buf_var} == {quote_bytes(action.expected)}"
    raise TypeError(f"unknown action {action!r}")


def serialize_scenario(scenario: Scenario) -> str:
    lines = [
        f"memory pages={scenario.pages} page_size={scenario.page_size}",
        f"protect {'on' if scenario.protect else 'off'}",
    ]
    if scenario.schedule != "sequential":
        lines.append(f"schedule {scenario.schedule}")
    for program in scenario.drivers:
        lines.append(f"driver {program.name}")
        for action in program.actions:
            lines.append(f"  {_action_text(action)}")
    return "\n".join(lines) + "\n"


# -- built-in scenarios -----------------------------------------------------------

SECRET = b"TOP-SECRET-0042"

_FOBJ_HIJACK = f"""\
# Exclusive-file hijack: DriverA holds target.txt open exclusively, then
# Mallory steals the stream by grafting the target's FILE_OBJECT routing
# fields onto a file it legitimately owns.
memory pages={DEFAULT_PAGES} page_size={DEFAULT_PAGE_SIZE}
protect on
driver DriverA
  create target.txt access=rw share=none as h_t
  write h_t {quote_bytes(SECRET)}
driver Mallory
  # the honest route is refused while DriverA holds the file
  create target.txt access=r share=rw as h_legal
  create hijacker.txt access=rw share=rw as h_hj
  obref h_hj as fo_hj
  findobj target.txt as fo_t
  copyfields fo_t -> fo_hj
  read h_hj {len(SECRET)} as stolen
  assert stolen == {quote_bytes(SECRET)}
"""

_BUILTINS = {"fobj-hijack": _FOBJ_HIJACK}


def builtin_scenario(name: str) -> Scenario:
    try:
        text = _BUILTINS[name]
    except KeyError:
        raise UnknownScenario(
            f"{name!r}; available: {', '.join(sorted(_BUILTINS))}"
        ) from None
    return parse_scenario(text)


def builtin_text(name: str) -> str:
    try:
        return _BUILTINS[name]
    except KeyError:
        raise UnknownScenario(
            f"{name!r}; available: {', '.join(sorted(_BUILTINS))}"
        ) from None
