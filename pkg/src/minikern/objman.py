"""Handle table and named object directory.

Handles are small integers handed out once and never reused. Every handle
belongs to the enclave that opened it; resolving a handle you do not own is
refused. The directory maps names to live object addresses and lives entirely
in simulator metadata, so walking it never touches simulated memory and can
never trap. Objects are reference counted through the handle table: when the
last handle on an object goes away, its directory entry and its pool
allocation go with it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ept import KERNEL, EnclaveId
from .errors import BadHandle, DuplicateName
from .simmem import SimMemory

Handle = int


@dataclass(frozen=True)
class HandleEntry:
    addr: int
    owner: EnclaveId


class ObjectManager:
    def __init__(self, memory: SimMemory):
        self._memory = memory
        self._next_handle: Handle = 1
        self.handles: dict[Handle, HandleEntry] = {}
        self.directory: list[tuple[str, int]] = []

    # -- directory -----------------------------------------------------------

    def insert(self, name: str, addr: int) -> None:
        """Append a (name, addr) entry; names are unique among live entries."""
        if not name:
            raise ValueError("object name must be nonempty")
        if self.directory_has(name):
            raise DuplicateName(f"{name!r} already has a live directory entry")
        self.directory.append((name, addr))

    def directory_has(self, name: str) -> bool:
        return any(n == name for n, _ in self.directory)

    def directory_list(self, actor: EnclaveId) -> list[tuple[str, int]]:
        """Snapshot of all entries. Metadata only: no memory access, no traps."""
        return list(self.directory)

    # -- handles ------------------------------------------------------------

    def register_handle(self, addr: int, owner: EnclaveId) -> Handle:
        handle = self._next_handle
        self._next_handle += 1
        self.handles[handle] = HandleEntry(addr, owner)
        return handle

    def reference_by_handle(self, handle: Handle, actor: EnclaveId) -> int:
        """Return the object address behind a handle the actor owns."""
        entry = self.handles.get(handle)
        if entry is None or entry.owner != actor:
            raise BadHandle(f"handle {handle} unknown or foreign to enclave {actor}")
        return entry.addr

    def close_handle(self, handle: Handle) -> None:
        """Drop one handle; the last handle tears the object down."""
        entry = self.handles.pop(handle, None)
        if entry is None:
            raise BadHandle(f"handle {handle} is not open")
        if any(e.addr == entry.addr for e in self.handles.values()):
            return
        self.directory = [(n, a) for n, a in self.directory if a != entry.addr]
        self._memory.free_pool(entry.addr, KERNEL)
