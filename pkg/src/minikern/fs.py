"""Single-volume filesystem with Windows-style exclusive opens.

Every successful open allocates a FILE_OBJECT record in simulated pool memory.
The record is the only control structure a driver can reach by address, and
the read/write paths route through it, which is exactly the surface the
hijack abuses. Layout (0x40 bytes):

    0x00  Type                  2 bytes, always 5
    0x08  DeviceObject          8-byte address of the volume's device anchor
    0x10  Vpb                   8-byte address of the volume parameter block
    0x18  FsContext             8-byte address of the stream's Fcb anchor
    0x20  FsContext2            8-byte address of this open's Ccb anchor
    0x28  SectionObjectPointer  8-byte address of this open's section anchor
    0x30  SharedRead            1 byte, advisory copy of the share-R flag
    0x31  SharedWrite           1 byte, advisory copy of the share-W flag
    0x38  FileNameRef           8-byte index into the name string table

SharedRead/SharedWrite are write-downs for display only. Share enforcement
reads the Fcb's open table, never those bytes, so flipping them changes no
verdict.

Sharing rule: a new open (desired, share) against existing opens O is allowed
iff for every o in O both ``desired <= o.share`` and ``o.desired <= share``
hold. The check runs only inside create. Reads and writes resolve the
FILE_OBJECT's FsContext slot (a policy-checked memory read) and go straight
to the stream; nothing re-validates sharing after the handle exists.

File content lives in Fcb metadata, not in simulated memory. The pool only
holds control structures, so corrupting content requires going through a
handle, while stealing a stream requires only FILE_OBJECT field surgery.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum, Flag

from . import trace as tr
from .ept import KERNEL, EnclaveId
from .errors import BadHandle
from .objman import Handle, ObjectManager
from .simmem import SimMemory

# FILE_OBJECT field offsets.
FO_TYPE = 0x00
FO_DEVICE_OBJECT = 0x08
FO_VPB = 0x10
FO_FS_CONTEXT = 0x18
FO_FS_CONTEXT2 = 0x20
FO_SECTION_OBJECT_POINTER = 0x28
FO_SHARED_READ = 0x30
FO_SHARED_WRITE = 0x31
FO_FILE_NAME_REF = 0x38

FILE_OBJECT_SIZE = 0x40
FILE_OBJECT_TYPE = 5

# The four slots the hijack copies from victim to attacker FILE_OBJECT.
ROUTING_FIELD_OFFSETS = (FO_VPB, FO_FS_CONTEXT, FO_FS_CONTEXT2, FO_SECTION_OBJECT_POINTER)


class Access(Flag):
    NONE = 0
    R = 1
    W = 2
    RW = 3


class Status(Enum):
    SUCCESS = "SUCCESS"
    STATUS_SHARING_VIOLATION = "STATUS_SHARING_VIOLATION"
    BAD_HANDLE = "BAD_HANDLE"
    OUT_OF_BOUNDS = "OUT_OF_BOUNDS"


def share_check(existing_opens, desired: Access, share: Access) -> bool:
    """The create-time sharing rule; a pure function of the live open set."""
    for o in existing_opens:
        if (desired & o.share) != desired or (o.desired & share) != o.desired:
            return False
    return True


@dataclass
class OpenEntry:
    desired: Access
    share: Access
    handle: Handle


@dataclass
class Fcb:
    """Per-stream state. One per file name, persists across close/reopen."""

    stream_id: int
    anchor: int  # pool address FsContext points at
    content: bytearray = field(default_factory=bytearray)
    opens: list[OpenEntry] = field(default_factory=list)


@dataclass
class Ccb:
    """Per-open state: the file position this handle reads and writes at."""

    position: int = 0


@dataclass
class OpenRecord:
    fcb: Fcb
    ccb: Ccb
    ccb_anchor: int
    section_anchor: int


class Filesystem:
    """One mounted volume plus the create/read/write/close entry points."""

    def __init__(self, memory: SimMemory, objects: ObjectManager, trace: tr.TraceLog):
        self._memory = memory
        self._objects = objects
        self._trace = trace
        self.device_anchor = memory.alloc_pool(0x40, "Dev ", KERNEL)
        self.vpb_anchor = memory.alloc_pool(0x20, "Vpb ", KERNEL)
        self.names: list[str] = []  # FileNameRef is an index into this table
        self.volume: dict[str, Fcb] = {}
        self.fcb_by_addr: dict[int, Fcb] = {}
        self._opens: dict[Handle, OpenRecord] = {}
        self._next_stream = 1
        # Audit log of which entry point consulted the sharing rule. Reads and
        # writes must never appear here.
        self.share_check_callers: list[str] = []

    # -- create ---------------------------------------------------------------

    def create_file(
        self, name: str, desired: Access, share: Access, caller: EnclaveId
    ) -> tuple[Status, Handle | None]:
        if not name:
            raise ValueError("file name must be nonempty")
        fcb = self.volume.get(name)
        self.share_check_callers.append("ZwCreateFile")
        if fcb is not None and not share_check(fcb.opens, desired, share):
            return Status.STATUS_SHARING_VIOLATION, None
        if fcb is None:
            anchor = self._memory.alloc_pool(0x40, "Fcb ", KERNEL)
            fcb = Fcb(stream_id=self._next_stream, anchor=anchor)
            self._next_stream += 1
            self.volume[name] = fcb
            self.fcb_by_addr[anchor] = fcb

        ccb = Ccb()
        ccb_anchor = self._memory.alloc_pool(0x10, "Ccb ", KERNEL)
        section_anchor = self._memory.alloc_pool(0x10, "SecP", KERNEL)
        fobj = self._memory.alloc_pool(FILE_OBJECT_SIZE, "File", KERNEL)

        if name in self.names:
            name_ref = self.names.index(name)
        else:
            name_ref = len(self.names)
            self.names.append(name)
        self._init_file_object(fobj, fcb.anchor, ccb_anchor, section_anchor, share, name_ref)

        handle = self._objects.register_handle(fobj, caller)
        if not self._objects.directory_has(name):
            self._objects.insert(name, fobj)
        fcb.opens.append(OpenEntry(desired, share, handle))
        self._opens[handle] = OpenRecord(fcb, ccb, ccb_anchor, section_anchor)
        return Status.SUCCESS, handle

    def _init_file_object(
        self, base: int, fcb_anchor: int, ccb_anchor: int,
        section_anchor: int, share: Access, name_ref: int,
    ) -> None:
        # Trusted initialization by the I/O manager: raw pokes, not subject to
        # the access policy, so a freshly created record is always well formed.
        rec = bytearray(FILE_OBJECT_SIZE)
        struct.pack_into("<H", rec, FO_TYPE, FILE_OBJECT_TYPE)
        struct.pack_into("<Q", rec, FO_DEVICE_OBJECT, self.device_anchor)
        struct.pack_into("<Q", rec, FO_VPB, self.vpb_anchor)
        struct.pack_into("<Q", rec, FO_FS_CONTEXT, fcb_anchor)
        struct.pack_into("<Q", rec, FO_FS_CONTEXT2, ccb_anchor)
        struct.pack_into("<Q", rec, FO_SECTION_OBJECT_POINTER, section_anchor)
        rec[FO_SHARED_READ] = 1 if share & Access.R else 0
        rec[FO_SHARED_WRITE] = 1 if share & Access.W else 0
        struct.pack_into("<Q", rec, FO_FILE_NAME_REF, name_ref)
        self._memory.poke(base, bytes(rec))

    # -- read / write -----------------------------------------------------------

    def _resolve_stream(self, handle: Handle, caller: EnclaveId) -> tuple[Fcb, Ccb] | None:
        """Follow handle -> FILE_OBJECT -> FsContext -> Fcb.

        The FsContext load goes through the policy-checked read path, so on a
        protected record it comes back as zeros and resolution fails safely.
        """
        try:
            fobj = self._objects.reference_by_handle(handle, caller)
        except BadHandle:
            return None
        record = self._opens.get(handle)
        if record is None:
            return None
        raw = self._memory.mem_read(fobj + FO_FS_CONTEXT, 8, caller)
        fcb_addr = struct.unpack("<Q", raw)[0]
        fcb = self.fcb_by_addr.get(fcb_addr)
        if fcb is None:
            return None
        return fcb, record.ccb

    def read_file(self, handle: Handle, length: int, caller: EnclaveId) -> tuple[Status, bytes]:
        if length < 0:
            raise ValueError("read length must be nonnegative")
        resolved = self._resolve_stream(handle, caller)
        if resolved is None:
            return Status.BAD_HANDLE, b""
        fcb, ccb = resolved
        data = bytes(fcb.content[ccb.position : ccb.position + length])
        ccb.position += len(data)
        return Status.SUCCESS, data

    def write_file(self, handle: Handle, data: bytes, caller: EnclaveId) -> Status:
        resolved = self._resolve_stream(handle, caller)
        if resolved is None:
            return Status.BAD_HANDLE
        fcb, ccb = resolved
        end = ccb.position + len(data)
        if len(fcb.content) < end:
            fcb.content.extend(bytes(end - len(fcb.content)))
        fcb.content[ccb.position : end] = data
        ccb.position = end
        return Status.SUCCESS

    # -- close -------------------------------------------------------------------

    def close_file(self, handle: Handle, caller: EnclaveId) -> Status:
        try:
            self._objects.reference_by_handle(handle, caller)
        except BadHandle:
            return Status.BAD_HANDLE
        record = self._opens.pop(handle)
        record.fcb.opens = [o for o in record.fcb.opens if o.handle != handle]
        self._memory.free_pool(record.ccb_anchor, KERNEL)
        self._memory.free_pool(record.section_anchor, KERNEL)
        self._objects.close_handle(handle)
        return Status.SUCCESS

    # -- inspection helpers ---------------------------------------------------------

    def content_of(self, name: str) -> bytes:
        fcb = self.volume.get(name)
        return bytes(fcb.content) if fcb else b""

    def live_file_objects(self) -> list[int]:
        return sorted({e.addr for e in self._objects.handles.values()})
