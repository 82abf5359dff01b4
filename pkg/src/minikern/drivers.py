"""Scripted drivers and the runtime that interprets them.

A driver is a name plus a straight-line list of actions. Actions that enter
the kernel go through a hookable API table (create, read, write, close, pool
allocation, handle and directory queries); raw memory actions go straight to
the policy-checked memory paths, which is what makes the hijack expressible:

    Create      open or create a file, bind the handle to a variable
    Write       write literal bytes or a bound buffer through a handle
    Read        read through a handle, bind the bytes to a variable
    Close       close a handle
    ObRef       resolve an owned handle to its FILE_OBJECT address
    FindObject  look a name up in the object directory, bind the address
    RawRead     read simulated memory at address-variable plus offset
    RawWrite    write simulated memory at address-variable plus offset
    CopyFields  copy the four routing slots between two FILE_OBJECTs
    Assert      record whether a bound buffer equals a literal

Each driver gets an enclave id at load time. While a driver's action runs,
the active permission view is that driver's own view when protection is on,
and the shared default view otherwise. One call to ``run_step`` interprets
exactly one action; the runtime schedules steps sequentially by default or
round-robin when asked.

Denied memory access is not an error: the action completes with zeros read
or writes dropped, and the run continues. Faults (a foreign handle passed to
ObRef, an address outside memory, an unbound variable) stop the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from . import trace as tr
from .ept import KERNEL, EnclaveId, EptManager
from .errors import (
    BadHandle,
    DuplicateDriver,
    LateEnable,
    OutOfBounds,
    ProgramError,
    UnknownApi,
)
from .fs import FILE_OBJECT_SIZE, ROUTING_FIELD_OFFSETS, Access, Filesystem, Status
from .objman import ObjectManager
from .ranger import Ranger
from .simmem import SimMemory


# -- actions -------------------------------------------------------------------


@dataclass(frozen=True)
class Create:
    name: str
    desired: Access
    share: Access
    bind: str


@dataclass(frozen=True)
class Write:
    handle_var: str
    data: bytes | None = None
    buf_var: str | None = None


@dataclass(frozen=True)
class Read:
    handle_var: str
    length: int
    bind: str


@dataclass(frozen=True)
class Close:
    handle_var: str


@dataclass(frozen=True)
class ObRef:
    handle_var: str
    bind: str


@dataclass(frozen=True)
class FindObject:
    name: str
    bind: str


@dataclass(frozen=True)
class RawRead:
    addr_var: str
    offset: int
    length: int
    bind: str


@dataclass(frozen=True)
class RawWrite:
    addr_var: str
    offset: int
    data: bytes | None = None
    buf_var: str | None = None


@dataclass(frozen=True)
class CopyFields:
    src_var: str
    dst_var: str


@dataclass(frozen=True)
class AssertEq:
    buf_var: str
    expected: bytes


Action = (
    Create | Write | Read | Close | ObRef | FindObject
    | RawRead | RawWrite | CopyFields | AssertEq
)


@dataclass(frozen=True)
class DriverProgram:
    name: str
    actions: tuple[Action, ...]

    def __post_init__(self):
        if not self.name:
            raise ProgramError("driver name must be nonempty")
        if not self.actions:
            raise ProgramError(f"driver {self.name}: empty action list")
        _check_bindings(self)


def _check_bindings(program: DriverProgram) -> None:
    # Optimistic definedness: every referenced variable must have some earlier
    # binder. A binder can still fail at runtime (a denied create binds
    # nothing), which the interpreter reports as a fault at the use site.
    bound: set[str] = set()
    for idx, action in enumerate(program.actions):
        used: list[str] = []
        if isinstance(action, (Write, Read, Close, ObRef)):
            used.append(action.handle_var)
        if isinstance(action, (Write, RawWrite)) and action.buf_var is not None:
            used.append(action.buf_var)
        if isinstance(action, (RawRead, RawWrite)):
            used.append(action.addr_var)
        if isinstance(action, CopyFields):
            used += [action.src_var, action.dst_var]
        if isinstance(action, AssertEq):
            used.append(action.buf_var)
        for var in used:
            if var not in bound:
                raise ProgramError(
                    f"driver {program.name}: action {idx} uses unbound variable {var!r}"
                )
        if isinstance(action, (Create, Read, ObRef, FindObject, RawRead)):
            bound.add(action.bind)


# -- API table --------------------------------------------------------------------


@dataclass
class ApiEntry:
    impl: object
    pre_hooks: list = field(default_factory=list)
    post_hooks: list = field(default_factory=list)


class ApiTable:
    """Name -> implementation plus pre/post hooks, run in registration order."""

    def __init__(self):
        self._entries: dict[str, ApiEntry] = {}

    def register(self, name: str, impl) -> None:
        self._entries[name] = ApiEntry(impl)

    def add_pre_hook(self, name: str, hook) -> None:
        self._entry(name).pre_hooks.append(hook)

    def add_post_hook(self, name: str, hook) -> None:
        self._entry(name).post_hooks.append(hook)

    def _entry(self, name: str) -> ApiEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise UnknownApi(name) from None

    def dispatch(self, name: str, args: dict, caller: EnclaveId):
        entry = self._entry(name)
        for hook in entry.pre_hooks:
            hook(args, caller)
        result = entry.impl(args, caller)
        for hook in entry.post_hooks:
            hook(args, caller, result)
        return result


# -- step results --------------------------------------------------------------------


class StepKind(Enum):
    CONTINUE = "continue"
    DONE = "done"
    FAULTED = "faulted"


@dataclass(frozen=True)
class StepResult:
    kind: StepKind
    fault_reason: str | None = None


class _Fault(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class _LoadedDriver:
    program: DriverProgram
    enclave: EnclaveId
    pc: int = 0
    env: dict[str, object] = field(default_factory=dict)


# -- runtime ---------------------------------------------------------------------------


class DriverRuntime:
    """Owns the machine: memory, views, objects, filesystem, APIs, trace."""

    def __init__(
        self,
        page_count: int = 256,
        page_size: int = 4096,
        protect: bool = False,
        fobj_protect_size: int | None = None,
    ):
        self.trace = tr.TraceLog()
        self.memory = SimMemory(page_count, page_size, trace=self.trace)
        self.ept = EptManager(page_count, page_size)
        self.trace.view_provider = lambda: self.ept.active.current
        self.objects = ObjectManager(self.memory)
        self.fs = Filesystem(self.memory, self.objects, self.trace)
        self.apis = ApiTable()
        self._register_apis()
        self.drivers: dict[str, _LoadedDriver] = {}
        self.load_order: list[str] = []
        self._next_enclave: EnclaveId = 1
        self.ranger: Ranger | None = None
        if protect:
            self.enable_protection(fobj_protect_size)

    # -- protection toggles ------------------------------------------------------

    def enable_protection(self, fobj_protect_size: int | None = None) -> None:
        if self.drivers:
            raise LateEnable("protection must be enabled before drivers load")
        if self.ranger is not None:
            return
        ranger = Ranger(
            self.ept,
            self.objects,
            self.trace,
            fobj_protect_size or FILE_OBJECT_SIZE,
        )
        self._create_hook = lambda args, caller, result: ranger.on_create_file_post(
            result[0], result[1], args["name"], args["share"], caller
        )
        self._close_hook = lambda args, caller: ranger.on_close_pre(
            args["handle"], caller
        )
        self.memory.policy = ranger
        self.memory.alloc_hooks.append(ranger.on_alloc)
        self.apis.add_post_hook("ZwCreateFile", self._create_hook)
        self.apis.add_pre_hook("ZwClose", self._close_hook)
        self.ranger = ranger

    def disable_protection(self) -> None:
        if self.drivers:
            raise LateEnable("protection must be disabled before drivers load")
        if self.ranger is None:
            return
        self.memory.policy = None
        self.memory.alloc_hooks.remove(self.ranger.on_alloc)
        self.apis._entry("ZwCreateFile").post_hooks.remove(self._create_hook)
        self.apis._entry("ZwClose").pre_hooks.remove(self._close_hook)
        self.ranger = None

    @property
    def protected(self) -> bool:
        return self.ranger is not None

    # -- API implementations ----------------------------------------------------------

    def _register_apis(self) -> None:
        self.apis.register("ZwCreateFile", self._api_create)
        self.apis.register("ZwReadFile", self._api_read)
        self.apis.register("ZwWriteFile", self._api_write)
        self.apis.register("ZwClose", self._api_close)
        self.apis.register("ExAllocatePoolWithTag", self._api_alloc)
        self.apis.register("ObReferenceObjectByHandle", self._api_obref)
        self.apis.register("NtQueryDirectoryObject", self._api_dirquery)

    def _api_create(self, args: dict, caller: EnclaveId):
        return self.fs.create_file(args["name"], args["desired"], args["share"], caller)

    def _api_read(self, args: dict, caller: EnclaveId):
        return self.fs.read_file(args["handle"], args["length"], caller)

    def _api_write(self, args: dict, caller: EnclaveId):
        return self.fs.write_file(args["handle"], args["data"], caller)

    def _api_close(self, args: dict, caller: EnclaveId):
        return self.fs.close_file(args["handle"], caller)

    def _api_alloc(self, args: dict, caller: EnclaveId):
        return self.memory.alloc_pool(args["size"], args["tag"], caller)

    def _api_obref(self, args: dict, caller: EnclaveId):
        return self.objects.reference_by_handle(args["handle"], caller)

    def _api_dirquery(self, args: dict, caller: EnclaveId):
        return self.objects.directory_list(caller)

    def dispatch(self, name: str, args: dict, caller: EnclaveId):
        return self.apis.dispatch(name, args, caller)

    # -- driver lifecycle ------------------------------------------------------------

    def load_driver(self, program: DriverProgram) -> EnclaveId:
        if program.name in self.drivers:
            raise DuplicateDriver(program.name)
        enclave = self._next_enclave
        self._next_enclave += 1
        self.drivers[program.name] = _LoadedDriver(program, enclave)
        self.load_order.append(program.name)
        self.trace.emit(tr.DRIVER_LOAD, driver=program.name, enclave=enclave)
        if self.ranger is not None:
            self.ranger.on_driver_load(enclave)
        return enclave

    def enclave_of(self, name: str) -> EnclaveId:
        return self.drivers[name].enclave

    # -- interpretation ----------------------------------------------------------------

    def run_step(self, name: str) -> StepResult:
        drv = self.drivers[name]
        if drv.pc >= len(drv.program.actions):
            return StepResult(StepKind.DONE)
        self.ept.set_active_view(drv.enclave if self.protected else KERNEL)
        action = drv.program.actions[drv.pc]
        self.trace.current_step = f"{name}:{drv.pc}"
        try:
            self._interpret(drv, action)
        except _Fault as fault:
            return StepResult(StepKind.FAULTED, fault.reason)
        finally:
            self.trace.current_step = None
            drv.pc += 1
        if drv.pc >= len(drv.program.actions):
            return StepResult(StepKind.DONE)
        return StepResult(StepKind.CONTINUE)

    def run(self, schedule: str = "sequential") -> StepResult | None:
        """Run every loaded driver to completion; first fault stops the run."""
        if schedule == "sequential":
            for name in self.load_order:
                while True:
                    result = self.run_step(name)
                    if result.kind is StepKind.FAULTED:
                        return result
                    if result.kind is StepKind.DONE:
                        break
        elif schedule == "roundrobin":
            pending = list(self.load_order)
            while pending:
                for name in list(pending):
                    result = self.run_step(name)
                    if result.kind is StepKind.FAULTED:
                        return result
                    if result.kind is StepKind.DONE:
                        pending.remove(name)
        else:
            raise ValueError(f"unknown schedule {schedule!r}")
        return None

    def _env_get(self, drv: _LoadedDriver, var: str):
        try:
            return drv.env[var]
        except KeyError:
            raise _Fault(f"undefined-variable:{var}") from None

    def _interpret(self, drv: _LoadedDriver, action: Action) -> None:
        caller = drv.enclave
        if isinstance(action, Create):
            status, handle = self.dispatch(
                "ZwCreateFile",
                {"name": action.name, "desired": action.desired, "share": action.share},
                caller,
            )
            self.trace.emit(
                tr.API_CALL,
                api="ZwCreateFile",
                caller=caller,
                file=action.name,
                desired=_access_text(action.desired),
                share=_access_text(action.share),
                status=status.value,
                handle=handle,
            )
            if handle is not None:
                drv.env[action.bind] = handle

        elif isinstance(action, Write):
            data = action.data
            if data is None:
                data = self._env_get(drv, action.buf_var)
            handle = self._env_get(drv, action.handle_var)
            status = self.dispatch(
                "ZwWriteFile", {"handle": handle, "data": bytes(data)}, caller
            )
            self.trace.emit(
                tr.API_CALL,
                api="ZwWriteFile",
                caller=caller,
                handle=handle,
                len=len(data),
                status=status.value,
            )

        elif isinstance(action, Read):
            handle = self._env_get(drv, action.handle_var)
            status, data = self.dispatch(
                "ZwReadFile", {"handle": handle, "length": action.length}, caller
            )
            self.trace.emit(
                tr.API_CALL,
                api="ZwReadFile",
                caller=caller,
                handle=handle,
                len=action.length,
                returned=len(data),
                status=status.value,
            )
            drv.env[action.bind] = data

        elif isinstance(action, Close):
            handle = self._env_get(drv, action.handle_var)
            status = self.dispatch("ZwClose", {"handle": handle}, caller)
            self.trace.emit(
                tr.API_CALL,
                api="ZwClose",
                caller=caller,
                handle=handle,
                status=status.value,
            )

        elif isinstance(action, ObRef):
            handle = self._env_get(drv, action.handle_var)
            try:
                addr = self.dispatch(
                    "ObReferenceObjectByHandle", {"handle": handle}, caller
                )
            except BadHandle:
                self.trace.emit(
                    tr.API_CALL,
                    api="ObReferenceObjectByHandle",
                    caller=caller,
                    handle=handle,
                    status=Status.BAD_HANDLE.value,
                )
                raise _Fault("bad-handle") from None
            self.trace.emit(
                tr.API_CALL,
                api="ObReferenceObjectByHandle",
                caller=caller,
                handle=handle,
                addr=tr.format_addr(addr),
                status=Status.SUCCESS.value,
            )
            drv.env[action.bind] = addr

        elif isinstance(action, FindObject):
            entries = self.dispatch("NtQueryDirectoryObject", {}, caller)
            addr = next((a for n, a in entries if n == action.name), None)
            self.trace.emit(
                tr.API_CALL,
                api="NtQueryDirectoryObject",
                caller=caller,
                name=action.name,
                addr=tr.format_addr(addr) if addr is not None else "-",
                status=Status.SUCCESS.value if addr is not None else "NOT_FOUND",
            )
            if addr is None:
                raise _Fault(f"object-not-found:{action.name}")
            drv.env[action.bind] = addr

        elif isinstance(action, RawRead):
            base = self._env_get(drv, action.addr_var)
            try:
                data = self.memory.mem_read(base + action.offset, action.length, caller)
            except OutOfBounds:
                raise _Fault("out-of-bounds") from None
            drv.env[action.bind] = data

        elif isinstance(action, RawWrite):
            data = action.data
            if data is None:
                data = self._env_get(drv, action.buf_var)
            base = self._env_get(drv, action.addr_var)
            try:
                self.memory.mem_write(base + action.offset, bytes(data), caller)
            except OutOfBounds:
                raise _Fault("out-of-bounds") from None

        elif isinstance(action, CopyFields):
            src = self._env_get(drv, action.src_var)
            dst = self._env_get(drv, action.dst_var)
            # Sugar for four slot-sized raw reads and writes; every access is
            # policy checked individually, exactly as the long form would be.
            for offset in ROUTING_FIELD_OFFSETS:
                try:
                    chunk = self.memory.mem_read(src + offset, 8, caller)
                    self.memory.mem_write(dst + offset, chunk, caller)
                except OutOfBounds:
                    raise _Fault("out-of-bounds") from None

        elif isinstance(action, AssertEq):
            actual = self._env_get(drv, action.buf_var)
            ok = bytes(actual) == action.expected
            self.trace.emit(
                tr.ASSERT,
                var=action.buf_var,
                ok=ok,
                expected=action.expected,
                actual=bytes(actual),
            )

        else:
            raise ProgramError(f"unknown action {action!r}")


def _access_text(value: Access) -> str:
    if value == Access.NONE:
        return "none"
    text = ""
    if value & Access.R:
        text += "r"
    if value & Access.W:
        text += "w"
    return text
