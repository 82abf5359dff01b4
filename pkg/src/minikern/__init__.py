"""Deterministic miniature-kernel sandbox.

Simulates a small OS kernel (pool memory, per-driver permission views, a
handle table and object directory, a single-volume filesystem with exclusive
opens) to reproduce a FILE_OBJECT hijacking attack against exclusively opened
files, and the defense that stops it: per-driver memory views plus runtime
FILE_OBJECT protection. Runs are fully deterministic; every kernel event
lands in a replayable trace.
"""

from .drivers import (
    ApiTable,
    AssertEq,
    Close,
    CopyFields,
    Create,
    DriverProgram,
    DriverRuntime,
    FindObject,
    ObRef,
    RawRead,
    RawWrite,
    Read,
    StepKind,
    StepResult,
    Write,
)
from .ept import KERNEL, EnclaveId, EptManager, Perm, RWX
from .fs import (
    Access,
    FILE_OBJECT_SIZE,
    FILE_OBJECT_TYPE,
    FO_FS_CONTEXT,
    FO_FS_CONTEXT2,
    FO_SECTION_OBJECT_POINTER,
    FO_VPB,
    Filesystem,
    ROUTING_FIELD_OFFSETS,
    Status,
    share_check,
)
from .objman import Handle, ObjectManager
from .ranger import PolicyDecision, ProtectedRegion, Ranger, RegionRegistry
from .report import Report, build_report, serialize_report
from .scenario import Scenario, builtin_scenario, parse_scenario, serialize_scenario
from .simmem import SimMemory
from .trace import TraceEvent, TraceLog

__version__ = "0.1.0"

__all__ = [
    "Access",
    "ApiTable",
    "AssertEq",
    "Close",
    "CopyFields",
    "Create",
    "DriverProgram",
    "DriverRuntime",
    "EnclaveId",
    "EptManager",
    "FILE_OBJECT_SIZE",
    "FILE_OBJECT_TYPE",
    "FO_FS_CONTEXT",
    "FO_FS_CONTEXT2",
    "FO_SECTION_OBJECT_POINTER",
    "FO_VPB",
    "Filesystem",
    "FindObject",
    "Handle",
    "KERNEL",
    "ObRef",
    "ObjectManager",
    "Perm",
    "PolicyDecision",
    "ProtectedRegion",
    "RWX",
    "Ranger",
    "RawRead",
    "RawWrite",
    "Read",
    "RegionRegistry",
    "Report",
    "ROUTING_FIELD_OFFSETS",
    "Scenario",
    "SimMemory",
    "Status",
    "StepKind",
    "StepResult",
    "TraceEvent",
    "TraceLog",
    "Write",
    "build_report",
    "builtin_scenario",
    "parse_scenario",
    "serialize_report",
    "serialize_scenario",
    "share_check",
]
