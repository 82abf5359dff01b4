"""Memory isolation policy engine.

This is the defense half of the simulator. It keeps the authoritative
registry of protected regions, decides every reviewed memory access (the
Memory Access Policy), and reacts to three kernel events:

driver load
    Give the driver its own permission view, with every already-protected
    foreign region excluded from it.

pool allocation
    A buffer allocated by an isolated driver becomes that driver's private
    region. Kernel allocations (enclave 0) are never protected.

file create (post) and file close (pre)
    The create callback walks five checks and protects the new FILE_OBJECT
    only when all pass: (1) the call succeeded, (2) the open shares nothing,
    (3) the caller is an isolated driver, (4) the handle resolves to its
    FILE_OBJECT address, (5) the region registers cleanly. The first failing
    check is traced as a Skipped event with its number, and the record stays
    unprotected: an attack on a shared file needs no protection and a kernel
    caller predates isolation. The close callback is the mirror image, three
    steps: isolated caller, handle resolves, a matching region exists; then
    it unregisters the region and restores R/W everywhere it was stripped.

Denies are never fatal. A denied read yields zeros, a denied write changes
nothing, and the run carries on, leaving the decision trail in the trace.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import trace as tr
from .ept import KERNEL, EnclaveId, EptManager, Perm, RWX, access_name
from .errors import BadHandle, RegionConflict
from .fs import FILE_OBJECT_SIZE, Access, Status
from .objman import Handle, ObjectManager

FILE_OBJECT_REGION = "file_object"
POOL_REGION = "pool"


@dataclass(frozen=True)
class ProtectedRegion:
    base: int
    size: int
    owner: EnclaveId
    kind: str  # FILE_OBJECT_REGION or POOL_REGION
    label: str = ""  # file name for file_object regions, pool tag otherwise


@dataclass(frozen=True)
class PolicyDecision:
    verdict: str  # "allow" or "deny"
    actor: EnclaveId
    kind: Perm
    addr: int
    length: int
    region: ProtectedRegion | None = None  # present iff verdict == "deny"


class RegionRegistry:
    """Live protected regions plus the view edits they imply.

    The registry is the source of truth; permission views are caches kept in
    lockstep. Register strips R/W from every page of the region in every view
    except the owner's. Unregister recomputes each touched page from what
    remains, so overlapping same-owner regions survive a neighbor's removal.
    """

    def __init__(self, ept: EptManager):
        self._ept = ept
        self.regions: list[ProtectedRegion] = []

    def live(self) -> list[ProtectedRegion]:
        return list(self.regions)

    def pages_of(self, region: ProtectedRegion) -> range:
        return self._ept.pages_touched(region.base, region.size)

    def owner_of_page(self, page: int) -> EnclaveId | None:
        for region in self.regions:
            if page in self.pages_of(region):
                return region.owner
        return None

    def register(self, region: ProtectedRegion) -> None:
        for page in self.pages_of(region):
            holder = self.owner_of_page(page)
            if holder is not None and holder != region.owner:
                raise RegionConflict(
                    f"page {page} already protected for enclave {holder}"
                )
        self.regions.append(region)
        for view in self._ept.views.values():
            if view.enclave != region.owner:
                self._ept.set_region_perms(view.enclave, region.base, region.size, Perm.X)

    def unregister(self, region: ProtectedRegion) -> None:
        self.regions.remove(region)
        for page in self.pages_of(region):
            holder = self.owner_of_page(page)
            for view in self._ept.views.values():
                if holder is None or holder == view.enclave:
                    view.perms[page] = RWX
                else:
                    view.perms[page] = Perm.X

    def find_file_object(self, base: int) -> ProtectedRegion | None:
        for region in self.regions:
            if region.kind == FILE_OBJECT_REGION and region.base == base:
                return region
        return None


class Ranger:
    """Callbacks plus the decision point, wired in by the driver runtime."""

    def __init__(
        self,
        ept: EptManager,
        objects: ObjectManager,
        trace: tr.TraceLog,
        fobj_protect_size: int = FILE_OBJECT_SIZE,
    ):
        self._ept = ept
        self._objects = objects
        self._trace = trace
        self.fobj_protect_size = fobj_protect_size
        self.registry = RegionRegistry(ept)

    # -- kernel event callbacks ------------------------------------------------

    def on_driver_load(self, enclave: EnclaveId) -> None:
        self._ept.create_view(enclave, self.registry.live())

    def on_alloc(self, base: int, size: int, tag: str, owner: EnclaveId) -> None:
        """Protect an isolated driver's fresh buffer. Kernel buffers stay open."""
        if owner == KERNEL or owner not in self._ept.views:
            return
        region = ProtectedRegion(base, size, owner, POOL_REGION, tag)
        self.registry.register(region)
        self._trace.emit(
            tr.PROTECT,
            base=tr.format_addr(base),
            size=size,
            owner=owner,
            rkind=POOL_REGION,
        )

    def on_create_file_post(
        self, status: Status, handle: Handle | None, name: str, share: Access,
        caller: EnclaveId,
    ) -> None:
        """Five checks, then protect the new FILE_OBJECT for its creator."""

        def skipped(stage: int) -> None:
            self._trace.emit(
                tr.SKIPPED, api="ZwCreateFile", stage=stage, caller=caller, file=name
            )

        if status != Status.SUCCESS:
            skipped(1)
            return
        if share != Access.NONE:
            skipped(2)
            return
        if caller == KERNEL or caller not in self._ept.views:
            skipped(3)
            return
        try:
            base = self._objects.reference_by_handle(handle, caller)
        except BadHandle:
            skipped(4)
            return
        region = ProtectedRegion(
            base, self.fobj_protect_size, caller, FILE_OBJECT_REGION, name
        )
        try:
            self.registry.register(region)
        except RegionConflict:
            # Page-granular views cannot hold two owners on one page; the
            # later request loses and the record stays unprotected.
            skipped(5)
            return
        self._trace.emit(
            tr.PROTECT,
            base=tr.format_addr(base),
            size=region.size,
            owner=caller,
            rkind=FILE_OBJECT_REGION,
            file=name,
        )

    def on_close_pre(self, handle: Handle, caller: EnclaveId) -> None:
        """Three checks, then lift the FILE_OBJECT's protection."""
        if caller == KERNEL or caller not in self._ept.views:
            return
        try:
            base = self._objects.reference_by_handle(handle, caller)
        except BadHandle:
            return
        region = self.registry.find_file_object(base)
        if region is None:
            return
        self.registry.unregister(region)
        self._trace.emit(
            tr.UNPROTECT,
            base=tr.format_addr(region.base),
            size=region.size,
            owner=region.owner,
        )

    # -- decision point -----------------------------------------------------------

    def map_decide(self, actor: EnclaveId, addr: int, length: int, kind: Perm) -> PolicyDecision:
        """Decide one access from the registry alone and trace the verdict."""
        touched = self._ept.pages_touched(addr, length)
        hit = None
        for region in self.registry.regions:
            if region.owner != actor and any(
                p in touched for p in self.registry.pages_of(region)
            ):
                hit = region
                break
        decision = PolicyDecision(
            verdict="deny" if hit else "allow",
            actor=actor,
            kind=kind,
            addr=addr,
            length=length,
            region=hit,
        )
        fields: dict = {
            "verdict": decision.verdict,
            "actor": actor,
            "access": access_name(kind),
            "addr": tr.format_addr(addr),
            "len": length,
        }
        if hit is not None:
            fields["region"] = tr.format_addr(hit.base)
            fields["owner"] = hit.owner
            fields["rkind"] = hit.kind
        self._trace.emit(tr.POLICY_DECISION, **fields)
        return decision

    def review(self, actor: EnclaveId, addr: int, length: int, kind: Perm):
        """Access filter installed on simulated memory.

        The active view traps (or passes) the access page by page; the policy
        then rules on it from the registry. Both must agree, and tests hold
        them to that. Returns the set of pages to neutralize.
        """
        result = self._ept.check_access(actor, addr, length, kind)
        self.map_decide(actor, addr, length, kind)
        return set(result.blocked_pages)
