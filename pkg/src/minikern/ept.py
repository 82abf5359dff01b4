"""Per-driver memory permission views.

Each isolated driver gets its own view of simulated physical memory, modelled
after hardware nested page tables: a dense page -> permission map. View 0 is
the default view shared by the kernel and any code loaded before isolation
began. Protecting a region strips R and W (never X) from every page the
region touches in every view except the owner's; the owner keeps full access.

Views are caches. The authoritative state is the protected-region registry
kept by the policy engine, and ``rebuild_view`` recomputes what any view must
contain from that registry alone. Tests hold the two equal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Flag

from .errors import DuplicateEnclave, OutOfBounds, UnknownEnclave

# Enclave ids are small ints; 0 is the kernel plus pre-existing drivers.
EnclaveId = int
KERNEL: EnclaveId = 0


class Perm(Flag):
    R = 1
    W = 2
    X = 4


RWX = Perm.R | Perm.W | Perm.X

_ACCESS_NAMES = {Perm.R: "read", Perm.W: "write", Perm.X: "execute"}


def access_name(kind: Perm) -> str:
    return _ACCESS_NAMES[kind]


@dataclass
class EptView:
    enclave: EnclaveId
    perms: list[Perm]  # dense, one entry per page


@dataclass
class ActiveContext:
    current: EnclaveId = KERNEL
    switch_count: int = 0
    trap_count: int = 0


@dataclass(frozen=True)
class CheckResult:
    allowed: bool
    blocked_pages: tuple[int, ...] = ()


class EptManager:
    """Holds every permission view plus the active-view context."""

    def __init__(self, page_count: int, page_size: int):
        if page_count <= 0 or page_size <= 0:
            raise ValueError("page_count and page_size must be positive")
        self.page_count = page_count
        self.page_size = page_size
        self.active = ActiveContext()
        self.views: dict[EnclaveId, EptView] = {
            KERNEL: EptView(KERNEL, [RWX] * page_count)
        }

    # -- geometry helpers -------------------------------------------------

    def pages_touched(self, addr: int, length: int) -> range:
        """Page indices overlapped by [addr, addr+length); empty for length 0."""
        if addr < 0 or length < 0 or addr + length > self.page_count * self.page_size:
            raise OutOfBounds(f"range 0x{addr:x}+{length} outside memory")
        if length == 0:
            return range(0)
        return range(addr // self.page_size, (addr + length - 1) // self.page_size + 1)

    # -- view lifecycle ----------------------------------------------------

    def create_view(self, enclave: EnclaveId, regions=()) -> EptView:
        """Create a fresh all-RWX view, then exclude foreign protected regions.

        ``regions`` is any iterable of objects with base/size/owner; pages they
        cover lose R and W in the new view unless this enclave owns them.
        """
        if enclave in self.views:
            raise DuplicateEnclave(f"enclave {enclave} already has a view")
        view = EptView(enclave, [RWX] * self.page_count)
        self.views[enclave] = view
        for region in regions:
            if region.owner != enclave:
                for page in self.pages_touched(region.base, region.size):
                    view.perms[page] = Perm.X
        return view

    def _view(self, enclave: EnclaveId) -> EptView:
        try:
            return self.views[enclave]
        except KeyError:
            raise UnknownEnclave(f"no view for enclave {enclave}") from None

    # -- permission edits and queries ---------------------------------------

    def set_region_perms(self, enclave: EnclaveId, base: int, size: int, perms: Perm) -> None:
        """Set every page overlapping [base, base+size) to exactly ``perms``."""
        view = self._view(enclave)
        for page in self.pages_touched(base, size):
            view.perms[page] = perms

    def get_perms(self, enclave: EnclaveId, page: int) -> Perm:
        view = self._view(enclave)
        if not 0 <= page < self.page_count:
            raise OutOfBounds(f"page {page} out of range")
        return view.perms[page]

    def set_active_view(self, enclave: EnclaveId) -> None:
        self._view(enclave)
        if enclave != self.active.current:
            self.active.current = enclave
            self.active.switch_count += 1

    def check_access(self, enclave: EnclaveId, addr: int, length: int, kind: Perm) -> CheckResult:
        """Page-wise permission test against one view; traps count once per call."""
        view = self._view(enclave)
        blocked = tuple(
            page for page in self.pages_touched(addr, length)
            if not (view.perms[page] & kind)
        )
        if blocked:
            self.active.trap_count += 1
            return CheckResult(False, blocked)
        return CheckResult(True)

    # -- oracle ------------------------------------------------------------

    def rebuild_view(self, enclave: EnclaveId, regions) -> EptView:
        """Recompute from scratch what ``enclave``'s view must hold.

        Start from all-RWX and strip R/W for every page covered by a region
        with a different owner. Pure function of the registry; never installed.
        """
        perms = [RWX] * self.page_count
        for region in regions:
            if region.owner != enclave:
                for page in self.pages_touched(region.base, region.size):
                    perms[page] = Perm.X
        return EptView(enclave, perms)
