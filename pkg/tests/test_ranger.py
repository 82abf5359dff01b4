"""Policy engine: region registry, callbacks, and the decision point."""

from __future__ import annotations

import random

import pytest

from minikern import trace as tr
from minikern.ept import KERNEL, EptManager, Perm, RWX
from minikern.errors import RegionConflict
from minikern.fs import Access, FILE_OBJECT_SIZE, Status
from minikern.objman import ObjectManager
from minikern.ranger import (
    FILE_OBJECT_REGION,
    POOL_REGION,
    ProtectedRegion,
    Ranger,
    RegionRegistry,
)
from minikern.simmem import SimMemory
from minikern.trace import TraceLog

PAGE = 4096


def make_world(page_count=64, fobj_protect_size=FILE_OBJECT_SIZE):
    trace = TraceLog()
    mem = SimMemory(page_count=page_count, trace=trace)
    objects = ObjectManager(mem)
    ept = EptManager(page_count, PAGE)
    ranger = Ranger(ept, objects, trace, fobj_protect_size)
    return mem, objects, ept, ranger, trace


def events_of(trace: TraceLog, kind: str):
    return [e for e in trace.events if e.kind == kind]


def perms_snapshot(ept: EptManager):
    return {enclave: list(view.perms) for enclave, view in ept.views.items()}


# -- registry -----------------------------------------------------------------


def test_register_strips_rw_everywhere_but_the_owner():
    _, _, ept, ranger, _ = make_world()
    for enclave in (1, 2):
        ranger.on_driver_load(enclave)
    region = ProtectedRegion(3 * PAGE + 100, 200, owner=1, kind=POOL_REGION)
    ranger.registry.register(region)
    assert ept.get_perms(1, 3) == RWX
    assert ept.get_perms(2, 3) == Perm.X
    assert ept.get_perms(KERNEL, 3) == Perm.X
    assert ept.get_perms(2, 4) == RWX  # neighbors untouched


def test_cross_owner_page_overlap_is_a_conflict():
    _, _, ept, ranger, _ = make_world()
    for enclave in (1, 2):
        ranger.on_driver_load(enclave)
    ranger.registry.register(ProtectedRegion(5 * PAGE, 64, owner=1, kind=POOL_REGION))
    with pytest.raises(RegionConflict):
        ranger.registry.register(
            ProtectedRegion(5 * PAGE + 64, 64, owner=2, kind=POOL_REGION)
        )
    # same-owner overlap on the page is fine
    ranger.registry.register(ProtectedRegion(5 * PAGE + 64, 64, owner=1, kind=POOL_REGION))
    assert len(ranger.registry.regions) == 2


def test_unregister_keeps_pages_held_by_surviving_regions():
    _, _, ept, ranger, _ = make_world()
    for enclave in (1, 2):
        ranger.on_driver_load(enclave)
    a = ProtectedRegion(7 * PAGE, 64, owner=1, kind=POOL_REGION)
    b = ProtectedRegion(7 * PAGE + 512, 64, owner=1, kind=POOL_REGION)
    ranger.registry.register(a)
    ranger.registry.register(b)
    ranger.registry.unregister(a)
    assert ept.get_perms(2, 7) == Perm.X  # b still owns the page
    ranger.registry.unregister(b)
    assert ept.get_perms(2, 7) == RWX


def test_register_unregister_restores_the_exact_view_state():
    _, _, ept, ranger, _ = make_world()
    for enclave in (1, 2, 3):
        ranger.on_driver_load(enclave)
    before = perms_snapshot(ept)
    rng = random.Random(11)
    placed = []
    for _ in range(30):
        region = ProtectedRegion(
            rng.randrange(0, 60 * PAGE),
            rng.randrange(1, 3 * PAGE),
            owner=rng.choice([1, 2, 3]),
            kind=rng.choice([POOL_REGION, FILE_OBJECT_REGION]),
        )
        try:
            ranger.registry.register(region)
        except RegionConflict:
            continue
        placed.append(region)
    assert placed  # the sweep must exercise something
    rng.shuffle(placed)
    for region in placed:
        ranger.registry.unregister(region)
    assert perms_snapshot(ept) == before
    assert ranger.registry.regions == []


def test_views_created_after_protection_exclude_live_regions():
    _, _, ept, ranger, _ = make_world()
    ranger.on_driver_load(1)
    ranger.registry.register(ProtectedRegion(9 * PAGE, 64, owner=1, kind=POOL_REGION))
    ranger.on_driver_load(2)  # late loader
    assert ept.get_perms(2, 9) == Perm.X
    assert ept.get_perms(2, 10) == RWX


# -- allocation callback ---------------------------------------------------------


def test_alloc_by_isolated_driver_is_protected():
    mem, _, ept, ranger, trace = make_world()
    ranger.on_driver_load(1)
    mem.alloc_hooks.append(ranger.on_alloc)
    base = mem.alloc_pool(100, "Work", caller=1)
    page = base // PAGE
    assert ept.get_perms(KERNEL, page) == Perm.X
    assert ept.get_perms(1, page) == RWX
    protects = events_of(trace, tr.PROTECT)
    assert len(protects) == 1
    assert protects[0].get("rkind") == POOL_REGION
    assert protects[0].get("owner") == "1"


def test_kernel_and_unisolated_allocs_stay_open():
    mem, _, ept, ranger, trace = make_world()
    ranger.on_driver_load(1)
    mem.alloc_hooks.append(ranger.on_alloc)
    mem.alloc_pool(100, "Krnl", caller=KERNEL)
    mem.alloc_pool(100, "Gste", caller=9)  # no view, not isolated
    assert events_of(trace, tr.PROTECT) == []
    assert ranger.registry.regions == []


# -- create callback ---------------------------------------------------------------


def fobj_handle(mem, objects, owner):
    base = mem.alloc_pool(FILE_OBJECT_SIZE, "File", caller=KERNEL)
    return base, objects.register_handle(base, owner)


def test_create_post_skips_each_failing_stage():
    mem, objects, ept, ranger, trace = make_world()
    ranger.on_driver_load(1)
    base, handle = fobj_handle(mem, objects, owner=1)

    cases = [
        (Status.STATUS_SHARING_VIOLATION, None, Access.NONE, 1, 1),
        (Status.SUCCESS, handle, Access.R, 1, 2),
        (Status.SUCCESS, handle, Access.NONE, KERNEL, 3),
        (Status.SUCCESS, handle, Access.NONE, 5, 3),  # no view for enclave 5
        (Status.SUCCESS, 9999, Access.NONE, 1, 4),
    ]
    for status, h, share, caller, stage in cases:
        before = len(trace.events)
        ranger.on_create_file_post(status, h, "f.txt", share, caller)
        new = trace.events[before:]
        assert [e.kind for e in new] == [tr.SKIPPED], (stage, new)
        assert new[0].get("stage") == str(stage)
    assert ranger.registry.regions == []


def test_create_post_protects_on_all_checks_passing():
    mem, objects, ept, ranger, trace = make_world()
    ranger.on_driver_load(1)
    base, handle = fobj_handle(mem, objects, owner=1)
    ranger.on_create_file_post(Status.SUCCESS, handle, "v.txt", Access.NONE, 1)
    regions = ranger.registry.regions
    assert len(regions) == 1
    assert (regions[0].base, regions[0].size, regions[0].owner) == (
        base,
        FILE_OBJECT_SIZE,
        1,
    )
    assert regions[0].kind == FILE_OBJECT_REGION and regions[0].label == "v.txt"
    protect = events_of(trace, tr.PROTECT)[0]
    assert protect.get("rkind") == FILE_OBJECT_REGION
    assert protect.get("file") == "v.txt"
    assert ept.get_perms(KERNEL, base // PAGE) == Perm.X


def test_create_post_conflicting_page_is_stage_five():
    mem, objects, ept, ranger, trace = make_world()
    for enclave in (1, 2):
        ranger.on_driver_load(enclave)
    base1, h1 = fobj_handle(mem, objects, owner=1)
    base2, h2 = fobj_handle(mem, objects, owner=2)
    assert base1 // PAGE == base2 // PAGE  # bump allocator packs the page
    ranger.on_create_file_post(Status.SUCCESS, h1, "a", Access.NONE, 1)
    ranger.on_create_file_post(Status.SUCCESS, h2, "b", Access.NONE, 2)
    skips = events_of(trace, tr.SKIPPED)
    assert len(skips) == 1 and skips[0].get("stage") == "5"
    assert len(ranger.registry.regions) == 1  # only the first won


def test_custom_protect_width_is_honored():
    for width in (0xB, 0x40):
        mem, objects, _, ranger, trace = make_world(fobj_protect_size=width)
        ranger.on_driver_load(1)
        _, handle = fobj_handle(mem, objects, owner=1)
        ranger.on_create_file_post(Status.SUCCESS, handle, "w", Access.NONE, 1)
        assert ranger.registry.regions[0].size == width
        assert events_of(trace, tr.PROTECT)[0].get("size") == str(width)


# -- close callback ------------------------------------------------------------------


def test_close_pre_unprotects_and_restores():
    mem, objects, ept, ranger, trace = make_world()
    ranger.on_driver_load(1)
    base, handle = fobj_handle(mem, objects, owner=1)
    ranger.on_create_file_post(Status.SUCCESS, handle, "v", Access.NONE, 1)
    page = base // PAGE
    assert ept.get_perms(KERNEL, page) == Perm.X
    ranger.on_close_pre(handle, caller=1)
    assert ranger.registry.regions == []
    assert ept.get_perms(KERNEL, page) == RWX
    unprotects = events_of(trace, tr.UNPROTECT)
    assert len(unprotects) == 1
    assert unprotects[0].get("base") == tr.format_addr(base)


def test_close_pre_ignores_nonmatching_cases():
    mem, objects, ept, ranger, trace = make_world()
    ranger.on_driver_load(1)
    base, handle = fobj_handle(mem, objects, owner=1)
    ranger.on_create_file_post(Status.SUCCESS, handle, "v", Access.NONE, 1)
    before = len(trace.events)

    ranger.on_close_pre(handle, caller=KERNEL)  # check 1: not isolated
    ranger.on_close_pre(9999, caller=1)  # check 2: handle does not resolve
    _, other = fobj_handle(mem, objects, owner=1)
    ranger.on_close_pre(other, caller=1)  # check 3: no region for that record

    assert len(ranger.registry.regions) == 1
    assert trace.events[before:] == []


# -- decision point -------------------------------------------------------------------


def test_map_decide_owner_allowed_foreigner_denied():
    _, _, _, ranger, trace = make_world()
    for enclave in (1, 2):
        ranger.on_driver_load(enclave)
    region = ProtectedRegion(4 * PAGE, 0x40, owner=1, kind=FILE_OBJECT_REGION, label="v")
    ranger.registry.register(region)

    own = ranger.map_decide(1, 4 * PAGE + 8, 8, Perm.R)
    assert own.verdict == "allow" and own.region is None

    theft = ranger.map_decide(2, 4 * PAGE + 8, 8, Perm.R)
    assert theft.verdict == "deny" and theft.region == region

    elsewhere = ranger.map_decide(2, 20 * PAGE, 64, Perm.W)
    assert elsewhere.verdict == "allow"

    decisions = events_of(trace, tr.POLICY_DECISION)
    assert [e.get("verdict") for e in decisions] == ["allow", "deny", "allow"]
    deny = decisions[1]
    assert deny.get("access") == "read"
    assert deny.get("region") == tr.format_addr(4 * PAGE)
    assert deny.get("owner") == "1"
    assert deny.get("rkind") == FILE_OBJECT_REGION


def test_review_routes_agree_on_every_random_access():
    # The view walk (trap route) and the registry walk (decision route) must
    # reach the same verdict for any access, by construction of the registry.
    _, _, ept, ranger, trace = make_world(page_count=32)
    for enclave in (1, 2, 3):
        ranger.on_driver_load(enclave)
    rng = random.Random(23)
    for _ in range(20):
        try:
            ranger.registry.register(
                ProtectedRegion(
                    rng.randrange(0, 30 * PAGE),
                    rng.randrange(1, 2 * PAGE),
                    owner=rng.choice([1, 2, 3]),
                    kind=rng.choice([POOL_REGION, FILE_OBJECT_REGION]),
                )
            )
        except RegionConflict:
            pass
    assert ranger.registry.regions
    for _ in range(500):
        actor = rng.choice([KERNEL, 1, 2, 3])
        addr = rng.randrange(0, 31 * PAGE)
        length = rng.randrange(0, min(2 * PAGE, 32 * PAGE - addr))
        kind = rng.choice([Perm.R, Perm.W])
        blocked = ranger.review(actor, addr, length, kind)
        verdict = trace.events[-1].get("verdict")
        assert trace.events[-1].kind == tr.POLICY_DECISION
        assert bool(blocked) == (verdict == "deny"), (actor, addr, length)
        for page in blocked:
            assert page in ept.pages_touched(addr, length)
            owner = ranger.registry.owner_of_page(page)
            assert owner is not None and owner != actor


def test_denied_read_returns_zeros_owner_reads_truth():
    mem, objects, ept, ranger, _ = make_world()
    for enclave in (1, 2):
        ranger.on_driver_load(enclave)
    mem.alloc_hooks.append(ranger.on_alloc)
    mem.policy = ranger
    base = mem.alloc_pool(32, "Priv", caller=1)
    mem.poke(base, b"confidential-data")
    assert mem.mem_read(base, 17, 1) == b"confidential-data"
    assert mem.mem_read(base, 17, 2) == bytes(17)
    mem.mem_write(base, b"OVERWRITTEN!!!!!!", 2)
    assert mem.peek(base, 17) == b"confidential-data"
