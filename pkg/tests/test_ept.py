"""Permission views: creation, edits, active-view context, access checks."""

from __future__ import annotations

import random
from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minikern.ept import KERNEL, EptManager, Perm, RWX
from minikern.errors import DuplicateEnclave, OutOfBounds, UnknownEnclave

PAGES = 16
PAGE_SIZE = 256


@dataclass(frozen=True)
class Region:
    base: int
    size: int
    owner: int


def manager() -> EptManager:
    return EptManager(PAGES, PAGE_SIZE)


def test_default_view_exists_and_is_all_rwx():
    ept = manager()
    assert set(ept.views) == {KERNEL}
    assert all(p == RWX for p in ept.views[KERNEL].perms)
    assert len(ept.views[KERNEL].perms) == PAGES  # dense, one entry per page


def test_create_view_duplicate_enclave_rejected():
    ept = manager()
    ept.create_view(1)
    with pytest.raises(DuplicateEnclave):
        ept.create_view(1)


def test_create_view_excludes_existing_foreign_regions():
    ept = manager()
    ept.create_view(1)
    region = Region(base=PAGE_SIZE + 10, size=PAGE_SIZE, owner=1)  # pages 1..2
    view = ept.create_view(2, regions=[region])
    assert view.perms[1] == Perm.X
    assert view.perms[2] == Perm.X
    assert view.perms[0] == RWX
    # the owner is not affected by its own region
    assert all(p == RWX for p in ept.views[1].perms)


def test_unknown_enclave_everywhere():
    ept = manager()
    with pytest.raises(UnknownEnclave):
        ept.get_perms(9, 0)
    with pytest.raises(UnknownEnclave):
        ept.set_region_perms(9, 0, 1, RWX)
    with pytest.raises(UnknownEnclave):
        ept.set_active_view(9)
    with pytest.raises(UnknownEnclave):
        ept.check_access(9, 0, 1, Perm.R)


def test_set_region_perms_touches_exactly_the_overlapped_pages():
    # Brute-force page enumeration oracle across unaligned spans.
    for base, size in [(0, 1), (255, 2), (256, 256), (300, 700), (0, PAGES * PAGE_SIZE)]:
        ept = manager()
        ept.set_region_perms(KERNEL, base, size, Perm.X)
        expected_pages = {
            p for p in range(PAGES)
            if base < (p + 1) * PAGE_SIZE and base + size > p * PAGE_SIZE
        }
        for page in range(PAGES):
            want = Perm.X if page in expected_pages else RWX
            assert ept.get_perms(KERNEL, page) == want, (base, size, page)


def test_set_region_perms_zero_size_changes_nothing():
    ept = manager()
    ept.set_region_perms(KERNEL, 512, 0, Perm.X)
    assert all(p == RWX for p in ept.views[KERNEL].perms)


def test_set_region_perms_idempotent():
    ept = manager()
    ept.set_region_perms(KERNEL, 100, 500, Perm.R | Perm.X)
    first = list(ept.views[KERNEL].perms)
    ept.set_region_perms(KERNEL, 100, 500, Perm.R | Perm.X)
    assert ept.views[KERNEL].perms == first


def test_page_out_of_range():
    ept = manager()
    with pytest.raises(OutOfBounds):
        ept.get_perms(KERNEL, PAGES)
    with pytest.raises(OutOfBounds):
        ept.set_region_perms(KERNEL, PAGES * PAGE_SIZE - 1, 2, Perm.X)


def test_active_view_switch_counting():
    ept = manager()
    ept.create_view(1)
    ept.create_view(2)
    assert ept.active.current == KERNEL
    ept.set_active_view(KERNEL)  # no change, no count
    assert ept.active.switch_count == 0
    n = 8
    for i in range(n):
        ept.set_active_view(1 if i % 2 == 0 else 2)
    assert ept.active.switch_count == n
    assert ept.active.current == 2


def test_check_access_allowed_and_trapped():
    ept = manager()
    ept.create_view(1)
    ept.set_region_perms(1, PAGE_SIZE, PAGE_SIZE, Perm.X)  # page 1 loses R/W
    ok = ept.check_access(1, 0, PAGE_SIZE, Perm.R)
    assert ok.allowed and ok.blocked_pages == ()
    trapped = ept.check_access(1, PAGE_SIZE - 4, 8, Perm.W)  # spans pages 0..1
    assert not trapped.allowed
    assert trapped.blocked_pages == (1,)
    assert ept.check_access(1, PAGE_SIZE, 4, Perm.X).allowed  # X survived
    assert ept.active.trap_count == 1  # one trapped call, counted once


def test_check_access_zero_length_is_allowed():
    ept = manager()
    assert ept.check_access(KERNEL, 0, 0, Perm.W).allowed
    assert ept.check_access(KERNEL, PAGES * PAGE_SIZE, 0, Perm.W).allowed


def test_check_access_out_of_bounds():
    ept = manager()
    with pytest.raises(OutOfBounds):
        ept.check_access(KERNEL, PAGES * PAGE_SIZE - 1, 2, Perm.R)


def test_rebuild_view_matches_exhaustive_check():
    # Randomized regions; the rebuilt view must agree with per-page checks.
    rng = random.Random(7)
    for _ in range(25):
        ept = manager()
        for enclave in (1, 2, 3):
            ept.create_view(enclave)
        regions = []
        taken: dict[int, int] = {}
        while len(regions) < rng.randint(0, 6):
            base = rng.randrange(0, PAGES * PAGE_SIZE - 64)
            size = rng.randint(1, 3 * PAGE_SIZE)
            if base + size > PAGES * PAGE_SIZE:
                continue
            owner = rng.choice((1, 2, 3))
            pages = set(ept.pages_touched(base, size))
            if any(taken.get(p, owner) != owner for p in pages):
                continue
            for p in pages:
                taken[p] = owner
            regions.append(Region(base, size, owner))
            for view in ept.views.values():
                if view.enclave != owner:
                    ept.set_region_perms(view.enclave, base, size, Perm.X)
        for enclave in ept.views:
            rebuilt = ept.rebuild_view(enclave, regions)
            assert rebuilt.perms == ept.views[enclave].perms
            for page in range(PAGES):
                foreign = taken.get(page) not in (None, enclave)
                want_r = not foreign
                got = ept.check_access(enclave, page * PAGE_SIZE, 1, Perm.R).allowed
                assert got == want_r
                assert ept.check_access(enclave, page * PAGE_SIZE, 1, Perm.X).allowed


@settings(max_examples=60, deadline=None)
@given(
    edits=st.lists(
        st.tuples(
            st.integers(min_value=0, max_value=PAGES * PAGE_SIZE - 1),
            st.integers(min_value=0, max_value=2 * PAGE_SIZE),
            st.sampled_from([Perm.X, Perm.R | Perm.X, RWX, Perm.R | Perm.W]),
        ),
        max_size=20,
    )
)
def test_get_perms_replay_oracle(edits):
    # A plain dict model replays every edit; get_perms must agree everywhere.
    ept = manager()
    model = {p: RWX for p in range(PAGES)}
    for base, size, perms in edits:
        if base + size > PAGES * PAGE_SIZE:
            continue
        ept.set_region_perms(KERNEL, base, size, perms)
        if size > 0:
            for page in range(base // PAGE_SIZE, (base + size - 1) // PAGE_SIZE + 1):
                model[page] = perms
    for page in range(PAGES):
        assert ept.get_perms(KERNEL, page) == model[page]
