import pytest
from hypothesis import given, settings, strategies as st

from omnitask.errors import CycleError, StateError, UnknownDependencyError, ValidationError
from omnitask.tasks import SPLITS, ScheduleSpec, TaskMemory, TaskRecord


def rec(tid, deps=(), priority=None, **kw):
    return TaskRecord(id=tid, kind=kw.pop("kind", "passive"), description=tid, deps=frozenset(deps),
                      priority=priority, **kw)


def template(tid, spec, created_at=0):
    return TaskRecord(id=tid, kind="scheduled", description=tid, schedule=spec, created_at=created_at)


def scan(mem, t0, t1):
    fired = []
    for t in range(t0, t1 + 1):
        fired += mem.trigger_scheduled(t)
    return fired


def test_insert_moves_to_pending():
    mem = TaskMemory()
    before = len(mem.split("pending"))
    mem.insert_task(TaskRecord("a1", "active", "pick up scrap paper", category="clean_debris"))
    assert len(mem.split("pending")) == before + 1
    assert mem.split_of("a1") == "pending"


def test_self_dependency_is_a_cycle():
    mem = TaskMemory()
    with pytest.raises(CycleError):
        mem.insert_task(rec("x", deps={"x"}))
    assert "x" not in mem.tasks


def test_unknown_dependency_rejected():
    mem = TaskMemory()
    with pytest.raises(UnknownDependencyError):
        mem.insert_task(rec("x", deps={"ghost"}))


def test_chain_releases_one_at_a_time():
    mem = TaskMemory()
    mem.insert_task(rec("A"))
    mem.insert_task(rec("B", deps={"A"}))
    mem.insert_task(rec("C", deps={"B"}))
    assert [t.id for t in mem.executable_set()] == ["A"]
    mem.mark_executing("A")
    mem.finalize("A", "completed")
    assert [t.id for t in mem.executable_set()] == ["B"]
    mem.mark_executing("B")
    mem.finalize("B", "completed")
    assert [t.id for t in mem.executable_set()] == ["C"]


def test_add_dependency_closing_a_cycle():
    mem = TaskMemory()
    for t in "ABC":
        mem.insert_task(rec(t))
    mem.add_dependency("B", "A")
    mem.add_dependency("C", "B")
    with pytest.raises(CycleError) as err:
        mem.add_dependency("A", "C")
    assert err.value.cycle[0] == "A" and err.value.cycle[-1] == "A"
    assert "C" not in mem.tasks["A"].deps


def test_executable_set_orders_by_priority():
    mem = TaskMemory()
    mem.insert_task(rec("low", priority=40))
    mem.insert_task(rec("high", priority=70))
    assert [t.id for t in mem.executable_set()] == ["high", "low"]


def test_at_timer_fires_once():
    mem = TaskMemory()
    mem.insert_task(template("s1", ScheduleSpec.at(5)))
    assert mem.trigger_scheduled(4) == []
    assert mem.trigger_scheduled(5) == ["s1.1"]
    assert mem.trigger_scheduled(6) == []
    assert mem.tasks["s1"].status == "completed"


def test_every_ten_gives_four_firings_by_35():
    mem = TaskMemory()
    mem.insert_task(template("s1", ScheduleSpec.every(10)))
    assert scan(mem, 0, 35) == ["s1.1", "s1.2", "s1.3", "s1.4"]


def test_after_counts_from_registration():
    mem = TaskMemory()
    mem.insert_task(template("s1", ScheduleSpec.after(7), created_at=3))
    assert mem.trigger_scheduled(9) == []
    assert mem.trigger_scheduled(10) == ["s1.1"]


def test_every_with_end_exhausts():
    mem = TaskMemory()
    mem.insert_task(template("s1", ScheduleSpec.every(5, end=12, start=2)))
    fired = scan(mem, 0, 40)
    assert fired == ["s1.1", "s1.2", "s1.3"]
    assert mem.split_of("s1") is None


def test_late_scan_catches_up():
    mem = TaskMemory()
    mem.insert_task(template("s1", ScheduleSpec.every(10)))
    assert len(mem.trigger_scheduled(35)) == 4
    assert [d for _, d in mem.last_fired] == [0, 10, 20, 30]


def test_bad_schedules():
    with pytest.raises(ValidationError):
        ScheduleSpec.every(0)
    with pytest.raises(ValidationError):
        ScheduleSpec.at(-1)
    with pytest.raises(ValidationError):
        ScheduleSpec.from_doc({"sometime": 3})


def test_interrupt_and_resume_keep_context():
    mem = TaskMemory()
    mem.insert_task(rec("t"))
    assert mem.mark_executing("t") == []
    mem.mark_interrupted("t", ["0:navigation.navigate"])
    assert mem.split_of("t") == "interrupted"
    assert mem.mark_executing("t") == ["0:navigation.navigate"]


def test_interrupt_rules():
    mem = TaskMemory()
    mem.insert_task(rec("done"))
    mem.mark_executing("done")
    mem.finalize("done", "completed")
    with pytest.raises(StateError):
        mem.mark_interrupted("done", [])
    mem.insert_task(rec("careful", interruptible=False))
    mem.mark_executing("careful")
    with pytest.raises(StateError):
        mem.mark_interrupted("careful", [])


def test_finalize_twice_fails():
    mem = TaskMemory()
    mem.insert_task(rec("t"))
    mem.finalize("t", "failed")
    with pytest.raises(StateError):
        mem.finalize("t", "completed")
    assert all("t" not in [x.id for x in mem.split(s)] for s in SPLITS)


def test_failure_cancels_dependents():
    events = []
    mem = TaskMemory(sink=lambda k, p: events.append((k, p["task_id"], p["outcome"])))
    mem.insert_task(rec("A"))
    mem.insert_task(rec("B", deps={"A"}))
    mem.insert_task(rec("C", deps={"B"}))
    mem.finalize("A", "failed")
    assert events == [("task_failed", "A", "failed"), ("task_failed", "B", "cancelled"),
                      ("task_failed", "C", "cancelled")]


def test_snapshot_is_detached():
    mem = TaskMemory()
    mem.insert_task(rec("t"))
    snap = mem.snapshot()
    mem.mark_executing("t")
    assert snap.ids("pending") == ["t"] and snap.ids("executing") == []


def _check_splits(mem):
    seen = []
    for s in SPLITS:
        seen += [t.id for t in mem.split(s)]
    assert len(seen) == len(set(seen))
    live = [t for t in mem.tasks.values() if not t.terminal]
    assert sorted(seen) == sorted(t.id for t in live)
    c = mem.counts()
    assert c["created"] == c["live"] + c["completed"] + c["failed"] + c["cancelled"]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["insert", "dispatch", "interrupt", "complete", "fail", "tick"]),
                          st.integers(0, 30)), max_size=60))
def test_splits_stay_exclusive_and_conserved(ops):
    mem = TaskMemory()
    n = 0
    for op, k in ops:
        ids = sorted(mem.tasks)
        pick = ids[k % len(ids)] if ids else None
        try:
            if op == "insert":
                n += 1
                deps = {pick} if pick and k % 3 == 0 else set()
                spec = ScheduleSpec.every(1 + k % 4, end=k) if k % 5 == 0 else None
                mem.insert_task(TaskRecord(f"t{n}", "scheduled" if spec else "passive", "x",
                                           deps=deps, schedule=spec))
            elif op == "tick":
                mem.trigger_scheduled(k)
            elif pick is None:
                continue
            elif op == "dispatch":
                mem.mark_executing(pick)
            elif op == "interrupt":
                mem.mark_interrupted(pick, ["0:x.y"])
            else:
                mem.finalize(pick, "completed" if op == "complete" else "failed")
        except (StateError, ValidationError):
            pass
        _check_splits(mem)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 25), st.integers(0, 40), st.integers(0, 200), st.integers(1, 9))
def test_every_fires_once_per_due_tick(period, t0, span, stride):
    mem = TaskMemory()
    mem.insert_task(template("s1", ScheduleSpec.every(period), created_at=t0))
    t1 = t0 + span
    dues = []
    t = t0
    while t < t1:
        mem.trigger_scheduled(t)
        dues += [d for _, d in mem.last_fired]
        t += stride
    mem.trigger_scheduled(t1)
    dues += [d for _, d in mem.last_fired]
    assert dues == list(range(t0, t1 + 1, period))
    assert len(dues) == span // period + 1
