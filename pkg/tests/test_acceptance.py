"""Acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line that the terminal summary prints at the
end of the run; running this file directly prints the same lines.
"""

from __future__ import annotations

import io
import math
import random
import subprocess
import sys
import time
from fractions import Fraction

from conftest import ACCEPTANCE_LINES
from helpers import item, scenario, small_world, stream_doc

from omnitask.bench import ExactJudge, overall_accuracy, positive_average, score_benchmark
from omnitask.errors import CycleError
from omnitask.harness import compare_golden, execute
from omnitask.memory import EventHistory, SceneGraph, retrieve_events
from omnitask.perception import Frame, PerceptionConfig, PerceptionModule
from omnitask.repl import Repl
from omnitask.scenario import Scenario, load_bundled
from omnitask.tasks import TaskMemory, TaskRecord

GOLDEN_SCENARIOS = [
    "independent_1_scrap_paper",
    "independent_2_humidity",
    "independent_3_office_check",
    "independent_4_dressing",
    "independent_5_daily_medicine",
    "independent_6_box_and_order",
    "competing_1_music_then_medicine",
    "competing_2_lights_interrupt",
    "competing_3_pickup_photo_weather",
    "competing_4_package_then_bottle",
    "competing_5_cup_during_photo",
]

# method, clean debris, organize item, safety check, avg, # proposals, negative acc, overall (percent)
BENCH_TABLE = [
    ("QwenVL-max", 79.71, 70.80, 67.57, 72.69, 0.31, 81.48, 77.09),
    ("GPT-o4-mini-0516", 78.26, 84.67, 86.48, 83.14, 0.87, 57.41, 70.28),
    ("Qwen2.5VL-7B", 15.94, 6.57, 2.70, 8.40, 0.00, 100.00, 54.20),
    ("MM-Eureka-Qwen-7B", 21.74, 6.57, 2.70, 10.34, 0.02, 98.15, 54.25),
    ("Cosmos-Reason1-7B", 91.30, 94.16, 97.29, 94.25, 1.96, 31.48, 62.87),
    ("RoboBrain-7B", 89.85, 91.97, 86.49, 89.44, 1.94, 11.11, 50.28),
    ("RoboBrain2.0-7B", 13.04, 10.95, 21.62, 15.24, 0.04, 96.30, 55.77),
]
GOLD_COUNTS = {"clean_debris": 69, "organize_item": 137, "safety_check": 37}
NEGATIVES = 54


def report(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- 1 ---------------------------------------------------------------------------------


def test_criterion_1_golden_flows():
    started = time.perf_counter()
    failures = []
    for name in GOLDEN_SCENARIOS:
        sc = load_bundled(name)
        assert sc.seed == 42
        trace, rep, _ = execute(sc)
        verdict = compare_golden(trace, sc.golden)
        if not verdict.matched:
            failures.append(f"{name}: {verdict.report()}")
    elapsed = time.perf_counter() - started
    ok = not failures and elapsed < 30.0
    detail = f"{len(GOLDEN_SCENARIOS) - len(failures)}/{len(GOLDEN_SCENARIOS)} matched in {elapsed:.2f}s"
    if failures:
        detail += "; " + " | ".join(failures)
    report(1, "golden flows", ok, detail)


# -- 2 ---------------------------------------------------------------------------------


def _row_inputs(row):
    """Predictions/annotations whose judged scores realize one printed row."""
    _, cd, oi, sc, _, props, neg, _ = row
    preds, gold = {}, {}
    for cat, pct in (("clean_debris", cd), ("organize_item", oi), ("safety_check", sc)):
        n = GOLD_COUNTS[cat]
        total = round(pct / 100 * n * 2) / 2
        full, half = int(total), total != int(total)
        for i in range(n):
            sid = f"{cat}-{i}"
            desc = f"{cat.replace('_', ' ')} item {i}"
            gold[sid] = {"gold": [{"category": cat, "description": desc}]}
            if i < full:
                preds[sid] = [{"category": cat, "description": desc}]
            elif i == full and half:
                preds[sid] = [{"category": cat, "description": desc + " and more"}]
            else:
                preds[sid] = ["nothing to do here"]
    silent = round(neg / 100 * NEGATIVES)
    noisy = NEGATIVES - silent
    n_props = round(props * NEGATIVES)
    for i in range(NEGATIVES):
        sid = f"neg-{i}"
        gold[sid] = {"negative": True}
        preds[sid] = []
    for j in range(n_props):
        preds[f"neg-{silent + j % noisy}"].append(f"tidy proposal {j}")
    return preds, gold


def test_criterion_2_benchmark_arithmetic():
    # exact arithmetic on the printed percentages; tolerance is half a unit of the last printed digit
    tol = Fraction(5, 1000)
    P = lambda x: Fraction(str(x))  # noqa: E731
    bad, worst = [], Fraction(0)
    for row in BENCH_TABLE:
        name, cd, oi, sc, avg, props, neg, overall = row
        got_avg = positive_average(P(cd), P(oi), P(sc))
        got_overall = overall_accuracy(P(avg), P(neg))
        for what, got, want in (("avg", got_avg, P(avg)), ("overall", got_overall, P(overall))):
            d = abs(got - want)
            worst = max(worst, d)
            if d > tol:
                bad.append(f"{name} {what}: {float(got):.4f} vs printed {float(want)} (off by {float(d):.4f})")
        # the scorer reproduces the row end to end from realized judge outcomes
        res = score_benchmark(*_row_inputs(row), ExactJudge())
        for what, got, want in (("clean_debris", res.clean_debris, cd), ("organize_item", res.organize_item, oi),
                                ("safety_check", res.safety_check, sc), ("negative", res.negative_accuracy, neg)):
            if abs(100 * got - want) >= 0.01:
                bad.append(f"{name} realized {what}: {100 * got:.4f} vs printed {want}")
        if abs(res.mean_negative_proposals - props) > 0.005:
            bad.append(f"{name} realized proposals: {res.mean_negative_proposals:.4f} vs printed {props}")
    report(2, "benchmark aggregation", not bad,
           f"7 rows on the printed percentage scale, worst deviation {float(worst):.4f}, tolerance 0.005"
           + ("; " + "; ".join(bad) if bad else ""))


# -- 3 ---------------------------------------------------------------------------------


def _stream_violations(seed: int, n_tasks: int) -> tuple[list, int]:
    sc = Scenario.from_doc(stream_doc(seed, n_tasks, disturbances=seed % 4))
    rt = sc.build_runtime()
    assert rt.config.rubric.aging is False
    problems = []
    while not (rt.clock > 0 and rt.quiescent()):
        if rt.clock > 50000:
            problems.append("no quiescence")
            break
        rt.advance(1)
        c = rt.mem.counts()
        if c["created"] != c["live"] + c["completed"] + c["failed"] + c["cancelled"]:
            problems.append(f"t{rt.clock}: conservation {c}")
        body = [t.id for t in rt.mem.split("executing") if "body" in t.resources]
        if len(body) > 1:
            problems.append(f"t{rt.clock}: body held by {body}")
    events = rt.halt().events
    margin = rt.config.rubric.effective_margin
    last_plan = None
    first_dispatch = []
    interrupted: dict[str, int] = {}
    settled: set = set()
    for e in events:
        if e.kind == "plan_decided":
            last_plan = e
            for d in e.payload["dispatch"]:
                if not d["resumed"]:
                    first_dispatch.append(d["task_id"])
        elif e.kind == "task_interrupted":
            tid = e.payload["task_id"]
            interrupted[tid] = e.seq
            ok = False
            if last_plan is not None and last_plan.time == e.time:
                pr = {d["task_id"]: d["priority"] for d in last_plan.payload["dispatch"]}
                for p in last_plan.payload["preempted"]:
                    if p["task_id"] == tid and p["by"] in pr and pr[p["by"]] - p["priority"] >= margin:
                        ok = ok or rt.mem.tasks[tid].interruptible
            if not ok:
                problems.append(f"interruption of {tid} at seq {e.seq} breaks the margin rule")
        elif e.kind in ("task_resumed", "task_completed", "task_failed"):
            tid = e.payload["task_id"]
            if tid in interrupted and e.seq > interrupted[tid]:
                settled.add(tid)
    for tid in interrupted:
        if tid not in settled:
            problems.append(f"{tid} interrupted and never resumed or finished")
    by_priority: dict[int, list] = {}
    for tid in first_dispatch:
        t = rt.mem.tasks[tid]
        if "body" in t.resources:  # tasks that contend for the exclusive resource
            by_priority.setdefault(t.priority, []).append(t)
    for p, ts in by_priority.items():
        serials = [t.serial for t in ts]
        if serials != sorted(serials):
            problems.append(f"priority {p}: dispatch order {[t.id for t in ts]} differs from creation order")
    return problems, len(interrupted)


def test_criterion_3_preemption_properties():
    problems, interruptions, tasks = [], 0, 0
    for seed in range(100):
        n = 1 + (seed * 37) % 60
        tasks += n
        p, k = _stream_violations(seed, n)
        problems += [f"stream {seed}: {x}" for x in p]
        interruptions += k
    p, k = _stream_violations(1000, 1000)
    problems += [f"stream 1000: {x}" for x in p]
    interruptions += k
    tasks += 1000
    ok = not problems and interruptions > 0
    report(3, "preemption and resumption", ok,
           f"101 streams, {tasks} instructions, {interruptions} interruptions"
           + ("; " + "; ".join(problems[:5]) if problems else ""))


# -- 4 ---------------------------------------------------------------------------------


def test_criterion_4_timer_exactness():
    rng = random.Random(4)
    bad = []
    for _ in range(50):
        period = rng.randint(1, 40)
        t0 = rng.randint(1, 30)
        t1 = t0 + rng.randint(0, 250)
        doc = {"label": "tick", "schedule": {"every": period},
               "steps": [{"tool": "speaker", "op": "say", "args": {"text": "tick"}}]}
        sc = scenario(timeline=[{"tick": t0, "schedule": doc}], horizon=t1)
        trace, _, _ = execute(sc)
        fired = len(trace.of_kind("timer_fired"))
        want = math.floor((t1 - t0) / period) + 1
        if fired != want:
            bad.append(f"p={period} [{t0},{t1}]: {fired} != {want}")
    report(4, "timer exactness", not bad, "50 (period, horizon) pairs, zero tolerance" + ("; " + ", ".join(bad) if bad else ""))


# -- 5 ---------------------------------------------------------------------------------


def test_criterion_5_memory_tiering():
    w_s, k, w_l, n = 30, 10, 100, 500
    pm = PerceptionModule(SceneGraph(["office"]), EventHistory(),
                          config=PerceptionConfig(short_capacity=w_s, long_capacity=w_l, thin_modulus=k))
    gaps = []
    for i in range(1, n + 1):
        pm.ingest_frame(Frame(i, i, rooms=("office",)))
        covered = pm.retained() | pm.captioned()
        missing = [j for j in range(1, i + 1) if j not in covered]
        if missing:
            gaps.append((i, missing[:3]))
    # replay oracle: a plain list stands in for the short tier
    short, long_tier = [], []
    for i in range(1, n + 1):
        short.append(i)
        if len(short) > w_s:
            old = short.pop(0)
            if old % k == 0:
                long_tier.append(old)
                if len(long_tier) > w_l:
                    long_tier.pop(0)
    _, got_long = pm.memory.indices()
    final_cover = all(j in pm.retained() or j in pm.captioned() for j in range(1, n + 1))
    ok = not gaps and final_cover and got_long == long_tier
    report(5, "memory tiering", ok,
           f"{n} frames, long-term {got_long[0]}..{got_long[-1]} ({len(got_long)} frames), coverage gaps {len(gaps)}")


# -- 6 ---------------------------------------------------------------------------------


def _ancestors(deps: dict, node: str) -> set:
    out, stack = set(), list(deps[node])
    while stack:
        d = stack.pop()
        if d not in out:
            out.add(d)
            stack.extend(deps[d])
    return out


def test_criterion_6_dependency_correctness():
    rng = random.Random(6)
    mismatches, cycles_tried, cycles_rejected = [], 0, 0
    for trial in range(200):
        n = rng.randint(1, 10)
        mem = TaskMemory()
        deps = {}
        for i in range(n):
            tid = f"t{i}"
            earlier = [f"t{j}" for j in range(i)]
            d = set(rng.sample(earlier, rng.randint(0, min(3, len(earlier)))))
            deps[tid] = d
            mem.insert_task(TaskRecord(tid, "passive", tid, deps=frozenset(d), priority=rng.randint(0, 100),
                                       created_at=i))
        for tid in deps:
            if rng.random() < 0.4:
                mem.finalize(tid, "completed")
        status = {t: mem.tasks[t].status for t in deps}
        want = {t for t in deps if status[t] == "pending"
                and all(status[a] == "completed" for a in _ancestors(deps, t))}
        got = {t.id for t in mem.executable_set()}
        if got != want:
            mismatches.append(f"dag {trial}: {sorted(got)} != {sorted(want)}")
        for tid in deps:
            for anc in sorted(_ancestors(deps, tid) | {tid}):
                cycles_tried += 1
                before = {t: mem.tasks[t].deps for t in deps}
                try:
                    mem.add_dependency(anc, tid)
                except CycleError:
                    cycles_rejected += 1
                after = {t: mem.tasks[t].deps for t in deps}
                if before != after:
                    mismatches.append(f"dag {trial}: graph changed by rejected edge {anc}->{tid}")
    ok = not mismatches and cycles_rejected == cycles_tried
    report(6, "dependency correctness", ok,
           f"200 DAGs, {cycles_rejected}/{cycles_tried} cycles rejected" + ("; " + "; ".join(mismatches[:3]) if mismatches else ""))


# -- 7 ---------------------------------------------------------------------------------


def test_criterion_7_retrieval_correctness():
    rng = random.Random(7)
    vocab = [f"w{i}" for i in range(12)]
    bad = []
    for trial in range(50):
        size = rng.randint(0, 1000)
        h = EventHistory()
        t = 0
        for _ in range(size):
            t += rng.choice([0, 1, 1, 2])
            h.append(t, t, " ".join(rng.choices(vocab, k=rng.randint(1, 5))))
        query = " ".join(rng.choices(vocab, k=rng.randint(1, 4)))
        k = rng.randint(1, 20)
        q = set(query.split())

        def exact(rec):
            c = set(rec.text.split())
            return Fraction(len(q & c), len(q | c))

        want = sorted(h.records, key=lambda r: (-exact(r), -r.end, -r.seq))[:k]
        got = retrieve_events(h, query, k)
        if [s.record.seq for s in got] != [r.seq for r in want]:
            bad.append(f"corpus {trial}")
        elif any(abs(s.score - float(exact(s.record))) > 1e-12 for s in got):
            bad.append(f"corpus {trial}: scores")
    report(7, "retrieval correctness", not bad, "50 corpora up to 1000 events" + ("; " + ", ".join(bad) if bad else ""))


# -- 8 ---------------------------------------------------------------------------------


def _isolation_doc(with_commands: bool) -> dict:
    world = small_world(extra=[item("visitor", "human", "office"), item("mug", "mug", "lab", on="lab_table"),
                               item("pen", "pen", "office", on="office_desk")])
    timeline = [{"tick": 3, "instruction": "It's too humid in the room"}]
    if with_commands:
        targets = ["visitor", "mug", "ghost", "human"]
        for i in range(100):
            timeline.append({"tick": 5 + i // 5, "command": {"tool": "manipulation", "op": "grasp",
                                                             "args": {"object": targets[i % 4]}}})
    return {"name": "isolation", "seed": 42, "horizon": 120, "world": world,
            "scripts": {"instructions": [{"match": "humid", "label": "humidifier_off", "steps": [
                {"tool": "iot", "op": "set_device", "args": {"device": "humidifier", "power": "off"}}]}]},
            "timeline": sorted(timeline, key=lambda e: e["tick"])}


def test_criterion_8_isolation():
    control, _, rt0 = execute(Scenario.from_doc(_isolation_doc(False)))
    probed, _, rt1 = execute(Scenario.from_doc(_isolation_doc(True)))
    rejected = probed.of_kind("command_rejected")
    sources = {r.source for r in rt1.history}
    ok = (len(rt1.history) == len(rt0.history)
          and rt1.history.dump_lines() == rt0.history.dump_lines()
          and len(rejected) == 100
          and all(e.payload["stage"] == "validation" for e in rejected)
          and [(e.time, e.payload) for e in probed.of_kind("command_issued")]
          == [(e.time, e.payload) for e in control.of_kind("command_issued")]
          and "safety_validation" not in sources)
    report(8, "validation isolation", ok,
           f"history {len(rt1.history)} vs control {len(rt0.history)}, {len(rejected)} command_rejected events")


# -- 9 ---------------------------------------------------------------------------------


def test_criterion_9_determinism():
    from omnitask.scenario import bundled_scenarios

    differing = []
    names = [n[:-5] for n in bundled_scenarios()]
    for name in names:
        a, _, _ = execute(load_bundled(name))
        b, _, _ = execute(load_bundled(name))
        if a.text() != b.text():
            differing.append(name)
    # a fresh interpreter (new hash seed) must agree byte for byte
    probe = "competing_3_pickup_photo_weather"
    out = subprocess.run([sys.executable, "-c",
                          "import sys; from omnitask.harness import execute; from omnitask.scenario import load_bundled;"
                          f"sys.stdout.write(execute(load_bundled({probe!r}))[0].text())"],
                         capture_output=True, text=True, check=True, env={"PYTHONHASHSEED": "12345"})
    if out.stdout != execute(load_bundled(probe))[0].text():
        differing.append(probe + " (subprocess)")

    sc = scenario(world=small_world(extra=[item("cup", "cup", "office", on="office_desk")]))
    live = Repl(sc.build_runtime(), io.StringIO())
    live.run([
        "say \"It's too humid in the room\"",
        "step 4",
        'disturb {"set_attr": {"object": "cup", "attrs": {"knocked_over": true}}}',
        'schedule {"label": "chime", "schedule": {"every": 7}, "steps": '
        '[{"tool": "speaker", "op": "say", "args": {"text": "chime"}}]}',
        "step 40",
        "dump tasks",
        "bogus command",
        "say \"Look up the weather\"",
        "step 20",
    ])
    live_trace = live.rt.halt().text()
    replay = Repl(sc.build_runtime(), io.StringIO())
    replay.run(live.transcript)
    replay_trace = replay.rt.halt().text()
    repl_ok = live_trace == replay_trace and len(live_trace) > 0
    ok = not differing and repl_ok
    report(9, "determinism", ok,
           f"{len(names)} scenarios run twice plus a fresh-interpreter run, REPL replay "
           f"{'identical' if repl_ok else 'differs'}" + ("; differing: " + ", ".join(differing) if differing else ""))


# -- 10 --------------------------------------------------------------------------------


def test_criterion_10_tidy_silence():
    sc = load_bundled("tidy_rooms")
    assert sc.doc.get("tidy") is True and sc.horizon == 500
    trace, rep, rt = execute(sc)
    active = [t for t in rt.mem.tasks.values() if t.kind == "active"]
    ok = not active and rep.active_tasks == 0 and not trace.of_kind("proposal_emitted") and rt.clock == 500
    report(10, "tidy silence", ok, f"{rt.clock} ticks, {len(active)} active tasks")


if __name__ == "__main__":
    import pytest

    sys.exit(pytest.main([__file__, "-q"]))
