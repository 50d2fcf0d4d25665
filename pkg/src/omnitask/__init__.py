"""Deterministic runtime for a household robot agent.

Perception feeds a scene graph and a captioned event history, a planner
dispatches prioritized tasks to one-way tools, and a simulated world closes
the loop.  Everything runs on logical ticks and emits a JSONL trace.
"""

from .bench import BenchResult, ExactJudge, RemoteJudge, score_benchmark
from .errors import (
    AdapterError,
    CycleError,
    JudgeContractError,
    OmnitaskError,
    RuntimeHaltedError,
    ScenarioError,
    SequencingError,
    StartupError,
    StateError,
    UnknownDependencyError,
    ValidationError,
)
from .harness import GoldenVerdict, MetricsReport, Milestone, compare_golden, run_scenario
from .memory import (
    ContextBundle,
    EventHistory,
    EventRecord,
    LexicalRetriever,
    Observation,
    SceneGraph,
    assemble_context,
    retrieve_events,
)
from .perception import Frame, PerceptionConfig, PerceptionModule, Proposal, ProposalRule, ScriptedPerceiver, VisualMemory
from .planner import PlanDecision, Planner, PriorityRubric, RubricEvaluator, ScriptedEvaluator, evaluate_priority
from .predicates import Predicate
from .runtime import Runtime, RuntimeConfig, RuntimeEvent, Trace
from .scenario import Scenario, load_bundled
from .tasks import ScheduleSpec, Step, TaskMemory, TaskRecord
from .tools import Command, ToolRegistry, ToolSpec, validate_manipulation
from .world import Disturbance, World

__version__ = "0.1.0"
