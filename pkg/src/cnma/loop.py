"""The CNMA loop: surrogate training, MILP proposal, learning from failure.

Each iteration retrains a ReLU surrogate of the blackbox from scratch on all
samples gathered so far, encodes it as a MILP conjoined with the problem
constraints, and asks branch and bound for the best point the surrogate
considers feasible.  The proposal is evaluated on the real blackbox:

* feasible    -> it is a solution; keep it (learning from success)
* infeasible  -> keep the counterexample sample (learning from failure)
* timeout     -> discard and refill with random samples
* MILP infeasible -> the surrogate contradicts P everywhere; add random
  samples to diversify the dataset

Every blackbox call, including timeouts and initialization, counts against
the evaluation budget.  Identical (problem, config, seed) produce identical
runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields as dataclass_fields
from typing import Sequence

import numpy as np

from . import milp
from .blackbox import OK, EvalCounter, EvalHarness, EvalRecord, sample_uniform
from .mlp import Dataset, TrainingDivergedError, fit, init_network
from .problem import (
    ProblemSpec,
    check_constraints,
    constraint_violation,
    evaluate_linear,
    require_valid,
)
from .simplex import LpNumericalError
from .trace import TraceRecorder


@dataclass
class CnmaConfig:
    n_initial: int = 2
    max_iterations: int = 1000
    eval_budget: int = 1000
    seed: int = 0
    net_hidden: tuple[int, ...] = (30,)
    epochs: int = 3000
    step_size: float = 1e-3
    batch_size: int = 256
    milp_node_budget: int = 600
    milp_time_budget: float = 10.0
    pattern_probes: int = 6  # sample activation regions probed per iteration
    objective_target: float | None = None
    random_fill_count: int = 1

    def __post_init__(self):
        self.net_hidden = tuple(int(h) for h in self.net_hidden)

    @classmethod
    def for_problem(cls, problem: ProblemSpec, **overrides) -> "CnmaConfig":
        """Problem-file solver defaults, then explicit overrides on top."""
        known = {f.name for f in dataclass_fields(cls)}
        merged: dict = {}
        for source in (problem.solver_defaults, overrides):
            for key, value in source.items():
                if key not in known:
                    raise ValueError(f"unknown solver option '{key}'")
                if value is not None:
                    merged[key] = value
        return cls(**merged)


@dataclass
class IterationRecord:
    index: int
    train_loss: float | None
    milp_status: str  # optimal | infeasible | budget_exceeded | *_failed
    proposed_x: tuple[float, ...] | None
    predicted_y: tuple[float, ...] | None
    eval_status: str | None  # ok | timeout | error | None
    actual_y: tuple[float, ...] | None
    feasible: bool | None
    outcome: str  # success | failure | random | stopped
    best_phi: float | None


@dataclass
class CnmaResult:
    problem: str
    best_x: tuple[float, ...] | None
    best_y: tuple[float, ...] | None
    best_phi: float | None
    feasible_found: bool
    stop_reason: str  # objective_target | eval_budget | max_iterations
    iterations: list[IterationRecord]
    counter: EvalCounter
    n_samples: int


class _BudgetExhausted(Exception):
    pass


class _Run:
    def __init__(self, problem: ProblemSpec, config: CnmaConfig, trace: TraceRecorder):
        self.problem = problem
        self.config = config
        self.trace = trace
        self.harness = EvalHarness(
            problem.blackbox, len(problem.outputs), problem.eval_timeout
        )
        self.rng = np.random.default_rng(config.seed)
        self.xs: list[tuple[float, ...]] = []
        self.ys: list[tuple[float, ...]] = []
        self.best_x: tuple[float, ...] | None = None
        self.best_y: tuple[float, ...] | None = None
        self.best_phi: float | None = None
        self.target_hit = False
        self.iteration = 0
        self.lower = np.array([v.lower for v in problem.inputs])
        self.upper = np.array([v.upper for v in problem.inputs])

    def improves(self, phi: float) -> bool:
        if self.best_phi is None:
            return True
        if self.problem.sense == "maximize":
            return phi > self.best_phi
        return phi < self.best_phi

    def check_target(self) -> None:
        target = self.config.objective_target
        if target is None or self.best_phi is None:
            return
        if self.problem.sense == "maximize":
            self.target_hit = self.best_phi >= target - 1e-12
        else:
            self.target_hit = self.best_phi <= target + 1e-12

    def ensure_budget(self) -> None:
        if self.harness.counter.total_calls >= self.config.eval_budget:
            raise _BudgetExhausted

    def evaluate(self, x, event: str) -> EvalRecord:
        """One accounted blackbox call plus its trace row(s)."""
        self.ensure_budget()
        rec = self.harness.evaluate(x)
        # wall_ms stays 0 in emitted rows: per-call timing is scheduler noise
        # and would break byte-identical reruns; EvalRecord keeps the real one
        if rec.status != OK:
            # errors share the timeout row; both are discarded identically
            self.trace.emit(
                "timeout",
                iteration=self.iteration,
                eval_seq=rec.seq,
                x=rec.x,
                best_phi=self.best_phi,
            )
            return rec
        assignment = self.problem.assignment(rec.x, rec.y)
        phi = evaluate_linear(self.problem.objective, assignment)
        self.trace.emit(
            event,
            iteration=self.iteration,
            eval_seq=rec.seq,
            x=rec.x,
            y=rec.y,
            phi=phi,
            best_phi=self.best_phi,
        )
        feasible = check_constraints(self.problem.constraints, assignment)
        if feasible and self.improves(phi):
            self.best_x, self.best_y, self.best_phi = rec.x, rec.y, phi
            self.check_target()
        self.trace.emit(
            "feasible" if feasible else "infeasible",
            iteration=self.iteration,
            x=rec.x,
            y=rec.y,
            phi=phi,
            best_phi=self.best_phi,
        )
        self.xs.append(rec.x)
        self.ys.append(rec.y)
        return rec

    def was_feasible(self, rec: EvalRecord) -> bool:
        assignment = self.problem.assignment(rec.x, rec.y)
        return check_constraints(self.problem.constraints, assignment)

    def draw(self) -> np.ndarray:
        return sample_uniform(self.problem.inputs, 1, self.rng)[0]

    def random_fill(self, count: int) -> None:
        """Add `count` fresh random samples, retrying through timeouts."""
        added = 0
        while added < count:
            rec = self.evaluate(self.draw(), "random_fill")
            if rec.status == OK:
                added += 1


def cnma_run(
    problem: ProblemSpec,
    config: CnmaConfig | None = None,
    trace: TraceRecorder | None = None,
) -> CnmaResult:
    require_valid(problem)
    config = config or CnmaConfig.for_problem(problem)
    if trace is None:
        trace = TraceRecorder(
            problem.name, "cnma", problem.input_names(), problem.output_names()
        )
    run = _Run(problem, config, trace)
    records: list[IterationRecord] = []
    stop_reason = "max_iterations"
    try:
        _initial_samples(run)
        for it in range(1, config.max_iterations + 1):
            if run.target_hit:
                break
            if not run.xs:
                run.random_fill(1)
            run.iteration = it
            records.append(_iterate(run, it))
    except _BudgetExhausted:
        stop_reason = "eval_budget"
    finally:
        run.harness.close()
    if run.target_hit:
        stop_reason = "objective_target"
    return CnmaResult(
        problem=problem.name,
        best_x=run.best_x,
        best_y=run.best_y,
        best_phi=run.best_phi,
        feasible_found=run.best_phi is not None,
        stop_reason=stop_reason,
        iterations=records,
        counter=run.harness.counter,
        n_samples=len(run.xs),
    )


def _initial_samples(run: _Run) -> None:
    got = 0
    refill = False
    while got < run.config.n_initial:
        rec = run.evaluate(run.draw(), "random_fill" if refill else "init")
        if rec.status == OK:
            got += 1
            refill = False
        else:
            refill = True


def _train_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence((seed, iteration)).generate_state(1)[0])


def _probe_indices(run: _Run) -> list[int]:
    """Samples whose activation regions are worth probing, best first.

    While no feasible sample exists, the least-violating samples lead the
    search toward the boundary.  Once one does, only feasible samples (ranked
    by objective) are probed: candidates from infeasible regions would always
    undercut the incumbent and drag proposals back into optimistic territory.
    The two most recent samples are always appended so freshly corrected
    regions get re-probed after retraining.
    """
    problem = run.problem
    sign = -1.0 if problem.sense == "maximize" else 1.0
    feasible_keys = []
    infeasible_keys = []
    for i, (x, y) in enumerate(zip(run.xs, run.ys)):
        assignment = problem.assignment(x, y)
        if check_constraints(problem.constraints, assignment):
            phi = evaluate_linear(problem.objective, assignment)
            feasible_keys.append((sign * phi, i))
        else:
            worst = max(
                (constraint_violation(c, assignment) for c in problem.constraints),
                default=0.0,
            )
            infeasible_keys.append((worst, i))
    pool = feasible_keys or infeasible_keys
    pool.sort(key=lambda pair: pair[0])
    ranked = [i for _, i in pool[: run.config.pattern_probes]]
    recent = list(range(len(run.xs)))[-2:]
    return list(dict.fromkeys(ranked + recent))


def _propose(run: _Run, net, model) -> tuple[str, dict | None, float | None]:
    """Best proposal from the budgeted solve plus activation-region probes.

    Returns (milp_status, assignment or None, objective value).  The full
    solve may stop at its budget without an integral point; probing the
    regions of good known samples then supplies candidates the branch and
    bound could not reach, each via a single restricted solve.
    """
    config, problem = run.config, run.problem
    sign = -1.0 if problem.sense == "maximize" else 1.0
    candidates: list[tuple[float, dict]] = []
    full_status = None
    try:
        full = milp.solve(
            model,
            node_budget=config.milp_node_budget,
            time_budget=config.milp_time_budget,
        )
        full_status = full.status
        if full.assignment is not None:
            candidates.append((sign * full.objective_value, full.assignment))
    except LpNumericalError:
        full_status = "numerical_failed"

    if config.pattern_probes > 0:
        binaries = [v.name for v in model.variables if v.kind == "binary"]
        seen: set[tuple] = set()
        for i in _probe_indices(run):
            pattern = milp.activation_pattern(net, run.xs[i])
            key = tuple(pattern.get(name, -1.0) for name in binaries)
            if key in seen:
                continue
            seen.add(key)
            try:
                sol = milp.solve(
                    milp.restrict_binaries(model, pattern),
                    node_budget=8,
                    time_budget=config.milp_time_budget,
                )
            except LpNumericalError:
                continue
            if sol.status == milp.OPTIMAL and sol.assignment is not None:
                candidates.append((sign * sol.objective_value, sol.assignment))

    if not candidates:
        return full_status or "infeasible", None, None
    # Conservative pick: among candidates predicted to beat the incumbent,
    # take the *least* ambitious one.  Deep predicted improvements are where
    # the surrogate is most wrong, so chasing the global minimizer yields a
    # stream of infeasible proposals; the shallow end is usually real.
    incumbent = None if run.best_phi is None else sign * run.best_phi
    improving = [c for c in candidates if incumbent is None or c[0] < incumbent - 1e-9]
    if improving:
        best_key, best_assignment = max(improving, key=lambda c: c[0])
    else:
        best_key, best_assignment = min(candidates, key=lambda c: c[0])
    if full_status == milp.OPTIMAL:
        status = milp.OPTIMAL
    else:
        status = milp.BUDGET_EXCEEDED
    return status, best_assignment, sign * best_key


def _iterate(run: _Run, it: int) -> IterationRecord:
    problem, config = run.problem, run.config
    tseed = _train_seed(config.seed, it)
    sizes = (len(problem.inputs), *config.net_hidden, len(problem.outputs))
    data = Dataset(np.array(run.xs), np.array(run.ys))

    train_loss = None
    assignment = None
    milp_status = "training_failed"
    try:
        net, train_loss = fit(
            init_network(sizes, tseed),
            data,
            epochs=config.epochs,
            step_size=config.step_size,
            batch_size=config.batch_size,
            seed=tseed,
        )
        model = milp.assemble_problem_milp(problem, net)
    except TrainingDivergedError:
        pass
    except milp.EncodingError:
        milp_status = "encoding_failed"
    else:
        milp_status, assignment, _ = _propose(run, net, model)

    if assignment is None:
        run.trace.emit(
            "milp_infeasible",
            iteration=it,
            best_phi=run.best_phi,
        )
        run.random_fill(config.random_fill_count)
        return IterationRecord(
            it, train_loss, milp_status, None, None, None, None, None,
            "random", run.best_phi,
        )

    x_star = np.clip(
        [assignment[v.name] for v in problem.inputs], run.lower, run.upper
    )
    y_hat = tuple(assignment[v.name] for v in problem.outputs)
    phi_hat = evaluate_linear(problem.objective, assignment)
    run.trace.emit(
        "propose",
        iteration=it,
        x=x_star,
        y=y_hat,
        phi=phi_hat,
        best_phi=run.best_phi,
    )

    rec = run.evaluate(x_star, "eval")
    if rec.status != OK:
        run.random_fill(config.random_fill_count)
        return IterationRecord(
            it, train_loss, milp_status, tuple(x_star), y_hat,
            rec.status, None, None, "random", run.best_phi,
        )
    feasible = run.was_feasible(rec)
    return IterationRecord(
        it, train_loss, milp_status, tuple(x_star), y_hat,
        rec.status, rec.y, feasible, "success" if feasible else "failure",
        run.best_phi,
    )
