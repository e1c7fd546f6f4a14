from __future__ import annotations

import json
import random

import pytest

from reprograph.errors import AnnotationError, EncapsulationError, ReprographError
from reprograph.relation import (
    AggregationResult,
    ApiUnit,
    InProcessExecutor,
    MappingCodeProvider,
    RelationAnnotation,
    UnitDecl,
    aggregate_neighborhood,
    annotation_from_wire,
    annotation_to_wire,
    encapsulate,
    near_miss_names,
    normalize_unit_name,
    priority,
    stub_body,
    validate_annotation,
    validate_callability,
)


def _decl(name, kind="reuse", location="model.py:loss", **kw):
    return UnitDecl(
        unit_name=name,
        description=f"{name} implementation",
        code_location=location if kind in ("reuse", "adapt") else None,
        **kw,
    )


def _annotation(reuse=(), adapt=(), new=(), diffs=None):
    return RelationAnnotation(
        target_id="t",
        neighbor_id="n1",
        reuse_units=tuple(reuse),
        adapt_units=tuple(adapt),
        new_units=tuple(new),
        diff_instructions=diffs or {},
    )


def _api(name, kind, source="n1", weight_hint=None, callability="pass",
         body="def f():\n    return 1\n", reason=None):
    return ApiUnit(
        api_name=name,
        kind=kind,
        source=source,
        signature=f"{name}()",
        dependencies=(),
        code_body=body,
        callability=callability,
        failure_reason=reason,
    )


# ---------------------------------------------------------------- annotations

def test_unit_in_two_sets_rejected_by_name():
    a = _annotation(
        reuse=[_decl("loss")],
        adapt=[_decl("loss", kind="adapt", location="model.py:loss")],
        diffs={"loss": "swap reduction"},
    )
    with pytest.raises(AnnotationError, match="loss"):
        validate_annotation(a)


def test_empty_annotation_valid():
    validate_annotation(_annotation())


def test_adapt_without_diff_rejected():
    a = _annotation(adapt=[_decl("sampler", kind="adapt", location="s.py:sample")])
    with pytest.raises(AnnotationError, match="sampler"):
        validate_annotation(a)


def test_reuse_without_location_rejected():
    a = _annotation(reuse=[UnitDecl(unit_name="loss", description="d")])
    with pytest.raises(AnnotationError, match="loss"):
        validate_annotation(a)


def test_new_with_location_rejected():
    bad = UnitDecl(unit_name="novel_attention", description="d",
                   code_location="x.py:f")
    with pytest.raises(AnnotationError, match="novel_attention"):
        validate_annotation(_annotation(new=[bad]))


def test_dangling_diff_instruction_rejected():
    a = _annotation(diffs={"ghost": "change things"})
    with pytest.raises(AnnotationError, match="ghost"):
        validate_annotation(a)


def test_wire_annotation_unit_counts_match_raw_json():
    raw = json.dumps({
        "reusable_units": [
            {"unit_name": "encoder", "description": "graph encoder",
             "code_location": "model.py:Encoder", "evidence": "sec 3", "risk": "low"},
            {"unit_name": "loss", "description": "bpr loss",
             "code_location": "loss.py:bpr", "evidence": "sec 3", "risk": "low"},
        ],
        "adaptable_units": [
            {"unit_name": "sampler", "description": "negative sampler",
             "code_location": "data.py:sample", "evidence": "unknown",
             "risk": "medium", "diff_instruction": "use static precomputed graph"},
        ],
        "new_units": [
            {"unit_name": "novel_attention", "description": "paper-specific block",
             "reason": "no neighbor implements it", "evidence": "unknown"},
        ],
    })
    doc = json.loads(raw)
    # Independent count straight off the raw document.
    expected = sum(len(doc[k]) for k in ("reusable_units", "adaptable_units", "new_units"))

    a = annotation_from_wire("t", "n1", doc)
    assert len(a.reuse_units) + len(a.adapt_units) + len(a.new_units) == expected == 4
    assert a.diff_instructions == {"sampler": "use static precomputed graph"}

    round_tripped = annotation_from_wire("t", "n1", annotation_to_wire(a))
    assert round_tripped == a


def test_normalization_and_near_miss_detection():
    assert normalize_unit_name("Data Loader") == "data_loader"
    assert normalize_unit_name("data-loader") == "data_loader"
    assert near_miss_names(["data_loader", "dataloader", "loss"]) == [
        ("data_loader", "dataloader")
    ]


# -------------------------------------------------------------- encapsulation

LOSS_SOURCE = "def loss(scores, labels):\n    return ((scores - labels) ** 2).mean()\n"


def _provider():
    return MappingCodeProvider({
        ("code/n1", "model.py:loss"): LOSS_SOURCE,
        ("code/n1", "data.py:sample"): "def sample(n):\n    return list(range(n))\n",
    })


def _patch_transformer(decl, source, diff):
    return source.replace("scores - labels", "scores * labels") + f"# adapted: {diff}\n"


def test_reuse_extracted_verbatim():
    a = _annotation(reuse=[_decl("loss", location="model.py:loss")])
    units = encapsulate(a, _provider(), _patch_transformer, code_ref="code/n1")
    assert len(units) == 1
    assert units[0].kind == "reuse"
    assert units[0].code_body == LOSS_SOURCE
    assert units[0].callability == "unvalidated"
    assert units[0].signature == "loss(scores, labels)"


def test_new_unit_becomes_named_stub():
    a = _annotation(new=[UnitDecl(unit_name="novel_attention", description="d")])
    units = encapsulate(a, _provider(), _patch_transformer, code_ref="code/n1")
    stub = units[0]
    assert stub.kind == "new"
    assert stub.source == "stub"
    namespace = {}
    exec(stub.code_body, namespace)
    with pytest.raises(NotImplementedError, match="novel_attention"):
        namespace["novel_attention"]()


def test_adapt_applies_transformer_and_records_diff():
    diff = "replace dynamic graph with static precomputed graph"
    a = _annotation(
        adapt=[_decl("loss", kind="adapt", location="model.py:loss")],
        diffs={"loss": diff},
    )
    units = encapsulate(a, _provider(), _patch_transformer, code_ref="code/n1")
    unit = units[0]
    assert unit.kind == "adapt"
    assert unit.code_body != LOSS_SOURCE
    assert unit.provenance["diff_instruction"] == diff
    # Oracle: the recorded patch applied by hand.
    assert unit.code_body == _patch_transformer(None, LOSS_SOURCE, diff)


def test_unresolvable_location_raises():
    a = _annotation(reuse=[_decl("loss", location="missing.py:loss")])
    with pytest.raises(EncapsulationError, match="missing.py:loss"):
        encapsulate(a, _provider(), _patch_transformer, code_ref="code/n1")


def test_transformer_failure_marks_unit_not_dropped():
    def exploding(decl, source, diff):
        raise RuntimeError("adaptation model refused")

    a = _annotation(
        adapt=[_decl("loss", kind="adapt", location="model.py:loss")],
        diffs={"loss": "do something"},
    )
    units = encapsulate(a, _provider(), exploding, code_ref="code/n1")
    assert len(units) == 1
    assert units[0].callability == "fail"
    assert "adaptation model refused" in units[0].failure_reason


# ---------------------------------------------------------------- callability

def test_broken_body_fails_parse():
    unit = _api("loss", "reuse", body="def loss(:\n")
    checked = validate_callability(unit, InProcessExecutor())
    assert checked.callability == "fail"
    assert "import/parse" in checked.failure_reason


def test_noop_function_passes():
    unit = _api("noop", "reuse", body="def noop():\n    pass\n")
    assert validate_callability(unit, InProcessExecutor()).callability == "pass"


def test_missing_dependency_named():
    unit = _api("loss", "reuse",
                body="import torch_nonexistent_pkg\n\ndef loss():\n    pass\n")
    checked = validate_callability(unit, InProcessExecutor())
    assert checked.callability == "fail"
    assert "torch_nonexistent_pkg" in checked.failure_reason


def test_function_requiring_args_passes_smoke():
    unit = _api("loss", "reuse", body=LOSS_SOURCE, callability="unvalidated")
    assert validate_callability(unit, InProcessExecutor()).callability == "pass"


def test_correct_stub_passes_incorrect_fails():
    good = _api("novel_attention", "new", body=stub_body("novel_attention"))
    assert validate_callability(good, InProcessExecutor()).callability == "pass"

    bad = _api("novel_attention", "new",
               body="def novel_attention(*a, **k):\n    raise NotImplementedError('nope')\n")
    checked = validate_callability(bad, InProcessExecutor())
    assert checked.callability == "fail"


def test_missing_executor_leaves_unit_flagged():
    unit = _api("loss", "reuse")
    checked = validate_callability(unit, None)
    assert checked.callability == "unvalidated"
    assert checked.provenance["validation"] == "executor unavailable"


def test_empty_body_rejected():
    unit = _api("loss", "reuse", body="")
    with pytest.raises(EncapsulationError):
        validate_callability(unit, InProcessExecutor())


# ------------------------------------------------------------------- priority

def test_worked_priority_case():
    reuse = _api("static_graph", "reuse")
    adapt = _api("dynamic_graph", "adapt")
    assert priority(reuse, 0.45, beta=0.15) == pytest.approx(0.60, abs=1e-12)
    assert priority(adapt, 0.37, beta=0.15) == pytest.approx(0.37, abs=1e-12)


def test_zero_beta_degenerates_to_weight():
    assert priority(_api("u", "reuse"), 0.4, beta=0.0) == pytest.approx(0.4)
    # beta=0 is only reachable programmatically; the priority function itself
    # does not enforce positivity, its callers validate config.


def test_reuse_bias_overcomes_weight_deficit():
    assert priority(_api("u", "reuse"), 0.4, beta=0.15) > priority(
        _api("v", "adapt"), 0.5, beta=0.15
    )


def test_new_unit_has_no_priority():
    with pytest.raises(ReprographError):
        priority(_api("u", "new"), 0.4, beta=0.15)


# ---------------------------------------------------------------- aggregation

def test_worked_aggregation_fixture():
    candidates = {
        "graph_builder": [
            (_api("static_graph_builder", "reuse", source="n_reuse"), 0.45),
            (_api("dynamic_graph_builder", "adapt", source="n_adapt"), 0.37),
        ]
    }
    result = aggregate_neighborhood(candidates, beta=0.15)
    sel = result.selections["graph_builder"]
    assert sel.api.kind == "reuse"
    assert sel.priority == pytest.approx(0.60, abs=1e-12)
    assert [a.api_name for a in sel.alternatives] == ["dynamic_graph_builder"]


def test_only_new_stub_is_deferred():
    candidates = {"novel_attention": [(_api("novel_attention", "new", source="stub"), 0.5)]}
    result = aggregate_neighborhood(candidates)
    assert result.deferred == (("novel_attention", "no suitable api"),)
    assert result.selections == {}


def test_failed_candidates_excluded_but_listed():
    candidates = {
        "loss": [
            (_api("loss_a", "reuse", source="n1", callability="fail", reason="x"), 0.9),
            (_api("loss_b", "adapt", source="n2"), 0.3),
        ]
    }
    result = aggregate_neighborhood(candidates)
    sel = result.selections["loss"]
    assert sel.api.api_name == "loss_b"
    assert [a.api_name for a in sel.alternatives] == ["loss_a"]
    assert sel.alternatives[0].failure_reason == "x"


def test_empty_candidate_map_rejected():
    with pytest.raises(ReprographError):
        aggregate_neighborhood({})


def _oracle_best(pool, beta):
    """Independent argmax using explicit pairwise comparison."""
    def better(a, b):
        (api_a, w_a), (api_b, w_b) = a, b
        p_a = w_a + (beta if api_a.kind == "reuse" else 0.0)
        p_b = w_b + (beta if api_b.kind == "reuse" else 0.0)
        if p_a != p_b:
            return p_a > p_b
        if (api_a.kind == "reuse") != (api_b.kind == "reuse"):
            return api_a.kind == "reuse"
        if w_a != w_b:
            return w_a > w_b
        if api_a.source != api_b.source:
            return api_a.source < api_b.source
        return api_a.api_name < api_b.api_name

    best = None
    for cand in pool:
        if cand[0].kind not in ("reuse", "adapt") or cand[0].callability != "pass":
            continue
        if best is None or better(cand, best):
            best = cand
    return best


def _random_instance(rng: random.Random):
    n_units = rng.randint(1, 10)
    neighbors = [f"n{i}" for i in range(rng.randint(1, 5))]
    weights = {n: round(rng.uniform(0.05, 0.95), 3) for n in neighbors}
    candidates = {}
    for u in range(n_units):
        name = f"unit_{u}"
        pool = []
        for n in neighbors:
            roll = rng.random()
            if roll < 0.3:
                continue
            kind = rng.choice(["reuse", "adapt", "new"])
            callability = "pass" if kind != "new" and rng.random() < 0.85 else (
                "pass" if kind == "new" else "fail")
            pool.append((_api(f"{name}_{n}", kind, source=n,
                              callability=callability if kind != "new" else "pass"),
                         weights[n]))
        if pool:
            candidates[name] = pool
    return candidates


def test_aggregation_matches_brute_force_oracle():
    rng = random.Random(808)
    for _ in range(300):
        candidates = _random_instance(rng)
        if not candidates:
            continue
        beta = rng.choice([0.05, 0.15, 0.4])
        result = aggregate_neighborhood(candidates, beta=beta)
        for name, pool in candidates.items():
            oracle = _oracle_best(pool, beta)
            if oracle is None:
                assert (name, "no suitable api") in result.deferred
            else:
                assert result.selections[name].api == oracle[0]


def test_scale_free_argmax():
    rng = random.Random(17)
    for _ in range(50):
        candidates = _random_instance(rng)
        if not candidates:
            continue
        scale = rng.uniform(0.1, 3.0)
        scaled = {
            name: [(api, w * scale) for api, w in pool]
            for name, pool in candidates.items()
        }
        base = aggregate_neighborhood(candidates, beta=0.15)
        same = aggregate_neighborhood(scaled, beta=0.15 * scale)
        for name in base.selections:
            assert base.selections[name].api == same.selections[name].api
        assert base.deferred == same.deferred


def test_beta_monotonicity_never_flips_reuse_to_adapt():
    rng = random.Random(23)
    for _ in range(100):
        candidates = _random_instance(rng)
        if not candidates:
            continue
        lo = aggregate_neighborhood(candidates, beta=0.1)
        hi = aggregate_neighborhood(candidates, beta=0.5)
        for name in lo.selections:
            if lo.selections[name].api.kind == "reuse":
                assert hi.selections[name].api.kind == "reuse"


def test_partition_property():
    rng = random.Random(31)
    for _ in range(100):
        candidates = _random_instance(rng)
        if not candidates:
            continue
        result = aggregate_neighborhood(candidates)
        assert result.unit_names() == set(candidates)
        assert set(result.selections).isdisjoint({n for n, _ in result.deferred})


def test_aggregation_deterministic_serialization():
    rng = random.Random(77)
    candidates = _random_instance(rng)
    first = aggregate_neighborhood(candidates).wire_json()
    for _ in range(3):
        assert aggregate_neighborhood(candidates).wire_json() == first
