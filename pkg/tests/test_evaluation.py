from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgzsl import evaluation as ev
from kgzsl.errors import ContractError, ParseError


class TestStrictMatch:
    def test_exact_set_equality(self):
        assert ev.strict_match(["a", "b"], ["b", "a"])
        assert not ev.strict_match(["a"], ["a", "b"])
        assert not ev.strict_match(["a", "b"], ["a"])
        assert ev.strict_match([], [])

    def test_duplicates_collapse(self):
        assert ev.strict_match(["a", "a"], ["a"])

    @given(st.sets(st.sampled_from("abcde")), st.sets(st.sampled_from("abcde")))
    @settings(max_examples=50, deadline=None)
    def test_symmetric(self, x, y):
        assert ev.strict_match(x, y) == ev.strict_match(y, x)


class TestFoldMetrics:
    def test_two_fold_reference_values(self):
        # fold 1: 3/4, fold 2: 1/2 -> micro 4/6, macro 0.625
        fold1 = [(["a"], ["a"]), (["b"], ["b"]), (["c"], ["c"]), (["d"], ["x"])]
        fold2 = [(["a", "b"], ["a", "b"]), (["a"], ["a", "b"])]
        result = ev.fold_metrics([fold1, fold2])
        assert result.per_fold[0].correct == 3
        assert result.per_fold[1].correct == 1
        assert abs(result.micro - 4 / 6) < 1e-12
        assert abs(result.macro - 0.625) < 1e-12

    def test_single_fold_micro_equals_macro(self):
        pairs = [(["a"], ["a"]), (["b"], ["c"])]
        result = ev.fold_metrics([pairs])
        assert result.micro == result.macro == 0.5

    def test_macro_weights_folds_equally(self):
        big = [(["a"], ["a"])] * 99 + [(["b"], ["x"])]
        small = [(["b"], ["x"])]
        result = ev.fold_metrics([big, small])
        assert abs(result.macro - (0.99 + 0.0) / 2) < 1e-12
        assert abs(result.micro - 99 / 101) < 1e-12

    def test_empty_inputs_rejected(self):
        with pytest.raises(ContractError):
            ev.fold_metrics([])
        with pytest.raises(ContractError):
            ev.fold_metrics([[(["a"], ["a"])], []])

    def test_jsonable_rounds_to_four_decimals(self, tmp_path):
        result = ev.fold_metrics([[(["a"], ["a"]), (["b"], ["x"]), (["c"], ["x"])]])
        obj = result.to_jsonable()
        assert obj == {
            "per_fold": [{"n": 3, "correct": 1, "acc": 0.3333}],
            "micro": 0.3333,
            "macro": 0.3333,
        }
        path = tmp_path / "metrics.json"
        result.save(path)
        assert json.loads(path.read_text()) == obj

    def test_metrics_json_byte_stable(self, tmp_path):
        result = ev.fold_metrics([[(["a"], ["a"])]])
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        result.save(p1)
        result.save(p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestFoldSpec:
    def test_disjointness(self):
        with pytest.raises(ContractError):
            ev.Fold(train=("a",), dev=("a",), test=("b",))
        with pytest.raises(ContractError):
            ev.Fold(train=("a",), dev=(), test=("a",))

    def test_test_classes_required(self):
        with pytest.raises(ContractError):
            ev.Fold(train=("a",), dev=(), test=())

    def test_round_trip(self, tmp_path):
        spec = ev.FoldSpec(
            folds=(
                ev.Fold(train=("a", "b"), dev=("c",), test=("d",)),
                ev.Fold(train=("d",), dev=(), test=("a", "b")),
            )
        )
        path = tmp_path / "folds.json"
        spec.save(path)
        loaded = ev.FoldSpec.load(path)
        assert loaded == spec

    def test_malformed_spec(self):
        with pytest.raises(ParseError):
            ev.FoldSpec.from_jsonable({"folds": [{"train": []}]})

    def test_needs_folds(self):
        with pytest.raises(ContractError):
            ev.FoldSpec(folds=())


class TestTopK:
    def test_topk_hit(self):
        assert ev.topk_hit(["a", "b", "c"], "b", 2)
        assert not ev.topk_hit(["a", "b", "c"], "c", 2)
        with pytest.raises(ContractError):
            ev.topk_hit(["a"], "a", 0)

    def test_per_class_average(self):
        pairs = [
            (["a", "b"], "a"),  # hit at 1
            (["b", "a"], "a"),  # miss at 1
            (["b", "a"], "b"),  # hit at 1
        ]
        # class a: 1/2, class b: 1/1 -> mean 0.75
        assert abs(ev.per_class_topk_accuracy(pairs, 1) - 0.75) < 1e-12

    def test_per_class_requires_data(self):
        with pytest.raises(ContractError):
            ev.per_class_topk_accuracy([], 1)
