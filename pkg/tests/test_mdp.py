import json

import numpy as np
import pytest

from serd.errors import InvalidArgumentError, ParseError
from serd.mdp import (ParamLayout, ParamVector, TabularMdp, load_mdp, mdp_from_dict, mdp_hash,
                      mdp_to_dict, reward, reward_table, save_mdp, validate)


def two_state(start=(0.5, 0.5), discount=0.9):
    features = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    succ = np.array([[[0, 1]], [[1, 1]]])
    return TabularMdp(features, discount, np.array(start), succ)


class TestValidate:
    def test_well_formed(self):
        assert validate(two_state()) == []

    def test_start_dist_not_normalized(self):
        problems = validate(two_state(start=(0.5, 0.6)))
        assert len(problems) == 1
        assert "start_dist" in problems[0]

    def test_discount_one_excluded(self):
        problems = validate(two_state(discount=1.0))
        assert len(problems) == 1
        assert "discount" in problems[0]

    def test_negative_start_and_bad_successor(self):
        mdp = TabularMdp(np.zeros((2, 1, 1)), 0.5, np.array([1.5, -0.5]), np.array([[[0]], [[7]]]))
        problems = validate(mdp)
        assert any("start_dist[1]" in p for p in problems)
        assert any("successors[1, 0, 0]" in p for p in problems)

    def test_non_finite_feature_named(self):
        f = np.zeros((2, 1, 2))
        f[1, 0, 1] = np.nan
        mdp = TabularMdp(f, 0.5, np.array([0.5, 0.5]), np.array([[[0]], [[1]]]))
        assert validate(mdp) == ["features[1, 0, 1]: non-finite"]

    def test_shape_errors_raise(self):
        with pytest.raises(InvalidArgumentError):
            TabularMdp(np.zeros((2, 2)), 0.5, np.array([1.0, 0.0]), np.zeros((2, 2, 1), int))

    def test_arrays_are_read_only(self):
        mdp = two_state()
        with pytest.raises(ValueError):
            mdp.features[0, 0, 0] = 3.0


class TestReward:
    @pytest.mark.parametrize("theta, f, expected", [
        ((6, 6), (1, 1), 12.0),
        ((0, 0), (0.3, -2.0), 0.0),
        ((2, -3), (0.5, 1), -2.0),
    ])
    def test_examples(self, theta, f, expected):
        mdp = TabularMdp(np.array([[f]], dtype=float), 0.5, np.array([1.0]), np.array([[[0]]]))
        assert reward(mdp, theta, 0, 0) == expected

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            reward(two_state(), [1.0, 2.0, 3.0], 0, 0)
        with pytest.raises(InvalidArgumentError):
            reward_table(two_state(), [1.0])

    def test_table_matches_pointwise(self):
        mdp = two_state()
        table = reward_table(mdp, [2.0, -1.0])
        assert table.shape == (2, 1)
        assert table[0, 0] == reward(mdp, [2.0, -1.0], 0, 0)
        assert table[1, 0] == reward(mdp, [2.0, -1.0], 1, 0)


class TestParamVector:
    def test_tied_shares_storage(self):
        p = ParamVector([1.0, 2.0], [0.1, 0.2, 0.3])
        assert p.theta_t is p.theta_ta
        assert p.layout.size == 5
        assert p.flatten().tolist() == [1.0, 2.0, 0.1, 0.2, 0.3]

    def test_untied_layout(self):
        p = ParamVector([1.0], [0.1, 0.2], [0.3, 0.4], tied=False)
        lay = p.layout
        assert lay.size == 5
        assert p.flatten()[lay.t].tolist() == [0.3, 0.4]
        assert [lay.block_of(i) for i in range(5)] == [("r", 0), ("ta", 0), ("ta", 1), ("t", 0), ("t", 1)]

    def test_tied_block_map(self):
        lay = ParamLayout(2, 3, True)
        assert lay.t == lay.ta
        assert [lay.block_of(i)[0] for i in range(lay.size)] == ["r", "r", "dyn", "dyn", "dyn"]

    def test_round_trip(self):
        for p in (ParamVector([1.0, -2.0], [3.0]), ParamVector([1.0], [2.0], [5.0], tied=False)):
            q = ParamVector.unflatten(p.flatten(), p.layout)
            assert np.array_equal(q.flatten(), p.flatten())
            assert q.tied == p.tied

    def test_tied_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ParamVector([0.0], [1.0], [2.0], tied=True)

    def test_unflatten_length_checked(self):
        with pytest.raises(InvalidArgumentError):
            ParamVector.unflatten(np.zeros(4), ParamLayout(1, 1, False))

    def test_untie_copies(self):
        p = ParamVector([0.0], [1.0, 2.0]).untie()
        assert not p.tied
        p.theta_t[0] = 9.0
        assert p.theta_ta[0] == 1.0


class TestMdpFiles:
    def test_round_trip(self, tmp_path):
        mdp = two_state()
        save_mdp(tmp_path / "m.json", mdp)
        back = load_mdp(tmp_path / "m.json")
        assert mdp_to_dict(back) == mdp_to_dict(mdp)
        assert mdp_hash(back) == mdp_hash(mdp)

    def test_hash_changes_with_content(self):
        assert mdp_hash(two_state()) != mdp_hash(two_state(discount=0.8))

    def test_missing_field(self):
        doc = mdp_to_dict(two_state())
        del doc["discount"]
        with pytest.raises(ParseError, match="discount"):
            mdp_from_dict(doc)

    def test_wrong_feature_count(self):
        doc = mdp_to_dict(two_state())
        doc["features"] = doc["features"][:-1]
        with pytest.raises(ParseError):
            mdp_from_dict(doc)

    def test_invalid_content_rejected_on_load(self, tmp_path):
        doc = mdp_to_dict(two_state())
        doc["start_dist"] = [0.5, 0.6]
        (tmp_path / "bad.json").write_text(json.dumps(doc))
        with pytest.raises(ParseError, match="start_dist"):
            load_mdp(tmp_path / "bad.json")

    def test_not_json(self, tmp_path):
        (tmp_path / "x.json").write_text("{nope")
        with pytest.raises(ParseError):
            load_mdp(tmp_path / "x.json")
