import itertools

import numpy as np
import pytest

from stablereinforce.env import ParseResult, encode, referee_parse
from stablereinforce.rewards import (
    batch_reward_normalize,
    composite_reward,
    consistency_reward,
    formatting_reward,
    result_reward,
    score,
    shape_token_rewards,
)

GOOD = encode(["THINK_OPEN", "V2", "THINK_CLOSE", "ANSWER_OPEN", "V2", "ANSWER_CLOSE", "EOS"])


def parse(reasoning=None, answer=None, ok=False):
    return ParseResult(ok, reasoning, answer, 7)


def test_formatting():
    assert formatting_reward(referee_parse(GOOD)) == 1
    assert formatting_reward(referee_parse(GOOD[:3] + [GOOD[-1]])) == 0
    truncated = encode(["THINK_OPEN"] + ["FILLER_0"] * 31)
    assert formatting_reward(referee_parse(truncated)) == 0


@pytest.mark.parametrize("answer,gt,expected", [(2, 2, 1), (1, 2, 0), (None, 2, 0)])
def test_result(answer, gt, expected):
    assert result_reward(parse(answer=answer), gt) == expected


@pytest.mark.parametrize("reasoning,answer,expected", [(2, 2, 1), (2, 1, 0), (None, 1, 0),
                                                       (1, None, 0)])
def test_consistency(reasoning, answer, expected):
    assert consistency_reward(parse(reasoning, answer)) == expected


@pytest.mark.parametrize("r,c,f,expected", [(1, 1, 1, 2.0), (0, 1, 1, 0.5), (1, 0, 0, 1.0)])
def test_composite_examples(r, c, f, expected):
    assert composite_reward(r, c, f) == expected


def test_composite_truth_table_and_gating():
    table = {}
    for r, c, f in itertools.product((0, 1), repeat=3):
        table[r, c, f] = composite_reward(r, c, f)
        assert table[r, c, f] in (0.0, 0.5, 1.0, 1.5, 2.0)
    for f in (0, 1):
        assert table[0, 1, f] - table[0, 0, f] == 0
    for r, c, f in table:
        if r == 0:
            assert table[1, c, f] >= table[r, c, f]
        if c == 0:
            assert table[r, 1, f] >= table[r, c, f]
        if f == 0:
            assert table[r, c, 1] >= table[r, c, f]


@pytest.mark.parametrize("bad", [(2, 0, 0), (0, -1, 0), (0, 0, 0.5)])
def test_composite_rejects_non_binary(bad):
    with pytest.raises(ValueError):
        composite_reward(*bad)


def test_score_inconsistent_case():
    toks = encode(["THINK_OPEN", "V2", "THINK_CLOSE", "ANSWER_OPEN", "V1", "ANSWER_CLOSE", "EOS"])
    rb = score(referee_parse(toks), ground_truth=1)
    assert (rb.formatting, rb.result, rb.consistency, rb.final) == (1, 1, 0, 1.5)


class TestShaping:
    def test_beta_zero(self):
        out = shape_token_rewards(2.0, np.zeros(4), np.zeros(4), beta=0.0)
        np.testing.assert_array_equal(out, [0, 0, 0, 2.0])
        assert out.sum() == 2.0

    def test_identical_distributions(self):
        lp = np.log([0.2, 0.5, 0.9])
        np.testing.assert_array_equal(shape_token_rewards(1.5, lp, lp, beta=0.7), [0, 0, 1.5])

    def test_hand_evaluated(self):
        # kl = [0.2, -0.1]; reward = [-0.1*0.2, 1 - 0.1*(-0.1)]
        out = shape_token_rewards(1.0, np.array([0.0, -0.3]), np.array([-0.2, -0.2]), beta=0.1)
        np.testing.assert_allclose(out, [-0.02, 1.01], atol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            shape_token_rewards(1.0, np.zeros(3), np.zeros(2), 0.1)


class TestBatchNormalize:
    def test_disabled(self):
        x = np.array([3.0, -2.0, 7.0])
        np.testing.assert_array_equal(batch_reward_normalize(x, 5.0, enabled=False), x)

    def test_constant(self):
        np.testing.assert_array_equal(batch_reward_normalize(np.full(5, 1.5), 5.0, True), 0.0)

    def test_two_values(self):
        np.testing.assert_allclose(batch_reward_normalize([0.0, 1.0], 5.0, True), [-1, 1], atol=1e-6)

    def test_clip(self):
        out = batch_reward_normalize([1.0] * 255 + [0.0], 5.0, True)
        assert out[-1] == -5.0

    def test_single_element(self):
        with pytest.raises(ValueError):
            batch_reward_normalize([1.0], 5.0, True)
