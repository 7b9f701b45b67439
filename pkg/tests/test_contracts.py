import numpy as np
import pytest

from multiswing.contracts import (
    PENALTY, TAKE_OR_PAY, ContractSpec, immediate_reward, penalty_contract, take_or_pay, terminal_value,
)
from multiswing.volume import VolumeConstraints

TOP = take_or_pay(20.0, 0, 1, 20, 25, 30)
PEN = penalty_contract(20.0, 0, 1, 30, Q_A=20, Q_B=25, A=1.0, B=1.0)


def test_immediate_reward_examples():
    assert immediate_reward(TOP, 37.0, 0) == 0.0
    assert immediate_reward(TOP, 20.0, 6) == 0.0
    assert immediate_reward(take_or_pay(19.0, 0, 3, 0, 30, 10), 21.0, 3) == 6.0
    np.testing.assert_allclose(immediate_reward(TOP, np.array([[18.0], [22.0]]), np.array([0, 1])),
                               [[0.0, -2.0], [0.0, 2.0]])


def test_terminal_values():
    assert np.all(terminal_value(TOP, np.array([5.0, 50.0]), np.array([20, 25])) == 0.0)
    assert terminal_value(PEN, 20.0, 18) == -40.0
    assert terminal_value(PEN, 20.0, 22) == 0.0
    assert terminal_value(PEN, 10.0, 27) == -20.0
    two = penalty_contract(20.0, 0, 1, 30, Q_A=20, Q_B=25, A=2.0, B=3.0)
    assert terminal_value(two, 10.0, 17) == -60.0
    assert terminal_value(two, 10.0, 26) == -30.0


def test_contract_invariants():
    assert TOP.kind == TAKE_OR_PAY and TOP.volume.firm
    assert PEN.kind == PENALTY and not PEN.volume.firm
    with pytest.raises(ValueError):
        ContractSpec(TAKE_OR_PAY, 20.0, VolumeConstraints(0, 1, 20, 25, 30, firm=False))
    with pytest.raises(ValueError):
        penalty_contract(20.0, 0, 1, 30, Q_A=25, Q_B=20)
    assert ContractSpec.from_dict(PEN.to_dict()) == PEN
