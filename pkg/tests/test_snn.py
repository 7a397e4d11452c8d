import numpy as np
import pytest
from pydantic import ValidationError

from safenet.custom_exceptions import DimensionError
from safenet.diffcore import Tape, Tensor, backward, expand, mean, mul, square, sub, sum
from safenet.schemas import LIFConfig
from safenet.snn import LIFNode, LIFState, lif_sequence, lif_step, surrogate_spike_grad
from safenet.train import AdamState, adam_step

CFG = LIFConfig()


def test_strong_input_fires_and_resets():
    spikes, state = lif_step(CFG, LIFState.resting(CFG, (1,)), Tensor([1.0]))
    assert spikes.values[0] == 1.0
    assert state.v[0] == CFG.v_reset


def test_weak_input_charges_then_fires_at_threshold():
    state = LIFState.resting(CFG, (1,))
    spikes, state = lif_step(CFG, state, Tensor([0.4]))
    assert spikes.values[0] == 0.0
    assert state.v[0] == pytest.approx(0.2)

    # H = 0.2 + (0.4 - 0.2) / 2 = 0.3, exactly v_threshold
    spikes, state = lif_step(CFG, state, Tensor([0.4]))
    assert spikes.values[0] == 1.0
    assert state.v[0] == 0.0


def test_output_is_binary(rng: np.random.Generator):
    out = lif_sequence(CFG, Tensor(rng.normal(0.3, 1.0, size=(20, 6))))
    assert set(np.unique(out.values)) <= {0.0, 1.0}


def test_sequence_matches_repeated_steps(rng: np.random.Generator):
    x = rng.normal(0.3, 0.5, size=(15, 4))
    state = LIFState.resting(CFG, (4,))
    stepped = []
    for t in range(15):
        s, state = lif_step(CFG, state, Tensor(x[t]))
        stepped.append(s.values)
    assert np.array_equal(lif_sequence(CFG, Tensor(x)).values, np.stack(stepped))


def test_time_axis(rng: np.random.Generator):
    x = rng.normal(0.3, 0.5, size=(2, 10, 3))
    along_axis_1 = lif_sequence(CFG, Tensor(x), time_axis=1).values
    along_axis_0 = lif_sequence(CFG, Tensor(np.moveaxis(x, 1, 0))).values
    assert np.array_equal(along_axis_1, np.moveaxis(along_axis_0, 0, 1))


def test_surrogate_peaks_at_threshold():
    assert surrogate_spike_grad(CFG, np.array([0.0]))[0] == pytest.approx(CFG.surrogate_alpha / 2)
    far = surrogate_spike_grad(CFG, np.array([-5.0, 5.0]))
    assert np.all(far < 0.05)


def test_step_gradient_is_surrogate_over_tau():
    x = Tensor([0.2], requires_grad=True)
    with Tape() as tape:
        spikes, _ = lif_step(CFG, LIFState.resting(CFG, (1,)), x)
        loss = sum(spikes)
    backward(tape, loss)
    expected = surrogate_spike_grad(CFG, np.array([0.1 - CFG.v_threshold]))[0] / CFG.tau
    assert x.grad is not None
    assert x.grad[0] == pytest.approx(expected)


def test_single_step_sequence_gradient_matches_step():
    x = Tensor([[0.25, 0.9]], requires_grad=True)
    with Tape() as tape:
        loss = sum(lif_sequence(CFG, x))
    backward(tape, loss)
    h = x.values[0] / CFG.tau
    assert x.grad is not None
    assert np.allclose(x.grad[0], surrogate_spike_grad(CFG, h - CFG.v_threshold) / CFG.tau)


def test_gradient_reaches_earlier_steps_through_the_membrane():
    x = Tensor([[0.1], [0.1], [0.1]], requires_grad=True)
    last_step = Tensor([[0.0], [0.0], [1.0]])
    with Tape() as tape:
        loss = sum(mul(lif_sequence(CFG, x), last_step))
    backward(tape, loss)
    assert x.grad is not None
    assert np.all(x.grad[:, 0] > 0)
    assert x.grad[0, 0] < x.grad[1, 0] < x.grad[2, 0]


def test_passthrough_is_identity(rng: np.random.Generator):
    cfg = LIFConfig(passthrough=True)
    x = rng.standard_normal((5, 2))
    assert np.array_equal(lif_sequence(cfg, Tensor(x)).values, x)


def test_step_rejects_mismatched_state():
    with pytest.raises(DimensionError):
        lif_step(CFG, LIFState.resting(CFG, (2,)), Tensor([1.0]))


@pytest.mark.parametrize(
    "fields",
    [
        {"tau": 0.5},
        {"v_threshold": 0.0},
        {"v_reset": 0.5},
    ],
)
def test_config_rejects_invalid_neurons(fields: dict[str, float]):
    with pytest.raises(ValidationError):
        LIFConfig(**fields)  # pyright: ignore[reportArgumentType]


def test_node_counts_spikes():
    node = LIFNode(CFG, time_axis=0)
    node(Tensor(np.full((4, 5), 1.0)))
    assert node.firing_rate == 1.0
    assert node.element_count == 20

    node.reset_counters()
    assert node.firing_rate == 0.0


def test_spikes_binary_and_membrane_reset_below_threshold(rng: np.random.Generator):
    state = LIFState.resting(CFG, (10_000,))
    for _ in range(5):
        spikes, state = lif_step(CFG, state, Tensor(rng.normal(0.3, 1.0, size=10_000)))
        assert np.all((spikes.values == 0.0) | (spikes.values == 1.0))
        assert np.all(state.v < CFG.v_threshold)


def test_sequence_is_a_pure_function_of_its_input(rng: np.random.Generator):
    x = Tensor(rng.normal(0.3, 1.0, size=(30, 8)))
    assert np.array_equal(lif_sequence(CFG, x).values, lif_sequence(CFG, x).values)


def train_drive(steps: int = 200, lr: float = 0.01) -> list[float]:
    """Adam on one constant drive per neuron so that half the neurons always fire and half stay silent."""
    target = Tensor(np.tile([1.0, 0.0], 8))
    drive = Tensor(np.full(16, 0.45), requires_grad=True)
    moments = AdamState.zeros([drive])
    losses: list[float] = []
    for step in range(1, steps + 1):
        with Tape() as tape:
            rate = mean(lif_sequence(CFG, expand(drive, axis=0, n=10)), axis=0)
            loss = mean(square(sub(rate, target)))
        losses.append(loss.item())
        backward(tape, loss, [drive])
        adam_step([drive], [drive.grad], moments, step, lr)
    return losses


def test_surrogate_gradient_trains_spiking_neurons():
    losses = train_drive()
    assert losses[0] > 0.1
    assert losses[-1] < 0.1 * losses[0]


def test_hard_threshold_gradient_cannot_train(monkeypatch: pytest.MonkeyPatch):
    monkeypatch.setattr("safenet.snn.surrogate_spike_grad", lambda cfg, u: np.zeros_like(u))
    losses = train_drive()
    assert losses[0] > 0.1
    assert losses == [losses[0]] * len(losses)
