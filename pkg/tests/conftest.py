import numpy as np
import pytest

from seqsalience.lstm import LSTMConfig, ModelScorer
from seqsalience.synthetic import make_spike_dataset
from seqsalience.trainer import TrainConfig, evaluate_accuracy, train


@pytest.fixture(scope="session")
def spike_model():
    """A small LSTM trained on the spike dataset, shared across test modules."""
    train_set = make_spike_dataset(400, seed=0)
    val_set = make_spike_dataset(100, seed=1)
    test_set = make_spike_dataset(100, seed=2)
    config = LSTMConfig(input_dim=1, hidden_units=16, num_layers=1, num_classes=2)
    tc = TrainConfig(lr=0.01, minibatch=50, epochs=12, dropout=0.1, seed=0)
    params, history = train(train_set, val_set, config, tc)
    eval_config = LSTMConfig(1, 16, 1, 2, dropout=0.1)
    accuracy = evaluate_accuracy(test_set, params, eval_config)
    assert accuracy >= 0.97, f"spike fixture failed to train (accuracy {accuracy})"
    return {
        "params": params,
        "config": eval_config,
        "scorer": ModelScorer(params, eval_config),
        "test_set": test_set,
        "window": (40, 48),
    }
